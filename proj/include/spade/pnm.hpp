// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spade/mask.hpp"
#include "spade/tensor.hpp"

namespace spade {

/// Malformed or truncated PNM data; the message names the byte offset.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Decoded binary PNM raster (P5 gray or P6 RGB, maxval <= 255).
struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  int maxval = 255;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

namespace detail {

class PnmReader {
 public:
  PnmReader(const std::vector<std::uint8_t>& bytes, std::size_t start) : b_(bytes), pos_(start) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      const char c = static_cast<char>(b_[pos_]);
      if (c == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
        ++pos_;
      } else {
        return;
      }
    }
  }

  int read_uint(const char* field) {
    skip_space_and_comments();
    if (pos_ >= b_.size()) throw ParseError(std::string("unexpected end of header reading ") + field, pos_);
    const std::size_t start = pos_;
    long long v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000) throw ParseError(std::string("header value too large for ") + field, start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("expected integer for ") + field, start);
    return static_cast<int>(v);
  }

  /// Exactly one whitespace byte separates maxval from the raster.
  void single_space() {
    if (pos_ >= b_.size()) throw ParseError("unexpected end of header before raster", pos_);
    const char c = static_cast<char>(b_[pos_]);
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r') throw ParseError("expected whitespace after maxval", pos_);
    ++pos_;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& header, const std::vector<std::uint8_t>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace detail

/// Reads a binary PGM (P5) or PPM (P6) with maxval <= 255.
inline PnmImage decode_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2) throw ParseError("file too short for a PNM magic number", bytes.size());
  if (bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) throw ParseError("expected magic P5 or P6", 0);
  PnmImage img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  detail::PnmReader r(bytes, 2);
  img.width = r.read_uint("width");
  img.height = r.read_uint("height");
  img.maxval = r.read_uint("maxval");
  r.single_space();
  if (img.width < 1 || img.height < 1) throw ParseError("empty raster", r.pos());
  if (img.maxval < 1 || img.maxval > 255) throw ParseError("maxval must be in [1, 255]", r.pos());
  const std::size_t need = static_cast<std::size_t>(img.width) * img.height * img.channels;
  const std::size_t have = bytes.size() - r.pos();
  if (have < need) {
    throw ParseError("truncated raster: expected " + std::to_string(need) + " bytes, found " + std::to_string(have),
                     bytes.size());
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()),
                    bytes.begin() + static_cast<std::ptrdiff_t>(r.pos() + need));
  return img;
}

inline PnmImage read_pnm(const std::string& path) { return decode_pnm(detail::read_file(path)); }

inline void write_pnm(const std::string& path, const PnmImage& img) {
  if (img.channels != 1 && img.channels != 3) throw DimensionError("write_pnm: channels must be 1 or 3");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw DimensionError("write_pnm: pixel buffer does not match dimensions");
  }
  std::ostringstream h;
  h << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n" << img.maxval << "\n";
  detail::write_file(path, h.str(), img.pixels);
}

/// [-1, 1] -> byte: round((v + 1) / 2 * 255), clamped.
inline std::uint8_t quantize(float v) {
  const double x = std::clamp((static_cast<double>(v) + 1.0) * 0.5 * 255.0, 0.0, 255.0);
  return static_cast<std::uint8_t>(std::lround(x));
}

inline float dequantize(std::uint8_t b) { return static_cast<float>(b) / 255.0f * 2.0f - 1.0f; }

/// Image tensor [1, 3, H, W] in [-1, 1] to an 8-bit PPM raster.
inline PnmImage image_to_pnm(const Tensor<float>& image, int n = 0) {
  const Shape s = image.shape();
  if (s.c != 3) throw DimensionError("image_to_pnm: expected 3 channels, got " + s.str());
  PnmImage img{s.w, s.h, 3, 255, {}};
  img.pixels.resize(static_cast<std::size_t>(s.w) * s.h * 3);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < 3; ++c) {
        img.pixels[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] = quantize(image.at(n, c, y, x));
      }
  return img;
}

inline Tensor<float> pnm_to_image(const PnmImage& img) {
  if (img.channels != 3) throw DimensionError("pnm_to_image: expected an RGB (P6) raster");
  Tensor<float> t(Shape{1, 3, img.height, img.width});
  const double scale = 255.0 / img.maxval;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double b = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] * scale;
        t.values()[t.offset(0, c, y, x)] = dequantize(static_cast<std::uint8_t>(std::lround(b)));
      }
  return t;
}

inline PnmImage mask_to_pnm(const SegMask& m) {
  if (m.num_labels() > 256) throw ConfigError("mask_to_pnm: at most 256 labels fit in 8 bits");
  PnmImage img{m.width(), m.height(), 1, 255, {}};
  img.pixels.reserve(m.labels().size());
  for (const int l : m.labels()) img.pixels.push_back(static_cast<std::uint8_t>(l));
  return img;
}

/// Labels >= num_labels raise std::out_of_range.
inline SegMask pnm_to_mask(const PnmImage& img, int num_labels) {
  if (img.channels != 1) throw DimensionError("pnm_to_mask: expected a gray (P5) raster");
  std::vector<int> labels(img.pixels.begin(), img.pixels.end());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_labels) {
      throw std::out_of_range("mask label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) +
                              " is not below num_labels=" + std::to_string(num_labels));
    }
  }
  return SegMask(img.height, img.width, num_labels, std::move(labels));
}

inline void save_mask(const std::string& path, const SegMask& m) { write_pnm(path, mask_to_pnm(m)); }
inline SegMask load_mask(const std::string& path, int num_labels) { return pnm_to_mask(read_pnm(path), num_labels); }
inline void save_image(const std::string& path, const Tensor<float>& image, int n = 0) {
  write_pnm(path, image_to_pnm(image, n));
}
inline Tensor<float> load_image(const std::string& path) { return pnm_to_image(read_pnm(path)); }

struct ImagePair {
  SegMask mask;
  Tensor<float> image;
};

/// Writes image as P6 and mask as P5.
inline void save_pair(const std::string& image_path, const std::string& mask_path, const SegMask& mask,
                      const Tensor<float>& image) {
  if (image.shape().h != mask.height() || image.shape().w != mask.width()) {
    throw DimensionError("save_pair: image " + image.shape().str() + " and mask " + std::to_string(mask.height()) +
                         "x" + std::to_string(mask.width()) + " differ");
  }
  save_image(image_path, image);
  save_mask(mask_path, mask);
}

inline ImagePair load_pair(const std::string& image_path, const std::string& mask_path, int num_labels) {
  ImagePair p{load_mask(mask_path, num_labels), load_image(image_path)};
  if (p.image.shape().h != p.mask.height() || p.image.shape().w != p.mask.width()) {
    throw DimensionError("load_pair: '" + image_path + "' is " + std::to_string(p.image.shape().w) + "x" +
                         std::to_string(p.image.shape().h) + " but '" + mask_path + "' is " +
                         std::to_string(p.mask.width()) + "x" + std::to_string(p.mask.height()));
  }
  return p;
}

}  // namespace spade
