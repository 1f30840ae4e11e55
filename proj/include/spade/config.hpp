// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spade/data.hpp"
#include "spade/losses.hpp"
#include "spade/networks.hpp"
#include "spade/optim.hpp"

namespace spade {

/// Ordered `section.key = value` pairs; `#` starts a comment.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text, const std::string& origin = "<config>") {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      cfg.entries_.emplace_back(std::move(key), std::move(value), lineno);
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  struct Entry {
    std::string key;
    std::string value;
    int line;
    Entry(std::string k, std::string v, int l) : key(std::move(k)), value(std::move(v)), line(l) {}
  };

  const std::vector<Entry>& entries() const { return entries_; }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::vector<Entry> entries_;
};

struct TrainConfig {
  std::string profile = "desk";
  int epochs = 10;
  int batch_size = 8;
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  AdamHyper adam;
  /// Negative: half of epochs.
  int decay_start_epoch = -1;
  std::uint64_t seed = 1;
  /// Evaluate on the val split every N epochs; 0 disables.
  int eval_every = 0;
  int log_every = 1;
  bool use_encoder = false;
  std::string data_path = "data";
  std::string checkpoint = "";
  int eval_images = 64;
  DatasetMeta data;
  GeneratorConfig gen;
  DiscriminatorConfig disc;
  LossWeights loss;

  int decay_start() const { return decay_start_epoch < 0 ? epochs / 2 : decay_start_epoch; }

  static TrainConfig desk() { return {}; }

  /// Paper-scale values for reference; not trainable on a desk CPU.
  static TrainConfig paper() {
    TrainConfig c;
    c.profile = "paper";
    c.epochs = 200;
    c.batch_size = 32;
    c.decay_start_epoch = 100;
    c.data.resolution = 256;
    c.gen.nf = 64;
    c.gen.z_dim = 256;
    c.gen.num_upsample_stages = 6;
    c.gen.mod_hidden = 128;
    c.disc.ndf = 64;
    c.disc.n_layers = 4;
    return c;
  }

  /// Cross-field consistency; throws ConfigError.
  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (lr_g < 0 || lr_d < 0) throw ConfigError("learning rates must be nonnegative");
    if (decay_start() >= epochs) throw ConfigError("train.decay_start_epoch must be < train.epochs");
    if (gen.output_size() != data.resolution) {
      throw ConfigError("gen.num_upsample_stages=" + std::to_string(gen.num_upsample_stages) + " produces " +
                        std::to_string(gen.output_size()) + "px but data.resolution=" + std::to_string(data.resolution));
    }
    if (gen.num_labels != data.num_labels || disc.num_labels != data.num_labels) {
      throw ConfigError("label counts of data, generator and discriminator differ");
    }
    if (use_encoder && !gen.uses_z()) throw ConfigError("train.use_encoder needs a noise-input decoder generator");
    if (data.num_train < batch_size) throw ConfigError("data.num_train is smaller than one batch");
    loss.validate();
  }

  /// Canonical text form; parse(to_text()) reproduces the config.
  std::string to_text() const;
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <class N>
N parse_number(const std::string& v, const std::string& key) {
  std::istringstream in(v);
  N out{};
  in >> out;
  if (!in || !in.eof()) throw ConfigError(key + ": cannot parse '" + v + "' as a number");
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

template <class F>
Setter num(F TrainConfig::*field) {
  return [field](TrainConfig& c, const std::string& v, const std::string& k) { c.*field = parse_number<F>(v, k); };
}

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["train.epochs"] = num(&TrainConfig::epochs);
    t["train.batch_size"] = num(&TrainConfig::batch_size);
    t["train.lr_g"] = num(&TrainConfig::lr_g);
    t["train.lr_d"] = num(&TrainConfig::lr_d);
    t["train.beta1"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.adam.beta1 = parse_number<double>(v, k); };
    t["train.beta2"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.adam.beta2 = parse_number<double>(v, k); };
    t["train.adam_eps"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.adam.eps = parse_number<double>(v, k); };
    t["train.decay_start_epoch"] = num(&TrainConfig::decay_start_epoch);
    t["train.seed"] = num(&TrainConfig::seed);
    t["train.eval_every"] = num(&TrainConfig::eval_every);
    t["train.log_every"] = num(&TrainConfig::log_every);
    t["train.eval_images"] = num(&TrainConfig::eval_images);
    t["train.use_encoder"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.use_encoder = parse_bool(v, k); };
    t["train.checkpoint"] = [](TrainConfig& c, const std::string& v, const std::string&) { c.checkpoint = v; };
    t["data.path"] = [](TrainConfig& c, const std::string& v, const std::string&) { c.data_path = v; };
    t["data.master_seed"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.data.master_seed = parse_number<std::uint64_t>(v, k); };
    t["data.num_labels"] = [](TrainConfig& c, const std::string& v, const std::string& k) {
      const int l = parse_number<int>(v, k);
      c.data.num_labels = c.gen.num_labels = c.disc.num_labels = l;
    };
    t["data.resolution"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.data.resolution = parse_number<int>(v, k); };
    t["data.num_train"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.data.num_train = parse_number<int>(v, k); };
    t["data.num_val"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.data.num_val = parse_number<int>(v, k); };
    t["data.noise_amp"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.data.synth.noise_amp = parse_number<float>(v, k); };
    t["data.stripe_amp"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.data.synth.stripe_amp = parse_number<float>(v, k); };
    t["data.tint_amp"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.data.synth.tint_amp = parse_number<float>(v, k); };
    t["data.max_shapes"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.data.synth.max_shapes = parse_number<int>(v, k); };
    t["gen.arch"] = [](TrainConfig& c, const std::string& v, const std::string&) { c.gen.arch = parse_arch(v); };
    t["gen.input_mode"] = [](TrainConfig& c, const std::string& v, const std::string&) { c.gen.input_mode = parse_input_mode(v); };
    t["gen.norm"] = [](TrainConfig& c, const std::string& v, const std::string&) { c.gen.norm = parse_norm_kind(v); };
    t["gen.nf"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.gen.nf = parse_number<int>(v, k); };
    t["gen.z_dim"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.gen.z_dim = parse_number<int>(v, k); };
    t["gen.num_upsample_stages"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.gen.num_upsample_stages = parse_number<int>(v, k); };
    t["gen.mod_kernel"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.gen.mod_kernel = parse_number<int>(v, k); };
    t["gen.mod_hidden"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.gen.mod_hidden = parse_number<int>(v, k); };
    t["gen.encdec_blocks"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.gen.encdec_blocks = parse_number<int>(v, k); };
    t["gen.spectral"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.gen.spectral = parse_bool(v, k); };
    t["gen.spectral_modulation"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.gen.spectral_modulation = parse_bool(v, k); };
    t["disc.ndf"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.disc.ndf = parse_number<int>(v, k); };
    t["disc.n_layers"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.disc.n_layers = parse_number<int>(v, k); };
    t["disc.num_scales"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.disc.num_scales = parse_number<int>(v, k); };
    t["disc.spectral"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.disc.spectral = parse_bool(v, k); };
    t["loss.w_gan"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.loss.w_gan = parse_number<double>(v, k); };
    t["loss.w_feat"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.loss.w_feat = parse_number<double>(v, k); };
    t["loss.w_perc"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.loss.w_perc = parse_number<double>(v, k); };
    t["loss.w_kld"] = [](TrainConfig& c, const std::string& v, const std::string& k) { c.loss.w_kld = parse_number<double>(v, k); };
    return t;
  }();
  return table;
}

}  // namespace detail

/// Applies `profile = desk|paper` first (when present), then every other
/// key in file order. Unknown keys raise ConfigError.
inline TrainConfig config_from_kv(const KvConfig& kv) {
  TrainConfig c;
  for (const auto& e : kv.entries()) {
    if (e.key != "profile") continue;
    if (e.value == "desk") c = TrainConfig::desk();
    else if (e.value == "paper") c = TrainConfig::paper();
    else throw ConfigError("line " + std::to_string(e.line) + ": unknown profile '" + e.value + "'");
  }
  const auto& setters = detail::config_setters();
  for (const auto& e : kv.entries()) {
    if (e.key == "profile") continue;
    auto it = setters.find(e.key);
    if (it == setters.end()) throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    it->second(c, e.value, e.key);
  }
  return c;
}

inline TrainConfig load_config(const std::string& path) { return config_from_kv(KvConfig::load(path)); }
inline TrainConfig parse_config(const std::string& text) { return config_from_kv(KvConfig::parse(text)); }

inline std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o.precision(17);
  const auto b = [](bool v) { return v ? "true" : "false"; };
  o << "profile = " << profile << "\n"
    << "train.epochs = " << epochs << "\ntrain.batch_size = " << batch_size << "\ntrain.lr_g = " << lr_g
    << "\ntrain.lr_d = " << lr_d << "\ntrain.beta1 = " << adam.beta1 << "\ntrain.beta2 = " << adam.beta2
    << "\ntrain.adam_eps = " << adam.eps << "\ntrain.decay_start_epoch = " << decay_start_epoch
    << "\ntrain.seed = " << seed << "\ntrain.eval_every = " << eval_every << "\ntrain.log_every = " << log_every
    << "\ntrain.eval_images = " << eval_images << "\ntrain.use_encoder = " << b(use_encoder) << "\n";
  if (!checkpoint.empty()) o << "train.checkpoint = " << checkpoint << "\n";
  o << "data.path = " << data_path << "\ndata.master_seed = " << data.master_seed
    << "\ndata.num_labels = " << data.num_labels << "\ndata.resolution = " << data.resolution
    << "\ndata.num_train = " << data.num_train << "\ndata.num_val = " << data.num_val
    << "\ndata.noise_amp = " << data.synth.noise_amp << "\ndata.stripe_amp = " << data.synth.stripe_amp
    << "\ndata.tint_amp = " << data.synth.tint_amp << "\ndata.max_shapes = " << data.synth.max_shapes
    << "\ngen.arch = " << to_string(gen.arch) << "\ngen.input_mode = " << to_string(gen.input_mode)
    << "\ngen.norm = " << to_string(gen.norm) << "\ngen.nf = " << gen.nf << "\ngen.z_dim = " << gen.z_dim
    << "\ngen.num_upsample_stages = " << gen.num_upsample_stages << "\ngen.mod_kernel = " << gen.mod_kernel
    << "\ngen.mod_hidden = " << gen.mod_hidden << "\ngen.encdec_blocks = " << gen.encdec_blocks
    << "\ngen.spectral = " << b(gen.spectral) << "\ngen.spectral_modulation = " << b(gen.spectral_modulation)
    << "\ndisc.ndf = " << disc.ndf << "\ndisc.n_layers = " << disc.n_layers << "\ndisc.num_scales = " << disc.num_scales
    << "\ndisc.spectral = " << b(disc.spectral) << "\nloss.w_gan = " << loss.w_gan << "\nloss.w_feat = " << loss.w_feat
    << "\nloss.w_perc = " << loss.w_perc << "\nloss.w_kld = " << loss.w_kld << "\n";
  return o.str();
}

}  // namespace spade
