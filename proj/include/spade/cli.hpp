// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "spade/ablation.hpp"
#include "spade/pnm.hpp"
#include "spade/trainer.hpp"
#include "spade/washaway.hpp"

namespace spade {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace detail {

/// Raised for user mistakes detected after flag parsing (exit code 1).
class CliUsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path)) throw CliUsageError(std::string(what) + " '" + path + "' does not exist");
}

inline bool same_meta(const DatasetMeta& a, const DatasetMeta& b) {
  return a.master_seed == b.master_seed && a.num_labels == b.num_labels && a.resolution == b.resolution &&
         a.num_train == b.num_train && a.num_val == b.num_val && a.synth.noise_amp == b.synth.noise_amp &&
         a.synth.stripe_amp == b.synth.stripe_amp && a.synth.tint_amp == b.synth.tint_amp &&
         a.synth.max_shapes == b.synth.max_shapes;
}

/// Generates the dataset under cfg.data_path when absent; refuses a
/// dataset generated with different parameters.
inline void ensure_dataset(const TrainConfig& cfg, std::ostream& out) {
  namespace fs = std::filesystem;
  if (!fs::exists(fs::path(cfg.data_path) / "index.txt")) {
    out << "generating dataset under " << cfg.data_path << "\n";
    write_dataset(cfg.data_path, cfg.data);
    return;
  }
  if (!same_meta(read_index(cfg.data_path).meta, cfg.data)) {
    throw ConfigError("dataset at '" + cfg.data_path + "' was generated with different data.* settings");
  }
}

inline int run_train(const std::string& config_path, const std::string& resume, std::string ckpt_out,
                     std::ostream& out) {
  require_file(config_path, "config file");
  if (!resume.empty()) require_file(resume, "checkpoint");
  TrainConfig cfg = load_config(config_path);
  cfg.validate();
  if (ckpt_out.empty()) ckpt_out = cfg.checkpoint.empty() ? "checkpoint.spde" : cfg.checkpoint;
  ensure_dataset(cfg, out);
  Trainer tr(cfg, load_dataset(cfg.data_path, "train"));
  if (!resume.empty()) {
    tr.restore(load_checkpoint(resume));
    out << "resumed at step " << tr.step() << "\n";
  }
  Dataset val;
  if (cfg.eval_every > 0) val = load_dataset(cfg.data_path, "val");
  const std::uint64_t spe = tr.steps_per_epoch();
  tr.run(out, [&](const StepReport& r) {
    const std::uint64_t done = r.step + 1;
    if (cfg.eval_every <= 0 || done % spe != 0) return;
    const std::uint64_t epoch = done / spe;
    if (epoch % static_cast<std::uint64_t>(cfg.eval_every) != 0) return;
    const EvalReport e = evaluate(tr.models(), val, cfg.eval_images, cfg.seed);
    char buf[160];
    std::snprintf(buf, sizeof buf, "eval epoch=%llu miou=%.6f accu=%.6f fd_star=%.6f",
                  static_cast<unsigned long long>(epoch), e.miou, e.accu, e.fd_star);
    out << buf << "\n";
  });
  save_checkpoint(ckpt_out, tr.bundle());
  out << "checkpoint " << ckpt_out << "\n";
  return kExitOk;
}

inline int run_eval(const std::string& ckpt, const std::string& data, const std::string& report, std::ostream& out) {
  require_file(ckpt, "checkpoint");
  const CheckpointBundle c = load_checkpoint(ckpt);
  auto m = models_from_checkpoint(c);
  const Dataset val = load_dataset(data, "val");
  const EvalReport e = evaluate(*m, val, m->config().eval_images, m->config().seed);
  const std::string csv = write_eval_report(report, e);
  out << std::setprecision(6) << "miou=" << e.miou << " accu=" << e.accu << " fd_star=" << e.fd_star
      << " num_images=" << e.num_images << "\nreport " << report << "\nconfusion " << csv << "\n";
  return kExitOk;
}

inline int run_sample(const std::string& ckpt, const std::string& mask_path, int num, const std::string& style,
                      const std::string& out_dir, std::uint64_t seed, std::ostream& out, std::ostream& err) {
  require_file(ckpt, "checkpoint");
  require_file(mask_path, "mask");
  if (!style.empty()) require_file(style, "style image");
  if (num < 1) throw CliUsageError("--num must be >= 1");
  auto m = models_from_checkpoint(load_checkpoint(ckpt));
  const TrainConfig& cfg = m->config();
  const SegMask mask = load_mask(mask_path, cfg.data.num_labels);
  if (mask.height() != cfg.data.resolution || mask.width() != cfg.data.resolution) {
    throw DimensionError("mask is " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                         ", checkpoint expects " + std::to_string(cfg.data.resolution));
  }
  Rng rng(seed);
  Posterior<float> post;
  if (!style.empty()) {
    if (m->encoder() == nullptr) throw ConfigError("--style needs a checkpoint trained with train.use_encoder = true");
    NoGradGuard ng;
    post = (*m->encoder())(load_image(style));
  } else if (!cfg.gen.uses_z()) {
    err << "warning: generator arch '" << to_string(cfg.gen.arch) << "' ignores z; samples will be identical\n";
  }
  std::filesystem::create_directories(out_dir);
  for (int k = 0; k < num; ++k) {
    Tensor<float> z;
    if (cfg.gen.uses_z()) {
      if (!style.empty()) {
        NoGradGuard ng;
        z = reparameterize(post.mu, post.logvar, rng);
      } else {
        z = sample_z(1, cfg.gen.z_dim, rng);
      }
    }
    const Tensor<float> img = synthesize_images(*m, {mask}, z);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03d.ppm", k);
    const std::string path = (std::filesystem::path(out_dir) / name).string();
    save_image(path, img);
    out << path << "\n";
  }
  return kExitOk;
}

inline int run_washaway(const std::string& path, int labels, std::uint64_t seed, std::ostream& out) {
  const WashawayReport r = run_washaway_demo(path, labels, seed);
  out << r.to_text();
  return kExitOk;
}

inline int run_ablate(const std::string& config_path, const std::string& axis_name, int num_seeds,
                      const std::string& table_path, std::ostream& out) {
  require_file(config_path, "config file");
  const AblationAxis axis = parse_axis(axis_name);
  if (num_seeds < 1) throw CliUsageError("--seeds must be >= 1");
  TrainConfig cfg = load_config(config_path);
  cfg.validate();
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < num_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  out << "variant,seed,miou,accu,fd_star,param_count\n";
  const auto rows = run_ablation(cfg, axis, seeds, [&](const AblationRow& r) {
    out << std::setprecision(6) << r.variant << "," << r.seed << "," << r.miou << "," << r.accu << "," << r.fd_star
        << "," << r.param_count << std::endl;
  });
  if (!table_path.empty()) {
    std::ofstream f(table_path);
    if (!f) throw std::runtime_error("cannot write '" + table_path + "'");
    f << ablation_table(rows);
  }
  return kExitOk;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Returns 0 on success, 1 on usage
/// errors (unknown flags, missing input files), 2 on runtime failures.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"Semantic image synthesis with spatially-adaptive normalization", "spade"};
  app.require_subcommand(1);

  std::string config, resume, ckpt_out;
  auto* train = app.add_subcommand("train", "train a generator/discriminator pair");
  train->add_option("--config", config, "config file")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--ckpt-out", ckpt_out, "checkpoint to write (default: train.checkpoint)");

  std::string ckpt, data, report;
  auto* eval = app.add_subcommand("eval", "oracle mIoU, accuracy and FD* on the val split");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--data", data, "dataset root")->required();
  eval->add_option("--out", report, "report path")->required();

  std::string mask, style, sample_dir = ".";
  int num = 1;
  std::uint64_t sample_seed = 1;
  auto* sample = app.add_subcommand("sample", "draw images for one mask");
  sample->add_option("--ckpt", ckpt, "checkpoint")->required();
  sample->add_option("--mask", mask, "PGM label map")->required();
  sample->add_option("--num", num, "number of samples")->required();
  sample->add_option("--style", style, "PPM style image (needs an encoder checkpoint)");
  sample->add_option("--out", sample_dir, "output directory");
  sample->add_option("--seed", sample_seed, "sampling seed");

  std::string wash_out;
  int wash_labels = 6;
  std::uint64_t wash_seed = 1;
  auto* wash = app.add_subcommand("washaway", "uniform-mask normalization report");
  wash->add_option("--out", wash_out, "report path")->required();
  wash->add_option("--labels", wash_labels, "label count");
  wash->add_option("--seed", wash_seed, "weight seed");

  std::string axis, table;
  int seeds = 5;
  auto* ablate = app.add_subcommand("ablate", "train and compare variants along one axis");
  ablate->add_option("--config", config, "base config file")->required();
  ablate->add_option("--axis", axis, "input|norm|kernel|width|concat")
      ->required()
      ->check(CLI::IsMember({"input", "norm", "kernel", "width", "concat"}));
  ablate->add_option("--seeds", seeds, "number of consecutive seeds starting at train.seed");
  ablate->add_option("--out", table, "CSV table path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err), kExitOk;  // --help
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train) return detail::run_train(config, resume, ckpt_out, out);
    if (*eval) return detail::run_eval(ckpt, data, report, out);
    if (*sample) return detail::run_sample(ckpt, mask, num, style, sample_dir, sample_seed, out, err);
    if (*wash) return detail::run_washaway(wash_out, wash_labels, wash_seed, out);
    if (*ablate) return detail::run_ablate(config, axis, seeds, table, out);
  } catch (const detail::CliUsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace spade
