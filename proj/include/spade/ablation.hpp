// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spade/trainer.hpp"

namespace spade {

enum class AblationAxis { input, norm, kernel, width, concat };

inline AblationAxis parse_axis(const std::string& s) {
  if (s == "input") return AblationAxis::input;
  if (s == "norm") return AblationAxis::norm;
  if (s == "kernel") return AblationAxis::kernel;
  if (s == "width") return AblationAxis::width;
  if (s == "concat") return AblationAxis::concat;
  throw ConfigError("unknown ablation axis '" + s + "' (expected input|norm|kernel|width|concat)");
}

inline std::size_t generator_param_count(const GeneratorConfig& g) {
  Rng rng(0);
  Generator<float> gen(g, rng);
  return gen.param_count();
}

/// The nf in [1, 4 * base.nf] whose `arch` generator has the parameter
/// count closest to the SPADE generator of `base`; ties go to the smaller nf.
inline int matched_width(const GeneratorConfig& base, Arch arch) {
  GeneratorConfig ref = base;
  ref.arch = Arch::spade;
  const auto target = static_cast<double>(generator_param_count(ref));
  int best = base.nf;
  double best_gap = 1e300;
  for (int nf = 1; nf <= 4 * base.nf; ++nf) {
    GeneratorConfig g = base;
    g.arch = arch;
    g.nf = nf;
    const double gap = std::abs(static_cast<double>(generator_param_count(g)) - target);
    if (gap < best_gap) best_gap = gap, best = nf;
  }
  return best;
}

struct AblationVariant {
  std::string name;
  TrainConfig cfg;
};

/// Variants along one axis; everything not on the axis stays at `base`.
inline std::vector<AblationVariant> ablation_variants(const TrainConfig& base, AblationAxis axis) {
  std::vector<AblationVariant> out;
  auto add = [&](const std::string& name, const std::function<void(TrainConfig&)>& edit) {
    TrainConfig c = base;
    c.use_encoder = false;
    edit(c);
    out.push_back({name, c});
  };
  switch (axis) {
    case AblationAxis::input:
      add("noise", [](TrainConfig& c) { c.gen.input_mode = InputMode::noise; });
      add("segmap", [](TrainConfig& c) { c.gen.input_mode = InputMode::segmap; });
      break;
    case AblationAxis::norm:
      for (NormKind k : {NormKind::batch, NormKind::instance, NormKind::positional}) {
        add(to_string(k), [k](TrainConfig& c) { c.gen.norm = k; });
      }
      break;
    case AblationAxis::kernel:
      for (int k : {1, 3}) {
        add("kernel" + std::to_string(k), [k](TrainConfig& c) { c.gen.mod_kernel = k; });
      }
      break;
    case AblationAxis::width:
      for (int nf : {base.gen.nf / 2, base.gen.nf, base.gen.nf * 3 / 2}) {
        add("nf" + std::to_string(nf), [nf](TrainConfig& c) { c.gen.nf = nf; });
      }
      break;
    case AblationAxis::concat: {
      const int concat_nf = matched_width(base.gen, Arch::concat);
      add("spade", [](TrainConfig& c) { c.gen.arch = Arch::spade; });
      add("concat", [concat_nf](TrainConfig& c) {
        c.gen.arch = Arch::concat;
        c.gen.nf = concat_nf;
      });
      add("encdec", [](TrainConfig& c) { c.gen.arch = Arch::encdec; });
      add("encdec_spade", [](TrainConfig& c) { c.gen.arch = Arch::encdec_spade; });
      break;
    }
  }
  return out;
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double miou = 0, accu = 0, fd_star = 0;
  std::size_t param_count = 0;
};

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,seed,miou,accu,fd_star,param_count\n" << std::setprecision(6);
  for (const auto& r : rows) {
    os << r.variant << "," << r.seed << "," << r.miou << "," << r.accu << "," << r.fd_star << "," << r.param_count << "\n";
  }
  return os.str();
}

/// Trains every variant once per seed on the same synthetic splits and
/// evaluates each on the validation split with an evaluation seed equal to
/// the training seed.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base, AblationAxis axis,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  const Dataset train = synthesize(base.data, base.data.num_train, kTrainSalt);
  const Dataset val = synthesize(base.data, base.data.num_val, kValSalt);
  std::vector<AblationRow> rows;
  for (const std::uint64_t seed : seeds) {
    for (const auto& v : ablation_variants(base, axis)) {
      TrainConfig cfg = v.cfg;
      cfg.seed = seed;
      cfg.log_every = 0;
      Trainer tr(cfg, train);
      std::ostringstream sink;
      tr.run(sink);
      const EvalReport e = evaluate(tr.models(), val, cfg.eval_images, seed);
      AblationRow r{v.name, seed, e.miou, e.accu, e.fd_star, tr.models().generator().param_count()};
      if (on_row) on_row(r);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

}  // namespace spade
