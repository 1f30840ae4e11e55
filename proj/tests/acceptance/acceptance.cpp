// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and
// budgets are pinned below; run with criterion numbers to select a subset.
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "spade/spade.hpp"

using namespace spade;

namespace {

// criterion 1
constexpr double kWashawayInstanceL2 = 1e-5;
constexpr double kWashawaySpadeDiff = 1e-6;
constexpr double kWashawaySeconds = 1.0;
// criterion 2
constexpr double kReductionTol = 1e-6;
constexpr int kReductionSeeds = 10;
// criterion 3
constexpr double kLayerGradTol = 1e-4;
constexpr double kNetworkGradTol = 1e-3;
constexpr double kGradSuiteSeconds = 120.0;
// criterion 4
constexpr double kPostNormMean = 1e-6;
constexpr double kPostNormStd = 1e-3;
// criterion 5
constexpr double kSigmaRel = 0.02;
constexpr int kSpectralWeights = 10;
constexpr int kPowerIterations = 200;
// criterion 6
constexpr double kClosedFormTol = 1e-6;
// criterion 7
constexpr int kAblationSeeds = 5;
constexpr int kAblationWinsNeeded = 4;
constexpr std::uint64_t kAblationSteps = 600;
constexpr double kRunSeconds = 15 * 60.0;
// criterion 8
constexpr int kSamplesK = 5;
constexpr double kSampleDiff = 1e-3;
constexpr int kStyleSeeds = 5;
constexpr int kStyleWinsNeeded = 4;
constexpr int kStylePairs = 32;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

SegMask random_mask(int h, int w, int labels, Rng& rng) {
  std::vector<int> v(static_cast<std::size_t>(h) * w);
  for (auto& l : v) l = rng.uniform_int(0, labels - 1);
  return SegMask(h, w, labels, std::move(v));
}

// ---------------------------------------------------------------------------

Outcome washaway() {
  const auto t0 = std::chrono::steady_clock::now();
  const WashawayReport r = washaway_report(6, 8, 1);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  for (const double v : r.instance_l2) worst = std::max(worst, v);
  const bool pass = worst < kWashawayInstanceL2 && r.min_pairwise_spade_diff > kWashawaySpadeDiff &&
                    r.nonuniform_instance_l2 > kWashawayInstanceL2 && secs < kWashawaySeconds;
  return {pass, "max instance L2 " + fmt("%.3g", worst) + ", min SPADE pair diff " +
                    fmt("%.3g", r.min_pairwise_spade_diff) + ", control " + fmt("%.3g", r.nonuniform_instance_l2) +
                    ", " + fmt("%.3f", secs) + " s"};
}

// Hand-written affine normalization over the groups of `kind`.
std::vector<double> manual_cbn(const Tensor<double>& h, const std::vector<double>& gamma, const std::vector<double>& beta,
                               bool per_instance) {
  const Shape s = h.shape();
  std::vector<double> out(h.numel());
  const std::size_t plane = s.plane();
  for (int c = 0; c < s.c; ++c) {
    for (int n0 = 0; n0 < (per_instance ? s.n : 1); ++n0) {
      const int n_lo = per_instance ? n0 : 0, n_hi = per_instance ? n0 + 1 : s.n;
      double m = 0, v = 0, cnt = 0;
      for (int n = n_lo; n < n_hi; ++n)
        for (std::size_t i = 0; i < plane; ++i) m += h.values()[h.offset(n, c, 0, 0) + i], ++cnt;
      m /= cnt;
      for (int n = n_lo; n < n_hi; ++n)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = h.values()[h.offset(n, c, 0, 0) + i] - m;
          v += d * d;
        }
      const double sd = std::sqrt(v / cnt + kNormEps);
      for (int n = n_lo; n < n_hi; ++n)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t k = h.offset(n, c, 0, 0) + i;
          out[k] = gamma[static_cast<std::size_t>(c)] * (h.values()[k] - m) / sd + beta[static_cast<std::size_t>(c)];
        }
    }
  }
  return out;
}

SpadeLayer<double> make_spade(int labels, int channels, NormKind kind, std::uint64_t seed) {
  Rng rng(seed);
  SpadeConfig c;
  c.num_labels = labels;
  c.channels = channels;
  c.hidden = 5;
  c.kernel = 1;
  c.norm = kind;
  return SpadeLayer<double>(c, rng);
}

Outcome reductions() {
  double worst_cbn = 0.0, worst_adain = 0.0;
  const int L = 4, C = 3;
  for (std::uint64_t seed = 1; seed <= kReductionSeeds; ++seed) {
    const int label = static_cast<int>(seed % L);
    Rng rng(seed * 7919);
    {
      // uniform mask + 1x1 modulation convs: the fields are constant over space
      auto spade = make_spade(L, C, NormKind::batch, seed);
      const auto h = oracle::random_tensor(Shape{3, C, 5, 5}, rng, false, 2.0);
      const std::vector<SegMask> masks(3, SegMask::uniform(5, 5, L, label));
      const MaskPyramid<double> pyr(std::span<const SegMask>(masks), 0);
      const auto field = spade.modulation(pyr.full());
      ConditionalBatchNorm<double> cbn(L, C);
      std::vector<double> g(C), b(C);
      for (int c = 0; c < C; ++c) {
        g[c] = cbn.gamma().values()[label * C + c] = field.gamma.at(0, c, 0, 0);
        b[c] = cbn.beta().values()[label * C + c] = field.beta.at(0, c, 0, 0);
      }
      const auto via_spade = spade(h, pyr).values();
      worst_cbn = std::max({worst_cbn, oracle::max_abs_diff(via_spade, cbn(h, label).values()),
                            oracle::max_abs_diff(via_spade, manual_cbn(h, g, b, false))});
    }
    {
      auto spade = make_spade(L, C, NormKind::instance, seed);
      const auto h = oracle::random_tensor(Shape{1, C, 6, 5}, rng, false, 3.0);
      const SegMask mask = SegMask::uniform(6, 5, L, label);
      const auto field = spade.modulation(mask.onehot<double>());
      ChannelStats<double> style;
      for (int c = 0; c < C; ++c) {
        style.sigma.push_back(field.gamma.at(0, c, 0, 0));
        style.mu.push_back(field.beta.at(0, c, 0, 0));
      }
      const auto via_spade = spade(h, mask.onehot<double>()).values();
      worst_adain = std::max({worst_adain, oracle::max_abs_diff(via_spade, adain(h, style).values()),
                              oracle::max_abs_diff(via_spade, manual_cbn(h, style.sigma, style.mu, true))});
    }
  }
  return {worst_cbn < kReductionTol && worst_adain < kReductionTol,
          "max |SPADE - CBN| " + fmt("%.3g", worst_cbn) + ", max |SPADE - AdaIN| " + fmt("%.3g", worst_adain) +
              " over " + std::to_string(kReductionSeeds) + " seeds"};
}

// ---------------------------------------------------------------------------

struct GradCase {
  std::string name;
  double tol;
  std::function<GradCheckReport(double)> run;
};

std::vector<Tensor<double>> with_params(std::vector<Tensor<double>> wrt, Registry<double>& reg) {
  for (auto& p : reg.params) wrt.push_back(p.tensor);
  return wrt;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<GradCase> cases;
  auto opts = [](double tol, std::size_t coords = 64) {
    GradCheckOptions o;
    o.tol = tol;
    o.max_coords_per_tensor = coords;
    return o;
  };

  cases.push_back({"conv2d", kLayerGradTol, [&](double tol) {
                     Rng rng(1);
                     Conv2d<double> conv(3, 4, 3, 2, 1, rng, true);
                     auto x = oracle::random_tensor(Shape{2, 3, 7, 7}, rng, true);
                     Registry<double> reg;
                     conv.visit(reg, "c");
                     for (int i = 0; i < 3; ++i) reg.update_spectral();
                     const auto c = oracle::random_tensor(Shape{2, 4, 4, 4}, rng);
                     return grad_check([&] { return sum(mul(conv(x), c)); }, with_params({x}, reg), opts(tol));
                   }});
  cases.push_back({"linear", kLayerGradTol, [&](double tol) {
                     Rng rng(2);
                     auto x = oracle::random_tensor(Shape{3, 2, 2, 2}, rng, true);
                     auto w = oracle::random_tensor(Shape{5, 8, 1, 1}, rng, true);
                     auto b = oracle::random_tensor(Shape{1, 1, 1, 5}, rng, true);
                     const auto c = oracle::random_tensor(Shape{3, 5, 1, 1}, rng);
                     return grad_check([&] { return sum(mul(linear(x, w, b), c)); }, {x, w, b}, opts(tol));
                   }});
  cases.push_back({"upsample/avg_pool/activations", kLayerGradTol, [&](double tol) {
                     Rng rng(3);
                     auto x = oracle::random_tensor(Shape{2, 2, 4, 4}, rng, true);
                     const auto c = oracle::random_tensor(Shape{2, 2, 4, 4}, rng);
                     return grad_check(
                         [&] { return sum(mul(avg_pool2(tanh(leaky_relu(nearest_upsample(x, 2), 0.2))), c)); }, {x}, opts(tol));
                   }});
  for (NormKind k : {NormKind::batch, NormKind::instance, NormKind::positional}) {
    cases.push_back({"normalize/" + to_string(k), kLayerGradTol, [k](double tol) {
                       Rng rng(4);
                       auto x = oracle::random_tensor(Shape{2, 3, 4, 4}, rng, true, 2.0);
                       const auto c = oracle::random_tensor(x.shape(), rng);
                       GradCheckOptions o;
                       o.tol = tol;
                       return grad_check([&] { return sum(mul(normalize(x, k), c)); }, {x}, o);
                     }});
    cases.push_back({"spade/" + to_string(k), kLayerGradTol, [k](double tol) {
                       Rng rng(5);
                       SpadeConfig sc;
                       sc.num_labels = 3;
                       sc.channels = 2;
                       sc.hidden = 4;
                       sc.norm = k;
                       SpadeLayer<double> spade(sc, rng);
                       Registry<double> reg;
                       spade.visit(reg, "s");
                       auto h = oracle::random_tensor(Shape{2, 2, 4, 4}, rng, true);
                       std::vector<SegMask> masks{random_mask(4, 4, 3, rng), random_mask(4, 4, 3, rng)};
                       const MaskPyramid<double> pyr(std::span<const SegMask>(masks), 0);
                       const auto c = oracle::random_tensor(h.shape(), rng);
                       GradCheckOptions o;
                       o.tol = tol;
                       return grad_check([&] { return sum(mul(spade(h, pyr), c)); }, with_params({h}, reg), o);
                     }});
  }
  cases.push_back({"conditional_batchnorm", kLayerGradTol, [&](double tol) {
                     Rng rng(6);
                     ConditionalBatchNorm<double> cbn(3, 2);
                     for (auto& v : cbn.gamma().values()) v = rng.normal();
                     for (auto& v : cbn.beta().values()) v = rng.normal();
                     auto h = oracle::random_tensor(Shape{2, 2, 3, 3}, rng, true);
                     const auto c = oracle::random_tensor(h.shape(), rng);
                     return grad_check([&] { return sum(mul(cbn(h, 1), c)); }, {h, cbn.gamma(), cbn.beta()},
                                       opts(tol));
                   }});
  for (CondMode mode : {CondMode::spade, CondMode::concat, CondMode::plain}) {
    cases.push_back({std::string("resblk/") + (mode == CondMode::spade ? "spade" : mode == CondMode::concat ? "concat" : "plain"),
                     kLayerGradTol, [mode](double tol) {
                       Rng rng(7);
                       ResBlkConfig c;
                       c.num_labels = 3;
                       c.in_channels = 4;
                       c.out_channels = 3;
                       c.mod_hidden = 4;
                       c.mode = mode;
                       ResBlk<double> blk(c, rng);
                       Registry<double> reg;
                       blk.visit(reg, "b");
                       for (int i = 0; i < 3; ++i) reg.update_spectral();
                       std::vector<SegMask> masks{random_mask(5, 5, 3, rng), random_mask(5, 5, 3, rng)};
                       const MaskPyramid<double> pyr(std::span<const SegMask>(masks), 0);
                       auto x = oracle::random_tensor(Shape{2, 4, 5, 5}, rng, true);
                       GradCheckOptions o;
                       o.tol = tol;
                       return grad_check([&] { return sum(blk(x, pyr)); }, with_params({x}, reg), o);
                     }});
  }
  cases.push_back({"encoder", kLayerGradTol, [&](double tol) {
                     Rng rng(8);
                     Encoder<double> e(EncoderConfig{16, 4, 5, true}, rng);
                     auto reg = e.registry();
                     for (int i = 0; i < 3; ++i) reg.update_spectral();
                     auto img = oracle::random_tensor(Shape{2, 3, 16, 16}, rng, true);
                     const auto cm = oracle::random_tensor(Shape{2, 5, 1, 1}, rng);
                     const auto cv = oracle::random_tensor(Shape{2, 5, 1, 1}, rng);
                     return grad_check(
                         [&] {
                           const auto q = e(img);
                           return add(sum(mul(q.mu, cm)), sum(mul(q.logvar, cv)));
                         },
                         with_params({img}, reg), opts(tol));
                   }});
  cases.push_back({"generator (end to end)", kNetworkGradTol, [&](double tol) {
                     Rng rng(9);
                     GeneratorConfig gc;
                     gc.num_labels = 3;
                     gc.z_dim = 8;
                     gc.nf = 4;
                     gc.num_upsample_stages = 2;
                     Generator<double> g(gc, rng);
                     auto reg = g.registry();
                     for (int i = 0; i < 3; ++i) reg.update_spectral();
                     std::vector<SegMask> masks{random_mask(16, 16, 3, rng), random_mask(16, 16, 3, rng)};
                     const MaskPyramid<double> pyr(std::span<const SegMask>(masks), 2);
                     auto z = oracle::random_tensor(Shape{2, 8, 1, 1}, rng, true);
                     return grad_check([&] { return sum(g(z, pyr)); }, with_params({z}, reg), opts(tol, 24));
                   }});
  cases.push_back({"discriminator (end to end)", kNetworkGradTol, [&](double tol) {
                     Rng rng(10);
                     DiscriminatorConfig dc;
                     dc.num_labels = 3;
                     dc.ndf = 4;
                     Discriminator<double> d(dc, rng);
                     auto reg = d.registry();
                     for (int i = 0; i < 3; ++i) reg.update_spectral();
                     std::vector<SegMask> masks{random_mask(16, 16, 3, rng), random_mask(16, 16, 3, rng)};
                     const MaskPyramid<double> pyr(std::span<const SegMask>(masks), 0);
                     auto img = oracle::random_tensor(Shape{2, 3, 16, 16}, rng, true);
                     return grad_check(
                         [&] {
                           const auto o = d(img, pyr.full());
                           Tensor<double> total = sum(o.logits[0]);
                           for (std::size_t s = 1; s < o.logits.size(); ++s) total = add(total, sum(o.logits[s]));
                           return total;
                         },
                         with_params({img}, reg), opts(tol));
                   }});

  std::string failures;
  double worst_layer = 0.0, worst_net = 0.0;
  for (auto& c : cases) {
    const auto r = c.run(c.tol);
    (c.tol == kNetworkGradTol ? worst_net : worst_layer) =
        std::max(c.tol == kNetworkGradTol ? worst_net : worst_layer, r.max_rel_err);
    if (!r.pass) failures += " " + c.name + "(" + fmt("%.3g", r.max_rel_err) + ")";
  }
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(cases.size()) + " checks, worst layer rel " + fmt("%.3g", worst_layer) +
                       ", worst network rel " + fmt("%.3g", worst_net) + ", " + fmt("%.1f", secs) + " s";
  if (!failures.empty()) detail += "; failed:" + failures;
  return {failures.empty() && secs < kGradSuiteSeconds, detail};
}

// ---------------------------------------------------------------------------

Outcome normalization_stats() {
  double worst_mean = 0.0, worst_std = 0.0;
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const Shape s{rng.uniform_int(2, 6), rng.uniform_int(1, 8), rng.uniform_int(3, 9), rng.uniform_int(3, 9)};
    Tensor<double> x(s);
    const double shift = rng.uniform(-5, 5), scale = rng.uniform(0.5, 4);
    for (auto& v : x.values()) v = shift + scale * rng.normal();
    for (NormKind k : {NormKind::batch, NormKind::instance}) {
      const Tensor<double> y = normalize(x, k);
      for (int c = 0; c < s.c; ++c) {
        for (int n0 = 0; n0 < (k == NormKind::batch ? 1 : s.n); ++n0) {
          const int lo = k == NormKind::batch ? 0 : n0, hi = k == NormKind::batch ? s.n : n0 + 1;
          double m = 0, v = 0, cnt = 0;
          for (int n = lo; n < hi; ++n)
            for (std::size_t i = 0; i < s.plane(); ++i) m += y.values()[y.offset(n, c, 0, 0) + i], ++cnt;
          m /= cnt;
          for (int n = lo; n < hi; ++n)
            for (std::size_t i = 0; i < s.plane(); ++i) v += std::pow(y.values()[y.offset(n, c, 0, 0) + i] - m, 2);
          worst_mean = std::max(worst_mean, std::abs(m));
          worst_std = std::max(worst_std, std::abs(std::sqrt(v / cnt) - 1.0));
        }
      }
    }
  }
  return {worst_mean < kPostNormMean && worst_std < kPostNormStd,
          "max |mean| " + fmt("%.3g", worst_mean) + ", max |std - 1| " + fmt("%.3g", worst_std) +
              " (batch and instance, 20 random batches)"};
}

Outcome spectral() {
  double worst = 0.0;
  Rng rng(12);
  for (int t = 0; t < kSpectralWeights; ++t) {
    const Shape s{rng.uniform_int(2, 32), rng.uniform_int(1, 16), 3, 3};
    SpectralWeight<double> w(s, rng);
    for (int i = 0; i < kPowerIterations; ++i) w.update();
    const double sigma = oracle::sigma_max(w.effective().values(), s.n, static_cast<int>(s.sample()));
    worst = std::max(worst, std::abs(sigma - 1.0));
  }
  return {worst < kSigmaRel, "max |sigma(W_eff) - 1| " + fmt("%.3g", worst) + " by SVD over " +
                                 std::to_string(kSpectralWeights) + " weights"};
}

Outcome closed_forms() {
  auto vec = [](std::vector<double> v) {
    const Shape s{1, static_cast<int>(v.size()), 1, 1};
    return Tensor<double>(s, std::move(v));
  };
  auto logits = [](double v) { return std::vector<Tensor<double>>{Tensor<double>::full(Shape{2, 1, 4, 4}, v)}; };
  auto stats = [](Eigen::VectorXd mu, Eigen::MatrixXd cov) {
    GaussianStats s;
    s.mean = std::move(mu);
    s.cov = std::move(cov);
    s.sample_count = 2;
    return s;
  };
  const auto I4 = Eigen::MatrixXd::Identity(4, 4);
  Eigen::VectorXd ones(4);
  ones << 1, 1, 1, 1;
  const std::vector<std::pair<double, double>> checks{
      {kld_loss(vec({0.0}), vec({0.0})).item(), 0.0},
      {kld_loss(vec({1.0}), vec({0.0})).item(), 0.5},
      {kld_loss(vec({0.0}), vec({std::log(4.0)})).item(), 0.5 * (3.0 - std::log(4.0))},
      {hinge_d(logits(2.0), logits(-2.0)).item(), 0.0},
      {hinge_d(logits(0.0), logits(0.0)).item(), 2.0},
      {hinge_g(logits(0.0)).item(), 0.0},
      {hinge_d(logits(-1.0), logits(1.0)).item(), 4.0},
      {frechet_distance(stats(Eigen::VectorXd::Zero(4), I4), stats(Eigen::VectorXd::Zero(4), I4)), 0.0},
      {frechet_distance(stats(Eigen::VectorXd::Zero(4), I4), stats(ones, I4)), 4.0},
      {frechet_distance(stats(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 1.0)),
                        stats(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 4.0))),
       1.0},
  };
  double worst = 0.0;
  for (const auto& [got, want] : checks) worst = std::max(worst, std::abs(got - want));
  return {worst < kClosedFormTol && std::abs(checks[2].second - 0.8069) < 1e-4,
          std::to_string(checks.size()) + " values, max error " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------

struct TrainedRun {
  std::unique_ptr<Trainer> trainer;
  double seconds = 0.0;
};

TrainedRun train(const TrainConfig& cfg, const Dataset& data) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainedRun r{std::make_unique<Trainer>(cfg, data)};
  std::ostringstream sink;
  r.trainer->run(sink);
  r.seconds = seconds_since(t0);
  return r;
}

Outcome ablation(const std::string& csv_path) {
  TrainConfig base = TrainConfig::desk();
  base.log_every = 0;
  const Dataset train_set = synthesize(base.data, base.data.num_train, kTrainSalt);
  const Dataset val = synthesize(base.data, base.data.num_val, kValSalt);
  std::vector<AblationVariant> variants;
  for (auto& v : ablation_variants(base, AblationAxis::concat)) {
    if (v.name == "spade" || v.name == "concat" || v.name == "encdec") variants.push_back(v);
  }
  std::ofstream csv(csv_path);
  csv << "variant,seed,miou,accu,fd_star,param_count,seconds\n";
  int wins = 0;
  double slowest = 0.0;
  bool steps_ok = true;
  std::size_t p_spade = 0, p_concat = 0, p_encdec = 0;
  std::string per_seed;
  for (int i = 0; i < kAblationSeeds; ++i) {
    const std::uint64_t seed = 1 + static_cast<std::uint64_t>(i);
    std::map<std::string, double> miou;
    for (const auto& v : variants) {
      TrainConfig cfg = v.cfg;
      cfg.seed = seed;
      const TrainedRun run = train(cfg, train_set);
      steps_ok = steps_ok && run.trainer->total_steps() == kAblationSteps;
      slowest = std::max(slowest, run.seconds);
      const EvalReport e = evaluate(run.trainer->models(), val, cfg.eval_images, seed);
      const std::size_t params = run.trainer->models().generator().param_count();
      (v.name == "spade" ? p_spade : v.name == "concat" ? p_concat : p_encdec) = params;
      miou[v.name] = e.miou;
      csv << v.name << "," << seed << "," << e.miou << "," << e.accu << "," << e.fd_star << "," << params << ","
          << run.seconds << std::endl;
      std::cout << "  seed " << seed << " " << v.name << " nf=" << cfg.gen.nf << " params=" << params
                << " miou=" << fmt("%.4f", e.miou) << " accu=" << fmt("%.4f", e.accu)
                << " fd*=" << fmt("%.4f", e.fd_star) << " (" << fmt("%.0f", run.seconds) << " s)" << std::endl;
    }
    const bool win = miou["spade"] > miou["concat"] && miou["spade"] > miou["encdec"];
    wins += win;
    per_seed += (per_seed.empty() ? "" : " ") + std::string(win ? "W" : "L");
  }
  const bool params_ok = p_spade < p_encdec;
  const bool budget_ok = std::abs(static_cast<double>(p_concat) - static_cast<double>(p_spade)) <
                         0.1 * static_cast<double>(p_spade);
  return {wins >= kAblationWinsNeeded && params_ok && budget_ok && steps_ok && slowest < kRunSeconds,
          "SPADE wins " + std::to_string(wins) + "/" + std::to_string(kAblationSeeds) + " [" + per_seed +
              "], params spade " + std::to_string(p_spade) + " < encdec " + std::to_string(p_encdec) +
              ", concat " + std::to_string(p_concat) + ", slowest run " + fmt("%.0f", slowest) + " s"};
}

std::array<double, 3> mean_color(const Tensor<float>& t) {
  std::array<double, 3> m{};
  const std::size_t p = t.shape().plane();
  for (int c = 0; c < 3; ++c) {
    double a = 0.0;
    for (std::size_t i = 0; i < p; ++i) a += t.values()[static_cast<std::size_t>(c) * p + i];
    m[static_cast<std::size_t>(c)] = a / static_cast<double>(p);
  }
  return m;
}

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

Outcome multimodal() {
  TrainConfig base = TrainConfig::desk();
  base.log_every = 0;
  base.use_encoder = true;
  const Dataset train_set = synthesize(base.data, base.data.num_train, kTrainSalt);
  const Dataset val = synthesize(base.data, base.data.num_val, kValSalt);
  double min_pair = 1e300;
  int style_wins = 0;
  std::string per_seed;
  for (int i = 0; i < kStyleSeeds; ++i) {
    const std::uint64_t seed = 1 + static_cast<std::uint64_t>(i);
    TrainConfig cfg = base;
    cfg.seed = seed;
    const TrainedRun run = train(cfg, train_set);
    Models& m = run.trainer->models();
    Rng rng(seed ^ 0x5354594C45ULL);

    // K samples for one mask with distinct z
    std::vector<Tensor<float>> samples;
    for (int k = 0; k < kSamplesK; ++k) samples.push_back(synthesize_images(m, {val.masks[0]}, sample_z(1, cfg.gen.z_dim, rng)));
    for (int a = 0; a < kSamplesK; ++a)
      for (int b = a + 1; b < kSamplesK; ++b) {
        double d = 0.0;
        for (std::size_t j = 0; j < samples[a].numel(); ++j)
          d = std::max(d, static_cast<double>(std::abs(samples[a].values()[j] - samples[b].values()[j])));
        min_pair = std::min(min_pair, d);
      }

    // style: z from the encoder's posterior mean for image A, decoded with mask B
    double d_style = 0.0, d_random = 0.0;
    for (int p = 0; p < kStylePairs; ++p) {
      const auto a = static_cast<std::size_t>(p);
      const auto b = static_cast<std::size_t>((p + 1 + static_cast<int>(rng.below(val.size() - 1))) % static_cast<int>(val.size()));
      Posterior<float> q;
      {
        NoGradGuard ng;
        EvalModeGuard ev;
        q = (*m.encoder())(val.images[a]);
      }
      const auto target = mean_color(val.images[a]);
      d_style += color_distance(mean_color(synthesize_images(m, {val.masks[b]}, q.mu)), target);
      d_random += color_distance(mean_color(synthesize_images(m, {val.masks[b]}, sample_z(1, cfg.gen.z_dim, rng))), target);
    }
    const bool win = d_style < d_random;
    style_wins += win;
    per_seed += (per_seed.empty() ? "" : " ") + fmt("%.4f", d_style / kStylePairs) + "/" +
                fmt("%.4f", d_random / kStylePairs);
    std::cout << "  seed " << seed << " min sample pair diff " << fmt("%.4f", min_pair) << ", mean color distance style "
              << fmt("%.4f", d_style / kStylePairs) << " vs random " << fmt("%.4f", d_random / kStylePairs) << " ("
              << fmt("%.0f", run.seconds) << " s)" << std::endl;
  }
  return {min_pair > kSampleDiff && style_wins >= kStyleWinsNeeded,
          "min pairwise sample diff " + fmt("%.4f", min_pair) + " (K=" + std::to_string(kSamplesK) + "), style closer in " +
              std::to_string(style_wins) + "/" + std::to_string(kStyleSeeds) + " seeds [style/random " + per_seed + "]"};
}

// ---------------------------------------------------------------------------

Outcome determinism() {
  TrainConfig cfg = TrainConfig::desk();
  cfg.epochs = 1;
  const Dataset data = synthesize(cfg.data, cfg.data.num_train, kTrainSalt);
  const std::uint64_t half = 30;

  std::ostringstream log_a, log_b;
  Trainer a(cfg, data), b(cfg, data);
  a.run(log_a);
  b.run(log_b);
  const bool logs_equal = !log_a.str().empty() && log_a.str() == log_b.str();

  // interrupted at `half`, persisted to disk, resumed in a fresh trainer
  const auto path = (std::filesystem::temp_directory_path() / "spade_acceptance.spde").string();
  Trainer first(cfg, data);
  std::ostringstream log_c;
  for (std::uint64_t s = 0; s < half; ++s) log_c << first.step_once().log_line() << "\n";
  const auto saved = encode_checkpoint(first.bundle());
  save_checkpoint(path, first.bundle());
  const auto loaded = load_checkpoint(path);
  const bool bytes_equal = encode_checkpoint(loaded) == saved;
  Trainer resumed(cfg, data);
  resumed.restore(loaded);
  while (resumed.step() < resumed.total_steps()) log_c << resumed.step_once().log_line() << "\n";
  const bool resume_equal = log_c.str() == log_a.str();
  const bool final_equal = encode_checkpoint(resumed.bundle()) == encode_checkpoint(a.bundle());
  std::filesystem::remove(path);
  return {logs_equal && bytes_equal && resume_equal && final_equal,
          std::string("repeat logs ") + (logs_equal ? "identical" : "DIFFER") + ", checkpoint bytes " +
              (bytes_equal ? "identical" : "DIFFER") + ", resumed logs " + (resume_equal ? "identical" : "DIFFER") +
              ", final state " + (final_equal ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  std::string csv = "ablation.csv";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--csv" && i + 1 < argc) {
      csv = argv[++i];
    } else {
      only.insert(std::atoi(a.c_str()));
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"wash-away", washaway},
      {"reduction equivalences", reductions},
      {"gradient suite", gradient_suite},
      {"normalization statistics", normalization_stats},
      {"spectral norm", spectral},
      {"closed-form values", closed_forms},
      {"desk-scale ablation", [&] { return ablation(csv); }},
      {"multimodal and style", multimodal},
      {"determinism and persistence", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] "
              << o.detail << " (" << fmt("%.1f", seconds_since(t0)) << " s)" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
