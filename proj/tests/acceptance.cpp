// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
// fails. Pass substrings as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eedvit/eedvit.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace eedvit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string percents(const EEDProfile& p) {
  std::ostringstream os;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    os << (l ? " " : "") << fmt("%.1f", p.layers[l].eed_percent);
  }
  return os.str();
}

Outcome spectral_analytic() {
  constexpr std::size_t dim = 384;
  const std::vector<double> uniform(dim, 1.0);
  const double n_uniform = eed(normalize_spectrum(uniform));
  std::vector<double> one_hot(dim, 0.0);
  one_hot[0] = 3.5;
  const double n_one_hot = eed(normalize_spectrum(one_hot));
  // H(3/4, 1/4) = 2 ln 2 - (3/4) ln 3, evaluated in extended precision.
  const long double h = 2.0L * std::log(2.0L) - 0.75L * std::log(3.0L);
  const double oracle = static_cast<double>(std::exp(h));
  const double n_pair = eed(normalize_spectrum(std::vector<double>{0.75, 0.25}));
  const double e1 = std::abs(n_uniform - static_cast<double>(dim));
  const double e3 = std::abs(n_pair - oracle);
  return {e1 < 1e-9 && n_one_hot == 1.0 && e3 < 1e-9,
          "uniform err " + fmt("%.1e", e1) + ", one-hot " + fmt("%.17g", n_one_hot) + ", {0.75,0.25} err " +
              fmt("%.1e", e3)};
}

Outcome invariance() {
  std::mt19937_64 rng(101);
  double worst_scale = 0.0;
  double worst_rot = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(2, 24)(rng));
    const auto n = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(d + 2, 200)(rng));
    const MatrixD h = oracle::random_matrix(n, d, rng) * oracle::random_matrix(d, d, rng);
    const double base = spectrum_report(covariance(h)).n_eff;
    for (double c : {1e-6, 1.0, 1e6}) {
      const double scaled = spectrum_report(covariance(MatrixD(c * h))).n_eff;
      worst_scale = std::max(worst_scale, std::abs(scaled - base));
    }
    const MatrixD q = oracle::random_orthogonal(static_cast<std::size_t>(d), rng);
    const double rotated = spectrum_report(covariance(MatrixD(h * q))).n_eff;
    worst_rot = std::max(worst_rot, std::abs(rotated - base));
  }
  return {worst_scale < 1e-6 && worst_rot < 1e-6,
          "scale err " + fmt("%.1e", worst_scale) + ", rotation err " + fmt("%.1e", worst_rot)};
}

Outcome eigensolver() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  double worst_trace = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto d = static_cast<Eigen::Index>(std::uniform_int_distribution<int>(1, 16)(rng));
    const MatrixD a = oracle::random_symmetric(d, rng);
    const auto values = jacobi_eigen(a).values;
    auto expected = oracle::bisection_eigenvalues(a);
    std::sort(expected.begin(), expected.end(), std::greater<>());
    for (Eigen::Index k = 0; k < d; ++k) {
      worst = std::max(worst, std::abs(values[static_cast<std::size_t>(k)] - expected[static_cast<std::size_t>(k)]));
    }
    const double sum = std::accumulate(values.begin(), values.end(), 0.0);
    worst_trace = std::max(worst_trace, std::abs(sum - a.trace()) / std::max(1.0, std::abs(a.trace())));
  }
  return {worst < 1e-9 && worst_trace < 1e-9,
          "max eigenvalue err " + fmt("%.1e", worst) + ", trace rel err " + fmt("%.1e", worst_trace)};
}

Outcome gradients() {
  std::mt19937_64 rng(303);
  std::ostringstream os;
  bool pass = true;
  double overall = 0.0;
  std::string worst_op;
  for (const auto& op : gradcheck::op_cases(1e-5)) {
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      worst = std::max(worst, op.check(rng));
    }
    if (worst >= 1e-5) {
      pass = false;
      os << op.name << " " << fmt("%.1e", worst) << "; ";
    }
    if (worst >= overall) {
      overall = worst;
      worst_op = op.name;
    }
  }
  os << "worst " << worst_op << " " << fmt("%.1e", overall) << " over 50 configs per op";
  return {pass, os.str()};
}

Outcome collapse_ablation() {
  const ImageDataset data = gen_object_dataset(1, 512, 32);
  const double ln_k = std::log(static_cast<double>(TrainConfig{}.dino.out_dim));
  double pct[2] = {0.0, 0.0};
  for (int on = 0; on < 2; ++on) {
    TrainConfig cfg;
    cfg.max_steps = 200;
    cfg.dino.centering = on == 1;
    const auto r = train(data, cfg, 1, 1);
    pct[on] = 100.0 * r.metrics.back().teacher_entropy / ln_k;
  }
  return {pct[0] < 25.0 && pct[1] > 50.0, "teacher entropy " + fmt("%.1f", pct[0]) + "% of ln K without centering, " +
                                              fmt("%.1f", pct[1]) + "% with"};
}

EEDProfile trained_profile(CorpusKind kind) {
  TrainConfig cfg;
  cfg.max_steps = 2000;
  const ImageDataset data = generate_corpus(kind, 1, 2048, 32);
  const ImageDataset probe = generate_corpus(kind, 1001, 256, 32);
  const auto r = train(data, cfg, 1, 1);
  return profile(cfg.vit, r.state.teacher, probe, ProfileOptions{});
}

Outcome bottleneck_reproduction() {
  const EEDProfile obj = trained_profile(CorpusKind::object);
  const EEDProfile tex = trained_profile(CorpusKind::texture);
  const auto bo = bottleneck(obj);
  const auto bt = bottleneck(tex);
  const double gap = bt.min_eed_percent - bo.min_eed_percent;
  const bool pass = bo.u_shape_score >= 10.0 && bt.u_shape_score <= 3.0 && gap >= 15.0;
  return {pass, "object [" + percents(obj) + "] U " + fmt("%.2f", bo.u_shape_score) + "; texture [" + percents(tex) +
                    "] U " + fmt("%.2f", bt.u_shape_score) + "; min gap " + fmt("%.1f", gap) + " pp (seed 1)"};
}

Outcome profile_plumbing() {
  TrainConfig cfg;
  const ImageDataset data = gen_object_dataset(4, 64, 32);
  const auto state = init_dino_state(cfg, 4);
  ProfileOptions opts;
  opts.probe_images = 64;
  const EEDProfile live = profile(cfg.vit, state.teacher, data, opts);

  ActivationDump dump;
  dump.layers = capture_probe(cfg.vit, state.teacher, data, opts);
  dump.tokens_per_image = dump.layers.front().tokens_per_image;
  dump.config_hash = vit_config_hash(cfg.vit);
  const ActivationDump back = decode_dump(encode_dump(dump), "<memory>");
  const EEDProfile from_dump = profile_from_dump(back, cfg.vit.include_cls_token, opts);
  double worst = 0.0;
  for (std::size_t l = 0; l < live.layers.size(); ++l) {
    worst = std::max(worst, std::abs(live.layers[l].n_eff - from_dump.layers[l].n_eff));
    worst = std::max(worst, std::abs(live.layers[l].eed_percent - from_dump.layers[l].eed_percent));
  }

  const std::string first = profile_csv(live);
  ProfileOptions threaded = opts;
  threaded.threads = 3;
  const bool same = first == profile_csv(profile(cfg.vit, state.teacher, data, opts)) &&
                    first == profile_csv(profile(cfg.vit, state.teacher, data, threaded));
  return {worst < 1e-7 && same, "live vs dump err " + fmt("%.1e", worst) + ", CSV bytes " +
                                    (same ? "identical" : "differ") + " across 3 runs"};
}

Outcome fixture_reproduction() {
  const auto tiny = fixture::profile_from_percents(fixture::tiny_imagenet);
  const auto b = bottleneck(tiny);
  const auto report = compare_profiles({{"UC Merced", fixture::profile_from_percents(fixture::uc_merced)},
                                        {"Tiny ImageNet", tiny},
                                        {"CIFAR-100", fixture::profile_from_percents(fixture::cifar100)}});
  std::string order;
  for (const auto& r : report.rows) {
    order += (order.empty() ? "" : " < ") + r.name;
  }
  const bool ordered = report.rows.size() == 3 && report.rows[0].name == "CIFAR-100" &&
                       report.rows[1].name == "Tiny ImageNet" && report.rows[2].name == "UC Merced";
  return {b.argmin_layer >= 2 && b.argmin_layer <= 4 && ordered,
          "Tiny ImageNet argmin L" + std::to_string(b.argmin_layer) + " at " + fmt("%.1f", b.min_eed_percent) +
              "%; " + order};
}

} // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"spectral_analytic", 1, spectral_analytic},
      {"invariance", 10, invariance},
      {"eigensolver_oracle", 30, eigensolver},
      {"gradient_suite", 120, gradients},
      {"collapse_ablation", 300, collapse_ablation},
      {"bottleneck_reproduction", 1800, bottleneck_reproduction},
      {"profile_plumbing", 60, profile_plumbing},
      {"fixture_reproduction", 1, fixture_reproduction},
  };
  int failed = 0;
  int ran = 0;
  for (const auto& c : criteria) {
    bool selected = argc < 2;
    for (int i = 1; i < argc; ++i) {
      selected = selected || c.name.find(argv[i]) != std::string::npos;
    }
    if (!selected) {
      continue;
    }
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %-24s %8.2fs (budget %.0fs)  %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), secs,
                c.budget_seconds, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
