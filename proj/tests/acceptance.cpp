// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "antispoof/features.hpp"
#include "antispoof/losses.hpp"
#include "antispoof/metrics.hpp"
#include "antispoof/model.hpp"
#include "antispoof/training.hpp"
#include "oracles.hpp"
#include "toy_fixture.hpp"

using namespace antispoof;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("antispoof_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Label random_label(std::mt19937_64& rng) { return (rng() & 1) ? Label::kSpoofed : Label::kGenuine; }

void shapes() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 0.1);
  AudioBuffer a;
  a.samples.resize(static_cast<std::size_t>(8.5 * kSampleRate));
  for (auto& x : a.samples) x = n(rng);
  bool ok = true;
  std::string detail;
  for (auto [kind, bins] : {std::pair{FeatureKind::kLogSpec, 401}, std::pair{FeatureKind::kLfbank, 80},
                            std::pair{FeatureKind::kGdGram, 401}}) {
    const auto t0 = Clock::now();
    const auto f = extract_feature(a, kind, FrontendConfig{});
    const double dt = seconds_since(t0);
    ok = ok && f.data.rows() == bins && f.data.cols() == 566 && dt < 1.0;
    detail += fmt("%s %ldx%ld %.3fs  ", std::string(to_string(kind)).c_str(), static_cast<long>(f.data.rows()),
                  static_cast<long>(f.data.cols()), dt);
  }
  report(1, ok, detail);
}

void parameter_budget() {
  ModelSpec gap, gavp;
  gavp.pooling = Pooling::kGavp;
  const double a = static_cast<double>(Model(gap).trainable_parameter_count());
  const double b = static_cast<double>(Model(gavp).trainable_parameter_count());
  const double off = std::abs(a - 1.34e6) / 1.34e6, diff = std::abs(a - b) / a;
  report(2, off <= 0.02 && diff < 0.01,
         fmt("GAP %.0f (%.2f%% from 1.34M), GAVP %.0f (differs %.4f%%)", a, 100 * off, b, 100 * diff));
}

void gradient_suite() {
  constexpr double h = 1e-4, tol = 1e-4;
  int bad = 0;
  double worst = 0.0;
  auto check = [&](double fd, double an) {
    const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
    worst = std::max(worst, err);
    if (err > tol) ++bad;
  };
  const auto t0 = Clock::now();
  std::mt19937_64 rng(21);

  std::uniform_real_distribution<double> u(0.01, 0.99), w(0.05, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double s = u(rng), pw = w(rng);
    const Label y = random_label(rng);
    check((weighted_ce(s + h, y, pw) - weighted_ce(s - h, y, pw)) / (2 * h), weighted_ce_grad(s, y, pw));
  }

  for (int t = 0; t < 100; ++t) {
    ClassCentroids c(6, 0.5);
    c.genuine = random_vec(rng, 6);
    c.spoofed = random_vec(rng, 6);
    Eigen::MatrixXd e(3, 6);
    for (int i = 0; i < 3; ++i) e.row(i) = random_vec(rng, 6).transpose();
    const std::vector<Label> y = {random_label(rng), random_label(rng), random_label(rng)};
    const auto r = center_loss_batch(e, y, c);
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      Eigen::MatrixXd up = e, down = e;
      up(i) += h;
      down(i) -= h;
      check((center_loss_batch(up, y, c).loss - center_loss_batch(down, y, c).loss) / (2 * h), r.grad(i));
    }
  }

  for (int tested = 0; tested < 100;) {
    const Eigen::VectorXd a = random_vec(rng, 16), b = random_vec(rng, 16);
    const Label ya = random_label(rng), yb = random_label(rng);
    // Inputs sitting on the hinge kink have no derivative.
    if (std::abs(0.5 - (ya == yb ? 1.0 : -1.0) * cosine_similarity(a, b)) < 1e-3) continue;
    const auto r = snn_hinge(a, b, ya, yb, 0.5);
    for (int i = 0; i < 16; ++i) {
      Eigen::VectorXd up = a, down = a;
      up[i] += h;
      down[i] -= h;
      check((snn_hinge(up, b, ya, yb, 0.5).loss - snn_hinge(down, b, ya, yb, 0.5).loss) / (2 * h), r.grad_e1[i]);
      up = b;
      down = b;
      up[i] += h;
      down[i] -= h;
      check((snn_hinge(a, up, ya, yb, 0.5).loss - snn_hinge(a, down, ya, yb, 0.5).loss) / (2 * h), r.grad_e2[i]);
    }
    ++tested;
  }

  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    Eigen::MatrixXd x(3, 4), xh(3, 4);
    for (auto* m : {&x, &xh})
      for (Eigen::Index i = 0; i < m->size(); ++i) (*m)(i) = n(rng);
    const Eigen::MatrixXd g = reconstruction_loss_grad(x, xh);
    for (Eigen::Index i = 0; i < xh.size(); ++i) {
      Eigen::MatrixXd up = xh, down = xh;
      up(i) += h;
      down(i) -= h;
      check((reconstruction_loss(x, up) - reconstruction_loss(x, down)) / (2 * h), g(i));
    }
  }
  const double dt = seconds_since(t0);
  report(3, bad == 0 && dt < 60.0, fmt("%d mismatches, worst relative error %.2e, %.2fs", bad, worst, dt));
}

void sampler_statistics() {
  std::vector<UtteranceRecord> recs;
  for (int i = 0; i < 100; ++i)
    recs.push_back({"U" + std::to_string(i), i < 10 ? Label::kGenuine : Label::kSpoofed, Subset::kTrain, ""});
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto pairs = create_snn_dataset(recs, SamplerConfig{5000, seed});
    int genuine = 0;
    std::set<std::size_t> seen;
    for (const auto& p : pairs)
      for (auto [idx, lab] : {std::pair{p.first, p.first_label}, std::pair{p.second, p.second_label}})
        if (lab == Label::kGenuine) {
          ++genuine;
          seen.insert(idx);
        }
    const double frac = genuine / (2.0 * static_cast<double>(pairs.size()));
    ok = ok && pairs.size() == 5000 && frac >= 0.49 && frac <= 0.51 && seen.size() == 10;
    detail += fmt("seed %d: %.4f/%zu  ", static_cast<int>(seed), frac, seen.size());
  }
  report(4, ok, detail);
}

void eer_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> size(4, 200), grid(0, 20);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  const auto t0 = Clock::now();
  for (int t = 0; t < 1000; ++t) {
    const int sz = size(rng);
    const int ng = std::uniform_int_distribution<int>(1, sz - 1)(rng);
    const bool coarse = rng() & 1;  // coarse grids make ties common
    std::vector<double> g, s;
    for (int i = 0; i < sz; ++i) {
      const double v = coarse ? grid(rng) / 10.0 : n(rng);
      (i < ng ? g : s).push_back(i < ng || coarse ? v : v + 0.7);
    }
    worst = std::max(worst, std::abs(compute_eer(g, s) - oracle::eer(g, s)));
  }
  const double dt = seconds_since(t0);
  report(5, worst <= 1e-9 && dt < 30.0, fmt("max deviation %.2e, %.2fs", worst, dt));
}

void overfit(const ExperimentConfig& cfg, const ExperimentData& data) {
  const auto t0 = Clock::now();
  Model m = build_model(cfg.model, 10);
  TrainConfig c = cfg.train;
  c.seed = 10;
  c.mode = LossMode::kSnn;
  Trainer t(m, c, LossWeights{}, data.train.records, data.train.features);
  const LabelMap labels = label_map(data.train.records);
  double eer = 1.0;
  int epoch = 0;
  while (epoch < 50 && eer > 0.0) {
    t.train_epoch();
    ++epoch;
    eer = compute_eer(score_records(m, data.train.records, data.train.features), labels);
  }
  const double dt = seconds_since(t0);
  report(6, eer == 0.0 && dt < 600.0,
         fmt("%zu train utterances, train EER %.2f%% after %d epochs, %.1fs", data.train.records.size(), 100 * eer,
             epoch, dt));
}

void mode_ordering(const ExperimentConfig& base, const ExperimentData& data) {
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  std::vector<double> snn, ce;
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (auto mode : {LossMode::kSnn, LossMode::kCe}) {
      ExperimentConfig cfg = base;
      cfg.train.seed = seed;
      cfg.train.mode = mode;
      const auto r = run_experiment(cfg, data, scratch("mode"));
      (mode == LossMode::kSnn ? snn : ce).push_back(r.best_dev_eer);
    }
  const double a = median(snn), b = median(ce);
  std::string detail = fmt("median dev EER SNN %.2f%%, CE %.2f%%  (SNN", 100 * a, 100 * b);
  for (double v : snn) detail += fmt(" %.2f", 100 * v);
  detail += "; CE";
  for (double v : ce) detail += fmt(" %.2f", 100 * v);
  report(7, a <= b, detail + ")");
}

void decoder_contract() {
  bool shapes_ok = true;
  double fraction = 0.0;
  std::string detail;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto kind : {FeatureKind::kLogSpec, FeatureKind::kLfbank, FeatureKind::kGdGram}) {
    ModelSpec s;
    s.input_kind = kind;
    s.with_decoder = true;
    const Model m = build_model(s, 1);
    FeatureMatrix f{kind, Eigen::MatrixXd(s.input_bins(), 566)};
    for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data(i) = u(rng);
    const auto tape = m.forward(stack_features({&f}), false, true);
    const auto& r = tape.reconstructions.front();
    shapes_ok = shapes_ok && r.rows() == f.data.rows() && r.cols() == f.data.cols();
    fraction = std::max(fraction, static_cast<double>(m.decoder_parameter_count()) /
                                      static_cast<double>(m.trainable_parameter_count()));
    detail += fmt("%s %ldx%ld  ", std::string(to_string(kind)).c_str(), static_cast<long>(r.rows()),
                  static_cast<long>(r.cols()));
  }
  report(8, shapes_ok && fraction < 0.02,
         detail + fmt("shapes %s, decoder %.3f%% of total (limit 2%%)", shapes_ok ? "ok" : "WRONG", 100 * fraction));
}

void determinism(const ExperimentConfig& base, const ExperimentData& data) {
  ExperimentConfig cfg = base;
  cfg.train.max_epochs = 4;
  cfg.train.seed = 11;
  const auto a = scratch("det_a"), b = scratch("det_b");
  run_experiment(cfg, data, a);
  run_experiment(cfg, data, b);
  bool ok = true;
  for (const char* f : {"model.ckpt", "dev.scores", "eval.scores"})
    ok = ok && fs::exists(a / f) && slurp(a / f) == slurp(b / f);
  report(9, ok, "model.ckpt, dev.scores, eval.scores byte-compared across two runs");
}

void fusion_sanity() {
  // 2000 trials per class; see the README on why small sets are not used.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  bool ok = true;
  double worst = -1.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<TrialScore> base, noise;
    LabelMap labels;
    for (int i = 0; i < 4000; ++i) {
      const std::string id = "u" + std::to_string(i);
      const bool spoofed = i >= 2000;
      labels[id] = spoofed ? Label::kSpoofed : Label::kGenuine;
      base.push_back({id, n(rng) + (spoofed ? 1.5 : 0.0)});
      noise.push_back({id, n(rng)});
    }
    const double single = compute_eer(base, labels);
    const std::vector<std::vector<TrialScore>> dup = {base, base}, noisy = {base, noise};
    const double d = compute_eer(apply_fusion(fit_fusion(dup, labels), dup), labels);
    const double f = compute_eer(apply_fusion(fit_fusion(noisy, labels), noisy), labels);
    ok = ok && d == single && f - single <= 0.005;
    worst = std::max(worst, f - single);
  }
  report(10, ok, fmt("duplicate unchanged on 5 sets; worst noise change %+.3f pp", 100 * worst));
}

}  // namespace

int main() {
  shapes();
  parameter_budget();
  gradient_suite();
  sampler_statistics();
  eer_oracle();

  const ExperimentConfig cfg = toy::make_experiment(scratch("corpus"), 1);
  const ExperimentData data = load_experiment_data(cfg);
  overfit(cfg, data);
  mode_ordering(cfg, data);
  decoder_contract();
  determinism(cfg, data);
  fusion_sanity();

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
