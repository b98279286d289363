#include "antispoof/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Dense>

#include "antispoof/errors.hpp"

namespace antispoof {

std::vector<DetPoint> det_curve(std::span<const double> genuine, std::span<const double> spoofed) {
  if (genuine.empty() || spoofed.empty())
    throw InvalidInput("EER needs at least one score of each class");
  std::vector<double> g(genuine.begin(), genuine.end()), s(spoofed.begin(), spoofed.end());
  std::sort(g.begin(), g.end());
  std::sort(s.begin(), s.end());
  std::vector<double> thresholds;
  thresholds.reserve(g.size() + s.size() + 1);
  std::merge(g.begin(), g.end(), s.begin(), s.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double ng = static_cast<double>(g.size()), ns = static_cast<double>(s.size());
  std::vector<DetPoint> curve;
  curve.reserve(thresholds.size());
  std::size_t gi = 0, si = 0;  // counts of scores below the threshold
  for (double t : thresholds) {
    while (gi < g.size() && g[gi] < t) ++gi;
    while (si < s.size() && s[si] < t) ++si;
    curve.push_back({t, (ng - static_cast<double>(gi)) / ng, static_cast<double>(si) / ns});
  }
  return curve;
}

double compute_eer(std::span<const double> genuine, std::span<const double> spoofed) {
  const auto curve = det_curve(genuine, spoofed);
  // far is non-increasing and frr non-decreasing along the sweep; the first
  // point starts at far = 1, frr = 0 and the last at far = 0, frr = 1.
  for (std::size_t k = 1; k < curve.size(); ++k) {
    const DetPoint& b = curve[k];
    if (b.frr < b.far) continue;
    const DetPoint& a = curve[k - 1];
    const double gap_a = a.far - a.frr;   // > 0
    const double gap_b = b.far - b.frr;   // <= 0
    const double t = gap_a / (gap_a - gap_b);
    return a.far + t * (b.far - a.far);
  }
  return curve.back().far;
}

double compute_eer(std::span<const TrialScore> scores, const LabelMap& labels) {
  std::vector<double> g, s;
  for (const auto& t : scores) {
    const auto it = labels.find(t.utt_id);
    if (it == labels.end()) throw InvalidInput("no label for utterance '" + t.utt_id + "'");
    if (!std::isfinite(t.score)) throw InvalidInput("non-finite score for '" + t.utt_id + "'");
    (it->second == Label::kGenuine ? g : s).push_back(t.score);
  }
  return compute_eer(g, s);
}

namespace {

// Rows ordered by utt_id, one column per subsystem.
Eigen::MatrixXd align(std::span<const std::vector<TrialScore>> subsystems,
                      std::vector<std::string>& ids) {
  if (subsystems.empty()) throw InvalidInput("no subsystems to fuse");
  std::vector<std::map<std::string, double>> by_id(subsystems.size());
  for (std::size_t k = 0; k < subsystems.size(); ++k) {
    for (const auto& t : subsystems[k])
      if (!by_id[k].emplace(t.utt_id, t.score).second)
        throw InvalidInput("duplicate utterance '" + t.utt_id + "' in subsystem " + std::to_string(k));
  }
  ids.clear();
  for (const auto& [id, _] : by_id.front()) ids.push_back(id);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(subsystems.size()));
  for (std::size_t k = 0; k < subsystems.size(); ++k) {
    if (by_id[k].size() != ids.size())
      throw InvalidInput("subsystem " + std::to_string(k) + " scores a different utterance set");
    std::size_t r = 0;
    for (const auto& [id, score] : by_id[k]) {
      if (id != ids[r]) throw InvalidInput("misaligned utterance '" + id + "' in subsystem " + std::to_string(k));
      x(static_cast<Eigen::Index>(r++), static_cast<Eigen::Index>(k)) = score;
    }
  }
  return x;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

FusionModel fit_fusion(std::span<const std::vector<TrialScore>> subsystems, const LabelMap& labels,
                       const FusionOptions& opts) {
  if (subsystems.size() < 2) throw InvalidInput("fusion needs at least two subsystems");
  std::vector<std::string> ids;
  const Eigen::MatrixXd raw = align(subsystems, ids);
  const auto n = raw.rows(), k = raw.cols();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto it = labels.find(ids[static_cast<std::size_t>(i)]);
    if (it == labels.end()) throw InvalidInput("no label for utterance '" + ids[static_cast<std::size_t>(i)] + "'");
    y[i] = as_target(it->second);
  }
  if (y.sum() == 0.0 || y.sum() == static_cast<double>(n))
    throw InvalidInput("fusion needs dev scores of both classes");

  // Fit on standardized scores for conditioning, then fold the affine map back.
  const Eigen::RowVectorXd mean = raw.colwise().mean();
  Eigen::RowVectorXd scale = ((raw.rowwise() - mean).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < k; ++j)
    if (!(scale[j] > 0.0)) scale[j] = 1.0;
  const Eigen::MatrixXd x = (raw.rowwise() - mean).array().rowwise() / scale.array();

  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  double b = 0.0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Eigen::VectorXd p = ((x * w).array() + b).unaryExpr(&sigmoid).matrix();
    const Eigen::VectorXd r = y - p;
    const Eigen::VectorXd gw = x.transpose() * r / static_cast<double>(n);
    const double gb = r.mean();
    w += opts.learning_rate * gw;
    b += opts.learning_rate * gb;
    if (std::sqrt(gw.squaredNorm() + gb * gb) < opts.tolerance) break;
  }

  FusionModel model;
  model.weights.resize(static_cast<std::size_t>(k));
  model.bias = b;
  for (Eigen::Index j = 0; j < k; ++j) {
    model.weights[static_cast<std::size_t>(j)] = w[j] / scale[j];
    model.bias -= w[j] * mean[j] / scale[j];
  }
  return model;
}

std::vector<TrialScore> apply_fusion(const FusionModel& model,
                                     std::span<const std::vector<TrialScore>> subsystems) {
  if (subsystems.size() != model.weights.size())
    throw InvalidInput("fusion model expects " + std::to_string(model.weights.size()) + " subsystems");
  std::vector<std::string> ids;
  const Eigen::MatrixXd x = align(subsystems, ids);
  std::vector<TrialScore> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double z = model.bias;
    for (std::size_t j = 0; j < model.weights.size(); ++j)
      z += model.weights[j] * x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out[i] = {ids[i], sigmoid(z)};
  }
  return out;
}

std::string format_score(double score) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", score);
  return buf;
}

std::vector<TrialScore> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score file " + path.string());
  std::vector<TrialScore> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream is(line);
    TrialScore t;
    std::string score_text, extra;
    if (!(is >> t.utt_id)) continue;
    if (!(is >> score_text) || (is >> extra)) throw ParseError("expected 'utt_id score'", line_no);
    try {
      std::size_t used = 0;
      t.score = std::stod(score_text, &used);
      if (used != score_text.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError("bad score '" + score_text + "'", line_no);
    }
    out.push_back(std::move(t));
  }
  return out;
}

void write_scores(const std::filesystem::path& path, std::span<const TrialScore> scores) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write score file " + path.string());
  for (const auto& t : scores) os << t.utt_id << ' ' << format_score(t.score) << '\n';
}

FusionModel read_fusion_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fusion model " + path.string());
  FusionModel m;
  if (!(in >> m.bias)) throw ParseError("missing bias", 1);
  for (double w; in >> w;) m.weights.push_back(w);
  if (!in.eof()) throw ParseError("bad weight", m.weights.size() + 2);
  return m;
}

void write_fusion_model(const std::filesystem::path& path, const FusionModel& model) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write fusion model " + path.string());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g\n", model.bias);
  os << buf;
  for (double w : model.weights) {
    std::snprintf(buf, sizeof buf, "%.17g\n", w);
    os << buf;
  }
}

void write_det_curve(const std::filesystem::path& path, std::span<const DetPoint> curve) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write curve " + path.string());
  os << "# threshold far frr\n";
  for (const auto& p : curve)
    os << format_score(p.threshold) << ' ' << format_score(p.far) << ' ' << format_score(p.frr) << '\n';
}

}  // namespace antispoof
