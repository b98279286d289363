#include "antispoof/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "antispoof/errors.hpp"

namespace antispoof {

std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::kCe: return "CE";
    case LossMode::kCl: return "CL";
    case LossMode::kSnn: return "SNN";
    case LossMode::kSnnRel: return "SNN_REL";
  }
  return "unknown";
}

LossMode parse_loss_mode(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (up == "CE") return LossMode::kCe;
  if (up == "CL") return LossMode::kCl;
  if (up == "SNN") return LossMode::kSnn;
  if (up == "SNN_REL" || up == "SNN-REL") return LossMode::kSnnRel;
  throw InvalidConfig("unknown loss mode '" + std::string(name) + "'");
}

void LossWeights::validate() const {
  if (cl_gamma < 0 || rel_weight < 0 || ce_pos_weight < 0 || cl_update_rate < 0)
    throw InvalidConfig("loss weights must be non-negative");
  if (margin < 0 || margin > 1) throw InvalidConfig("margin must be in [0, 1]");
}

double weighted_ce(double score, Label y, double pos_weight) {
  const double s = std::clamp(score, kScoreClamp, 1.0 - kScoreClamp);
  return y == Label::kSpoofed ? -pos_weight * std::log(s) : -std::log(1.0 - s);
}

double weighted_ce_grad(double score, Label y, double pos_weight) {
  if (score < kScoreClamp || score > 1.0 - kScoreClamp) return 0.0;
  return y == Label::kSpoofed ? -pos_weight / score : 1.0 / (1.0 - score);
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

HingeResult snn_hinge(const Eigen::VectorXd& e1, const Eigen::VectorXd& e2, Label y1, Label y2,
                      double margin) {
  if (e1.size() != e2.size()) throw InvalidInput("embedding dimensions differ");
  HingeResult r;
  r.grad_e1 = Eigen::VectorXd::Zero(e1.size());
  r.grad_e2 = Eigen::VectorXd::Zero(e2.size());
  const double n1 = e1.norm(), n2 = e2.norm();
  const double sign = y1 == y2 ? 1.0 : -1.0;
  if (n1 == 0.0 || n2 == 0.0) {
    r.loss = std::max(0.0, margin);
    return r;
  }
  const double d = e1.dot(e2) / (n1 * n2);
  const double slack = margin - sign * d;
  if (slack <= 0.0) return r;
  r.loss = slack;
  // d cos / d e1 = e2 / (n1 n2) - cos * e1 / n1^2
  r.grad_e1 = -sign * (e2 / (n1 * n2) - d * e1 / (n1 * n1));
  r.grad_e2 = -sign * (e1 / (n1 * n2) - d * e2 / (n2 * n2));
  return r;
}

double reconstruction_loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols())
    throw InvalidInput("reconstruction shape mismatch");
  return (x - x_hat).squaredNorm();
}

Eigen::MatrixXd reconstruction_loss_grad(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols())
    throw InvalidInput("reconstruction shape mismatch");
  return 2.0 * (x_hat - x);
}

double center_loss(const Eigen::VectorXd& e, Label y, const ClassCentroids& centroids) {
  const Eigen::VectorXd& c = centroids.of(y);
  if (c.size() != e.size()) throw InvalidInput("centroid dimension mismatch");
  return 0.5 * (e - c).squaredNorm();
}

CenterLossBatch center_loss_batch(const Eigen::MatrixXd& embeddings, std::span<const Label> labels,
                                  const ClassCentroids& centroids) {
  const auto n = embeddings.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw InvalidInput("label count mismatch");
  if (centroids.genuine.size() != embeddings.cols())
    throw InvalidInput("centroid dimension mismatch");
  CenterLossBatch out;
  out.grad = Eigen::MatrixXd::Zero(n, embeddings.cols());
  out.updated = centroids;
  if (n == 0) return out;

  Eigen::VectorXd drift[2] = {Eigen::VectorXd::Zero(embeddings.cols()),
                              Eigen::VectorXd::Zero(embeddings.cols())};
  int count[2] = {0, 0};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Label y = labels[static_cast<std::size_t>(i)];
    const Eigen::VectorXd diff = embeddings.row(i).transpose() - centroids.of(y);
    out.loss += 0.5 * diff.squaredNorm();
    out.grad.row(i) = diff.transpose() / static_cast<double>(n);
    const int k = static_cast<int>(y);
    drift[k] -= diff;  // accumulates c_y - e_i
    ++count[k];
  }
  out.loss /= static_cast<double>(n);
  for (int k = 0; k < 2; ++k) {
    if (count[k] == 0) continue;
    out.updated.of(static_cast<Label>(k)) -= centroids.update_rate * drift[k] / count[k];
  }
  return out;
}

double composite_loss(LossMode mode, const LossParts& p, const LossWeights& w) {
  auto need = [mode](const std::optional<double>& v, const char* name) {
    if (!v) throw InvalidConfig(std::string(to_string(mode)) + " loss requires part " + name);
    return *v;
  };
  switch (mode) {
    case LossMode::kCe: return need(p.ce, "ce");
    case LossMode::kCl: return need(p.ce, "ce") + w.cl_gamma * need(p.cl, "cl");
    case LossMode::kSnn: return need(p.ce1, "ce1") + need(p.ce2, "ce2") + need(p.snn, "snn");
    case LossMode::kSnnRel:
      return need(p.ce1, "ce1") + need(p.ce2, "ce2") + need(p.snn, "snn") +
             w.rel_weight * (need(p.rel1, "rel1") + need(p.rel2, "rel2"));
  }
  throw InvalidConfig("unknown loss mode");
}

}  // namespace antispoof
