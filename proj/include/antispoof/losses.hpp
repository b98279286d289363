#pragma once

#include <optional>
#include <span>
#include <string_view>

#include <Eigen/Dense>

#include "antispoof/dataset.hpp"

namespace antispoof {

enum class LossMode { kCe, kCl, kSnn, kSnnRel };

std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view name);
inline bool is_siamese(LossMode mode) { return mode == LossMode::kSnn || mode == LossMode::kSnnRel; }

struct LossWeights {
  double cl_gamma = 0.001;
  double rel_weight = 50.0;
  double margin = 0.5;
  double ce_pos_weight = 1.0 / 9.0;  // weight of spoofed inputs in single-branch CE
  double cl_update_rate = 0.5;
  void validate() const;
};

inline constexpr double kScoreClamp = 1e-7;

// -w(y) * [y log s + (1 - y) log(1 - s)], with w(spoofed) = pos_weight and
// w(genuine) = 1. The score is clamped to [1e-7, 1 - 1e-7].
double weighted_ce(double score, Label y, double pos_weight);
// d/dscore; zero where the clamp is active.
double weighted_ce_grad(double score, Label y, double pos_weight);

// Zero when either vector has zero norm.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct HingeResult {
  double loss = 0.0;
  Eigen::VectorXd grad_e1;
  Eigen::VectorXd grad_e2;
};

// max(0, m - l_d * cos(e1, e2)), l_d = +1 for equal labels and -1 otherwise.
HingeResult snn_hinge(const Eigen::VectorXd& e1, const Eigen::VectorXd& e2, Label y1, Label y2,
                      double margin);

// Squared Frobenius norm of x - x_hat.
double reconstruction_loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat);
// d/dx_hat
Eigen::MatrixXd reconstruction_loss_grad(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat);

struct ClassCentroids {
  Eigen::VectorXd genuine;
  Eigen::VectorXd spoofed;
  double update_rate = 0.5;

  ClassCentroids() = default;
  ClassCentroids(Eigen::Index dim, double rate)
      : genuine(Eigen::VectorXd::Zero(dim)), spoofed(Eigen::VectorXd::Zero(dim)), update_rate(rate) {}
  const Eigen::VectorXd& of(Label y) const { return y == Label::kGenuine ? genuine : spoofed; }
  Eigen::VectorXd& of(Label y) { return y == Label::kGenuine ? genuine : spoofed; }
};

// 0.5 * ||e - c_y||^2; gradient w.r.t. e is e - c_y.
double center_loss(const Eigen::VectorXd& e, Label y, const ClassCentroids& centroids);

struct CenterLossBatch {
  double loss = 0.0;             // mean over the batch
  Eigen::MatrixXd grad;          // d(mean loss)/d embeddings, [batch, dim]
  ClassCentroids updated;
};

// Batch center loss, plus the centroid update
//   c_y <- c_y - rate * mean_{i: y_i = y}(c_y - e_i)
// for every class present in the batch.
CenterLossBatch center_loss_batch(const Eigen::MatrixXd& embeddings, std::span<const Label> labels,
                                  const ClassCentroids& centroids);

struct LossParts {
  std::optional<double> ce, cl, ce1, ce2, snn, rel1, rel2;
};

// CE: L_ce. CL: L_ce + gamma L_cl. SNN: L_ce1 + L_ce2 + L_snn.
// SNN_REL: SNN + rel_weight (L_rel1 + L_rel2).
double composite_loss(LossMode mode, const LossParts& parts, const LossWeights& weights);

}  // namespace antispoof
