#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "antispoof/dataset.hpp"

namespace antispoof {

// Higher scores mean "more likely spoofed".
struct TrialScore {
  std::string utt_id;
  double score = 0.0;
};

// One operating point of the threshold sweep. A trial is called spoofed when
// its score is >= threshold; far is the genuine fraction called spoofed, frr
// the spoofed fraction called genuine.
struct DetPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

// Thresholds are the sorted unique scores followed by +inf.
std::vector<DetPoint> det_curve(std::span<const double> genuine, std::span<const double> spoofed);

// Crossing of far and frr, linearly interpolated between adjacent sweep points.
double compute_eer(std::span<const double> genuine, std::span<const double> spoofed);
double compute_eer(std::span<const TrialScore> scores, const LabelMap& labels);

struct FusionModel {
  std::vector<double> weights;
  double bias = 0.0;
};

struct FusionOptions {
  int max_iterations = 20000;
  double learning_rate = 1.0;
  double tolerance = 1e-10;  // on the gradient norm
};

// Unregularized logistic regression on stacked subsystem scores, fitted by
// full-batch gradient ascent. Subsystems must score the same utterance ids.
FusionModel fit_fusion(std::span<const std::vector<TrialScore>> subsystems, const LabelMap& labels,
                       const FusionOptions& opts = {});

// sigmoid(w . s + b) per utterance, ordered by utt_id.
std::vector<TrialScore> apply_fusion(const FusionModel& model,
                                     std::span<const std::vector<TrialScore>> subsystems);

// "utt_id score" per line.
std::vector<TrialScore> read_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, std::span<const TrialScore> scores);
// "bias" line followed by one weight per line.
FusionModel read_fusion_model(const std::filesystem::path& path);
void write_fusion_model(const std::filesystem::path& path, const FusionModel& model);
void write_det_curve(const std::filesystem::path& path, std::span<const DetPoint> curve);

std::string format_score(double score);

}  // namespace antispoof
