#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "antispoof/dataset.hpp"
#include "antispoof/losses.hpp"
#include "antispoof/metrics.hpp"
#include "antispoof/model.hpp"

namespace antispoof {

struct TrainConfig {
  double lr = 3.95e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int patience = 15;
  std::size_t num_samples = 1'000'000;  // pairs per epoch in Siamese modes
  int max_epochs = 200;
  std::uint64_t seed = 0;
  LossMode mode = LossMode::kSnn;

  void validate() const;
};

// Adam with decoupled weight decay on kernel parameters:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps, double weight_decay);
  explicit Adam(const TrainConfig& cfg)
      : Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay) {}

  // Applies one update to every trainable parameter from its accumulated grad.
  void step(std::span<nn::Parameter* const> params);
  std::size_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<Moments> moments_;
};

struct TrainState {
  int epoch = 0;
  double best_dev_eer = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
};

enum class StopDecision { kContinue, kStop };

// Records one epoch's dev EER. Only a strict improvement resets the counter;
// stops once `patience` consecutive epochs failed to improve.
StopDecision early_stop_check(TrainState& state, double dev_eer, int patience);

// Output bias log(1 / pos_weight) (log 9 by default) in the weighted-CE
// modes, 0 otherwise.
void init_output_bias(Model& model, LossMode mode, const LossWeights& weights);

// Feature matrices addressed by record index: either held in memory or read
// from per-utterance cache files on access.
class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(std::vector<FeatureMatrix> features);
  static FeatureStore from_cache(const std::filesystem::path& dir,
                                 std::span<const UtteranceRecord> records, bool preload);

  std::shared_ptr<const FeatureMatrix> get(std::size_t index) const;
  std::size_t size() const { return cached_.size(); }

 private:
  std::vector<std::filesystem::path> paths_;
  std::vector<std::shared_ptr<const FeatureMatrix>> cached_;
};

std::filesystem::path feature_cache_path(const std::filesystem::path& dir, const std::string& utt_id);

// Inference-mode scores for every record of a split.
std::vector<TrialScore> score_records(const Model& model, std::span<const UtteranceRecord> records,
                                      const FeatureStore& features, int batch_size = 16);

// Owns the optimizer, the pair sampler and the center-loss centroids across
// epochs. Both Siamese branches run through the same Model instance.
class Trainer {
 public:
  Trainer(Model& model, const TrainConfig& cfg, const LossWeights& weights,
          std::span<const UtteranceRecord> records, const FeatureStore& features);

  // One epoch; returns the mean composite loss over its steps. Throws
  // TrainingDiverged on a non-finite loss.
  double train_epoch();

  int epochs_done() const { return epoch_; }
  std::size_t global_step() const { return step_; }
  const ClassCentroids& centroids() const { return centroids_; }

 private:
  double single_branch_step(std::span<const std::size_t> batch);
  double siamese_step(std::span<const PairRef> batch);
  void apply_update(double loss);

  Model& model_;
  TrainConfig cfg_;
  LossWeights weights_;
  std::vector<UtteranceRecord> records_;
  const FeatureStore& features_;
  Adam adam_;
  std::optional<SnnSampler> sampler_;
  ClassCentroids centroids_;
  int epoch_ = 0;
  std::size_t step_ = 0;
};

struct ExperimentConfig {
  ModelSpec model;
  TrainConfig train;
  LossWeights loss;
  std::filesystem::path train_manifest;
  std::filesystem::path dev_manifest;
  std::filesystem::path eval_manifest;  // optional
  std::filesystem::path feature_dir;
  bool preload_features = true;

  void validate() const;
};

// Flat "key = value" text; '#' starts a comment. Unknown keys are rejected.
// Relative paths resolve against `base_dir`.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::filesystem::path& base_dir = {});
ExperimentConfig parse_config(const std::filesystem::path& path);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_eer = 0.0;
  int epochs_since_best = 0;
};

struct Split {
  std::vector<UtteranceRecord> records;
  FeatureStore features;
};

struct ExperimentData {
  Split train, dev;
  std::optional<Split> eval;
};

struct ExperimentResult {
  double best_dev_eer = 1.0;
  int best_epoch = 0;
  std::vector<EpochLog> history;
  std::vector<TrialScore> dev_scores;
  std::vector<TrialScore> eval_scores;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg);

// Trains until early stopping or max_epochs, keeps the best-dev parameters and
// writes model.ckpt, train.log, dev.scores and (with eval data) eval.scores
// into `out_dir`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                                const std::filesystem::path& out_dir);
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace antispoof
