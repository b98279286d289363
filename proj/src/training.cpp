#include "antispoof/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "antispoof/errors.hpp"

namespace antispoof {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidConfig("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidConfig("beta1 and beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw InvalidConfig("adam_eps must be > 0");
  if (weight_decay < 0.0) throw InvalidConfig("weight_decay must be >= 0");
  if (patience < 1) throw InvalidConfig("patience must be >= 1");
  if (max_epochs < 1) throw InvalidConfig("max_epochs must be >= 1");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (is_siamese(mode) && batch_size < 2) throw InvalidConfig("batch_size must be >= 2 in SNN modes");
  if (num_samples < 1) throw InvalidConfig("num_samples must be >= 1");
}

Adam::Adam(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void Adam::step(std::span<nn::Parameter* const> params) {
  if (moments_.size() != params.size()) {
    moments_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      moments_[i].m.assign(params[i]->size(), 0.0);
      moments_[i].v.assign(params[i]->size(), 0.0);
    }
  }
  ++t_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Parameter& p = *params[i];
    if (!p.trainable) continue;
    auto& mom = moments_[i];
    const double decay = p.decay ? weight_decay_ : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      mom.m[j] = beta1_ * mom.m[j] + (1.0 - beta1_) * g;
      mom.v[j] = beta2_ * mom.v[j] + (1.0 - beta2_) * g * g;
      const double m_hat = mom.m[j] / correction1;
      const double v_hat = mom.v[j] / correction2;
      p.value[j] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) + decay * p.value[j]);
    }
  }
}

StopDecision early_stop_check(TrainState& state, double dev_eer, int patience) {
  ++state.epoch;
  if (dev_eer < state.best_dev_eer) {
    state.best_dev_eer = dev_eer;
    state.epochs_since_best = 0;
  } else {
    ++state.epochs_since_best;
  }
  return state.epochs_since_best >= patience ? StopDecision::kStop : StopDecision::kContinue;
}

void init_output_bias(Model& model, LossMode mode, const LossWeights& weights) {
  auto& bias = model.output_bias().value;
  const bool weighted = (mode == LossMode::kCe || mode == LossMode::kCl) &&
                        weights.ce_pos_weight > 0.0 && weights.ce_pos_weight != 1.0;
  bias[0] = weighted ? std::log(1.0 / weights.ce_pos_weight) : 0.0;
  model.round_to_float();
}

// ---------------------------------------------------------------------------

FeatureStore::FeatureStore(std::vector<FeatureMatrix> features) {
  cached_.reserve(features.size());
  for (auto& f : features) cached_.push_back(std::make_shared<const FeatureMatrix>(std::move(f)));
  paths_.resize(cached_.size());
}

std::filesystem::path feature_cache_path(const std::filesystem::path& dir, const std::string& utt_id) {
  return dir / (utt_id + ".feat");
}

FeatureStore FeatureStore::from_cache(const std::filesystem::path& dir,
                                      std::span<const UtteranceRecord> records, bool preload) {
  FeatureStore store;
  store.paths_.reserve(records.size());
  store.cached_.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    store.paths_.push_back(feature_cache_path(dir, records[i].utt_id));
    if (preload) store.cached_[i] = std::make_shared<const FeatureMatrix>(read_feature_cache(store.paths_[i]));
  }
  return store;
}

std::shared_ptr<const FeatureMatrix> FeatureStore::get(std::size_t index) const {
  if (index >= cached_.size()) throw InvalidInput("feature index out of range");
  if (cached_[index]) return cached_[index];
  return std::make_shared<const FeatureMatrix>(read_feature_cache(paths_[index]));
}

std::vector<TrialScore> score_records(const Model& model, std::span<const UtteranceRecord> records,
                                      const FeatureStore& features, int batch_size) {
  std::vector<TrialScore> out;
  out.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(records.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::shared_ptr<const FeatureMatrix>> hold;
    std::vector<const FeatureMatrix*> batch;
    for (std::size_t i = start; i < end; ++i) {
      hold.push_back(features.get(i));
      batch.push_back(hold.back().get());
    }
    const auto scores = score_features(model, batch, batch_size);
    for (std::size_t i = start; i < end; ++i) out.push_back({records[i].utt_id, scores[i - start]});
  }
  return out;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Model& model, const TrainConfig& cfg, const LossWeights& weights,
                 std::span<const UtteranceRecord> records, const FeatureStore& features)
    : model_(model),
      cfg_(cfg),
      weights_(weights),
      records_(records.begin(), records.end()),
      features_(features),
      adam_(cfg),
      centroids_(model.spec().embedding_dim(), weights.cl_update_rate) {
  cfg_.validate();
  weights_.validate();
  if (records_.empty()) throw InvalidDataset("empty training set");
  if (features_.size() != records_.size()) throw InvalidDataset("feature store does not match records");
  if (cfg_.mode == LossMode::kSnnRel && !model_.spec().with_decoder)
    throw InvalidConfig("SNN_REL mode requires a model with decoder");
  if (is_siamese(cfg_.mode))
    sampler_.emplace(records_, SamplerConfig{cfg_.num_samples, mix_seed(cfg_.seed, 0x5a)});
  model_.zero_grad();
}

void Trainer::apply_update(double loss) {
  if (!std::isfinite(loss)) throw TrainingDiverged(step_);
  const auto params = model_.parameters();
  adam_.step(params);
  model_.round_to_float();
  model_.zero_grad();
  ++step_;
}

double Trainer::single_branch_step(std::span<const std::size_t> batch) {
  std::vector<std::shared_ptr<const FeatureMatrix>> hold;
  std::vector<const FeatureMatrix*> feats;
  std::vector<Label> labels;
  for (std::size_t idx : batch) {
    hold.push_back(features_.get(idx));
    feats.push_back(hold.back().get());
    labels.push_back(records_[idx].label);
  }
  const ModelTape tape = model_.forward(stack_features(feats), true);
  const auto n = static_cast<double>(batch.size());

  ModelGrad grad;
  grad.d_scores.resize(static_cast<Eigen::Index>(batch.size()));
  double ce = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double s = tape.scores[static_cast<Eigen::Index>(i)];
    ce += weighted_ce(s, labels[i], weights_.ce_pos_weight);
    grad.d_scores[static_cast<Eigen::Index>(i)] = weighted_ce_grad(s, labels[i], weights_.ce_pos_weight) / n;
  }
  LossParts parts;
  parts.ce = ce / n;

  std::optional<CenterLossBatch> cl;
  if (cfg_.mode == LossMode::kCl) {
    cl = center_loss_batch(tape.embeddings, labels, centroids_);
    parts.cl = cl->loss;
    grad.d_embeddings = weights_.cl_gamma * cl->grad;
  }
  const double loss = composite_loss(cfg_.mode, parts, weights_);
  if (!std::isfinite(loss)) throw TrainingDiverged(step_);

  model_.backward(tape, grad);
  model_.update_running(tape);
  apply_update(loss);
  if (cl) centroids_ = std::move(cl->updated);
  return loss;
}

double Trainer::siamese_step(std::span<const PairRef> batch) {
  const bool rel = cfg_.mode == LossMode::kSnnRel;
  std::vector<std::shared_ptr<const FeatureMatrix>> hold;
  std::vector<const FeatureMatrix*> first, second;
  for (const auto& p : batch) {
    hold.push_back(features_.get(p.first));
    first.push_back(hold.back().get());
    hold.push_back(features_.get(p.second));
    second.push_back(hold.back().get());
  }
  const ModelTape t1 = model_.forward(stack_features(first), true, rel);
  const ModelTape t2 = model_.forward(stack_features(second), true, rel);
  const auto count = static_cast<Eigen::Index>(batch.size());
  const double n = static_cast<double>(batch.size());

  ModelGrad g1, g2;
  g1.d_scores.resize(count);
  g2.d_scores.resize(count);
  g1.d_embeddings = Eigen::MatrixXd::Zero(count, t1.embeddings.cols());
  g2.d_embeddings = Eigen::MatrixXd::Zero(count, t2.embeddings.cols());
  double ce1 = 0.0, ce2 = 0.0, hinge = 0.0, rel1 = 0.0, rel2 = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const PairRef& p = batch[static_cast<std::size_t>(i)];
    // The sampler balances classes, so the Siamese CE terms are unweighted.
    ce1 += weighted_ce(t1.scores[i], p.first_label, 1.0);
    ce2 += weighted_ce(t2.scores[i], p.second_label, 1.0);
    g1.d_scores[i] = weighted_ce_grad(t1.scores[i], p.first_label, 1.0) / n;
    g2.d_scores[i] = weighted_ce_grad(t2.scores[i], p.second_label, 1.0) / n;
    const HingeResult h = snn_hinge(t1.embeddings.row(i).transpose(), t2.embeddings.row(i).transpose(),
                                    p.first_label, p.second_label, weights_.margin);
    hinge += h.loss;
    g1.d_embeddings.row(i) = h.grad_e1.transpose() / n;
    g2.d_embeddings.row(i) = h.grad_e2.transpose() / n;
    if (rel) {
      const auto& x1 = first[static_cast<std::size_t>(i)]->data;
      const auto& x2 = second[static_cast<std::size_t>(i)]->data;
      rel1 += reconstruction_loss(x1, t1.reconstructions[static_cast<std::size_t>(i)]);
      rel2 += reconstruction_loss(x2, t2.reconstructions[static_cast<std::size_t>(i)]);
      g1.d_reconstructions.push_back(weights_.rel_weight / n *
                                     reconstruction_loss_grad(x1, t1.reconstructions[static_cast<std::size_t>(i)]));
      g2.d_reconstructions.push_back(weights_.rel_weight / n *
                                     reconstruction_loss_grad(x2, t2.reconstructions[static_cast<std::size_t>(i)]));
    }
  }
  LossParts parts;
  parts.ce1 = ce1 / n;
  parts.ce2 = ce2 / n;
  parts.snn = hinge / n;
  if (rel) {
    parts.rel1 = rel1 / n;
    parts.rel2 = rel2 / n;
  }
  const double loss = composite_loss(cfg_.mode, parts, weights_);
  if (!std::isfinite(loss)) throw TrainingDiverged(step_);

  model_.backward(t1, g1);
  model_.backward(t2, g2);
  model_.update_running(t1);
  model_.update_running(t2);
  apply_update(loss);
  return loss;
}

double Trainer::train_epoch() {
  double total = 0.0;
  std::size_t steps = 0;
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  if (sampler_) {
    const std::vector<PairRef> pairs = sampler_->epoch(static_cast<std::uint64_t>(epoch_));
    for (std::size_t start = 0; start < pairs.size(); start += bs) {
      const std::size_t len = std::min(bs, pairs.size() - start);
      total += siamese_step(std::span(pairs).subspan(start, len));
      ++steps;
    }
  } else {
    std::vector<std::size_t> order(records_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(mix_seed(cfg_.seed, 0x200000 + static_cast<std::uint64_t>(epoch_)));
    shuffle_indices(order, rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      total += single_branch_step(std::span(order).subspan(start, len));
      ++steps;
    }
  }
  ++epoch_;
  return total / static_cast<double>(steps);
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  loss.validate();
  if (train.mode == LossMode::kSnnRel && !model.with_decoder)
    throw InvalidConfig("mode SNN_REL requires with_decoder = true");
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  auto load = [&cfg](const std::filesystem::path& manifest, Subset subset) {
    Split split;
    split.records = parse_manifest(manifest, subset);
    split.features = FeatureStore::from_cache(cfg.feature_dir, split.records, cfg.preload_features);
    return split;
  };
  ExperimentData data;
  data.train = load(cfg.train_manifest, Subset::kTrain);
  data.dev = load(cfg.dev_manifest, Subset::kDev);
  if (!cfg.eval_manifest.empty()) data.eval = load(cfg.eval_manifest, Subset::kEval);
  return data;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data,
                                const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  Model model = build_model(cfg.model, cfg.train.seed);
  init_output_bias(model, cfg.train.mode, cfg.loss);
  Trainer trainer(model, cfg.train, cfg.loss, data.train.records, data.train.features);
  const LabelMap dev_labels = label_map(data.dev.records);

  std::ofstream log(out_dir / "train.log");
  if (!log) throw IoError("cannot write " + (out_dir / "train.log").string());

  ExperimentResult result;
  TrainState state;
  Model best = model;
  for (int epoch = 1; epoch <= cfg.train.max_epochs; ++epoch) {
    const double loss = trainer.train_epoch();
    const double dev_eer = compute_eer(score_records(model, data.dev.records, data.dev.features), dev_labels);
    const StopDecision decision = early_stop_check(state, dev_eer, cfg.train.patience);
    if (state.epochs_since_best == 0) {
      best = model;
      result.best_epoch = epoch;
    }
    result.history.push_back({epoch, loss, dev_eer, state.epochs_since_best});
    char line[128];
    std::snprintf(line, sizeof line, "%d %.9g %.9g %d\n", epoch, loss, dev_eer, state.epochs_since_best);
    log << line << std::flush;
    if (decision == StopDecision::kStop) break;
  }

  result.best_dev_eer = state.best_dev_eer;
  save_checkpoint(out_dir / "model.ckpt", best);
  result.dev_scores = score_records(best, data.dev.records, data.dev.features);
  write_scores(out_dir / "dev.scores", result.dev_scores);
  if (data.eval) {
    result.eval_scores = score_records(best, data.eval->records, data.eval->features);
    write_scores(out_dir / "eval.scores", result.eval_scores);
  }
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  return run_experiment(cfg, load_experiment_data(cfg), out_dir);
}

}  // namespace antispoof
