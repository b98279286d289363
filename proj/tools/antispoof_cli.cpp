// Command-line front end: extract, make-toy, train, score, eer, fuse.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 training divergence.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "antispoof/audio.hpp"
#include "antispoof/dataset.hpp"
#include "antispoof/errors.hpp"
#include "antispoof/features.hpp"
#include "antispoof/metrics.hpp"
#include "antispoof/model.hpp"
#include "antispoof/training.hpp"

namespace fs = std::filesystem;
using namespace antispoof;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kDiverged = 3;

struct ExtractArgs {
  fs::path manifest, audio_dir, out;
  std::string feature = "logspec";
  double buffer_seconds = kDefaultBufferSeconds;
  bool force = false;
};

int run_extract(const ExtractArgs& a) {
  const FeatureKind kind = parse_feature_kind(a.feature);
  const auto records = parse_manifest(a.manifest, Subset::kTrain);
  FrontendConfig fc;
  fc.buffer_seconds = a.buffer_seconds;
  fs::create_directories(a.out);

  std::size_t written = 0, skipped = 0;
  std::vector<std::string> failures;
  for (const auto& r : records) {
    const fs::path target = feature_cache_path(a.out, r.utt_id);
    if (!a.force && fs::exists(target)) {
      ++skipped;
      continue;
    }
    try {
      write_feature_cache(target, extract_feature(read_wav(a.audio_dir / r.audio_path), kind, fc));
      ++written;
    } catch (const Error& e) {
      failures.push_back(r.utt_id + ": " + e.what());
    }
  }
  std::printf("extracted %zu, skipped %zu, failed %zu\n", written, skipped, failures.size());
  for (const auto& f : failures) std::fprintf(stderr, "failed %s\n", f.c_str());
  return failures.empty() ? kOk : kData;
}

struct ToyArgs {
  fs::path out;
  std::uint64_t seed = 0;
  int genuine = 20, spoofed = 20;
  double duration = 1.0;
};

int run_make_toy(const ToyArgs& a) {
  if (a.genuine < 1 || a.spoofed < 1) throw InvalidConfig("--genuine and --spoofed must be >= 1");
  if (!(a.duration > 0.0)) throw InvalidConfig("--duration must be > 0");
  const fs::path audio = a.out / "audio";
  fs::create_directories(audio);
  const std::pair<Subset, const char*> subsets[] = {
      {Subset::kTrain, "train.txt"}, {Subset::kDev, "dev.txt"}, {Subset::kEval, "eval.txt"}};
  std::uint64_t stream = 0;
  for (const auto& [subset, name] : subsets) {
    ToyCorpusOptions o;
    o.duration = a.duration;
    o.subset = subset;
    const auto recs = make_toy_corpus(a.genuine, a.spoofed, mix_seed(a.seed, stream++), audio, o);
    write_manifest(a.out / name, recs);
    std::printf("%s: %zu utterances\n", name, recs.size());
  }
  return kOk;
}

struct TrainArgs {
  fs::path config, out;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  ExperimentConfig cfg = parse_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  try {
    const auto r = run_experiment(cfg, a.out);
    std::printf("epochs %zu, best epoch %d, best dev EER %.2f%%\n", r.history.size(), r.best_epoch,
                100.0 * r.best_dev_eer);
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDiverged;
  }
  return kOk;
}

struct ScoreArgs {
  fs::path checkpoint, manifest, features, out;
};

int run_score(const ScoreArgs& a) {
  const Model model = load_checkpoint(a.checkpoint);
  const auto records = parse_manifest(a.manifest, Subset::kEval);
  const FeatureStore store = FeatureStore::from_cache(a.features, records, false);
  write_scores(a.out, score_records(model, records, store));
  std::printf("scored %zu utterances\n", records.size());
  return kOk;
}

// Every score needs a label and every labelled utterance needs a score.
void check_ids(const std::vector<TrialScore>& scores, const std::vector<UtteranceRecord>& records) {
  const LabelMap labels = label_map(records);
  std::set<std::string> seen;
  for (const auto& s : scores) {
    if (!labels.count(s.utt_id)) throw InvalidInput("utterance '" + s.utt_id + "' is not in the manifest");
    if (!seen.insert(s.utt_id).second) throw InvalidInput("utterance '" + s.utt_id + "' is scored twice");
  }
  for (const auto& r : records)
    if (!seen.count(r.utt_id)) throw InvalidInput("utterance '" + r.utt_id + "' has no score");
}

struct EerArgs {
  fs::path scores, manifest, curve;
};

int run_eer(const EerArgs& a) {
  const auto scores = read_scores(a.scores);
  const auto records = parse_manifest(a.manifest, Subset::kEval);
  check_ids(scores, records);
  const LabelMap labels = label_map(records);
  std::printf("%.2f\n", 100.0 * compute_eer(scores, labels));
  if (!a.curve.empty()) {
    std::vector<double> g, s;
    for (const auto& t : scores) (labels.at(t.utt_id) == Label::kGenuine ? g : s).push_back(t.score);
    write_det_curve(a.curve, det_curve(g, s));
  }
  return kOk;
}

struct FuseArgs {
  fs::path manifest, model, out;
  std::vector<fs::path> dev, eval;
};

int run_fuse(const FuseArgs& a) {
  const auto records = parse_manifest(a.manifest, Subset::kDev);
  const LabelMap labels = label_map(records);
  std::vector<std::vector<TrialScore>> dev;
  for (const auto& p : a.dev) {
    dev.push_back(read_scores(p));
    check_ids(dev.back(), records);
  }
  const FusionModel model = fit_fusion(dev, labels);
  std::printf("fused dev EER %.2f\n", 100.0 * compute_eer(apply_fusion(model, dev), labels));
  if (!a.model.empty()) write_fusion_model(a.model, model);
  if (!a.eval.empty()) {
    if (a.eval.size() != a.dev.size()) throw InvalidConfig("--eval needs one file per --dev file");
    if (a.out.empty()) throw InvalidConfig("--eval requires --out");
    std::vector<std::vector<TrialScore>> eval;
    for (const auto& p : a.eval) eval.push_back(read_scores(p));
    write_scores(a.out, apply_fusion(model, eval));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Replay-attack countermeasure toolkit"};
  app.require_subcommand(1);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Compute feature cache files for a manifest");
  extract->add_option("--manifest", ex.manifest, "Protocol file")->required();
  extract->add_option("--audio-dir", ex.audio_dir, "Directory holding <utt_id>.wav")->required();
  extract->add_option("--feature", ex.feature, "logspec, lfbank or gdgram")
      ->check(CLI::IsMember({"logspec", "lfbank", "gdgram"}));
  extract->add_option("--out", ex.out, "Feature cache directory")->required();
  extract->add_option("--buffer-seconds", ex.buffer_seconds, "Cut or pad length in seconds");
  extract->add_flag("--force", ex.force, "Rewrite existing cache files");

  ToyArgs toy;
  auto* make_toy = app.add_subcommand("make-toy", "Generate the synthetic train/dev/eval corpus");
  make_toy->add_option("--out", toy.out, "Output directory")->required();
  make_toy->add_option("--seed", toy.seed, "Random seed");
  make_toy->add_option("--genuine", toy.genuine, "Genuine utterances per subset");
  make_toy->add_option("--spoofed", toy.spoofed, "Spoofed utterances per subset");
  make_toy->add_option("--duration", toy.duration, "Seconds per utterance");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model and score dev/eval");
  train->add_option("--config", tr.config, "key = value config file")->required();
  train->add_option("--out", tr.out, "Output directory")->required();
  train->add_option("--seed", tr.seed, "Overrides the config seed");

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "Score a manifest with a checkpoint");
  score->add_option("--checkpoint", sc.checkpoint, "Model checkpoint")->required();
  score->add_option("--manifest", sc.manifest, "Protocol file")->required();
  score->add_option("--features", sc.features, "Feature cache directory")->required();
  score->add_option("--out", sc.out, "Score file to write")->required();

  EerArgs er;
  auto* eer = app.add_subcommand("eer", "Print the EER of a score file in percent");
  eer->add_option("--scores", er.scores, "Score file")->required();
  eer->add_option("--manifest", er.manifest, "Protocol file with the labels")->required();
  eer->add_option("--curve", er.curve, "Write the (threshold, FAR, FRR) sweep here");

  FuseArgs fu;
  auto* fuse = app.add_subcommand("fuse", "Fit logistic-regression fusion on dev scores");
  fuse->add_option("--manifest", fu.manifest, "Dev protocol file")->required();
  fuse->add_option("--dev", fu.dev, "Dev score file, one per subsystem")->required();
  fuse->add_option("--eval", fu.eval, "Eval score file, same order as --dev");
  fuse->add_option("--model", fu.model, "Write the fusion model here");
  fuse->add_option("--out", fu.out, "Fused eval score file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*extract) return run_extract(ex);
    if (*make_toy) return run_make_toy(toy);
    if (*train) return run_train(tr);
    if (*score) return run_score(sc);
    if (*eer) return run_eer(er);
    if (*fuse) return run_fuse(fu);
  } catch (const InvalidConfig& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const TrainingDiverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
