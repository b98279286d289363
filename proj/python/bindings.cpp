#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "antispoof/audio.hpp"
#include "antispoof/dataset.hpp"
#include "antispoof/errors.hpp"
#include "antispoof/features.hpp"
#include "antispoof/losses.hpp"
#include "antispoof/metrics.hpp"
#include "antispoof/model.hpp"
#include "antispoof/training.hpp"

namespace py = pybind11;
using namespace antispoof;

namespace {

AudioBuffer as_audio(std::vector<double> samples, int sample_rate) {
  AudioBuffer a;
  a.samples = std::move(samples);
  a.sample_rate = sample_rate;
  return a;
}

FeatureMatrix as_feature(const Eigen::MatrixXd& data, FeatureKind kind) { return FeatureMatrix{kind, data}; }

std::vector<TrialScore> as_trials(const std::map<std::string, double>& scores) {
  std::vector<TrialScore> out;
  for (const auto& [id, s] : scores) out.push_back({id, s});
  return out;
}

std::map<std::string, double> as_dict(const std::vector<TrialScore>& scores) {
  std::map<std::string, double> out;
  for (const auto& t : scores) out[t.utt_id] = t.score;
  return out;
}

LabelMap as_labels(const std::map<std::string, bool>& spoofed) {
  LabelMap out;
  for (const auto& [id, s] : spoofed) out[id] = s ? Label::kSpoofed : Label::kGenuine;
  return out;
}

}  // namespace

PYBIND11_MODULE(_antispoof, m) {
  m.doc() = "Replay-attack countermeasure core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidAudio>(m, "InvalidAudio", base.ptr());
  py::register_exception<InvalidConfig>(m, "InvalidConfig", base.ptr());
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<InvalidDataset>(m, "InvalidDataset", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", base.ptr());

  py::enum_<FeatureKind>(m, "FeatureKind")
      .value("LOGSPEC", FeatureKind::kLogSpec)
      .value("LFBANK", FeatureKind::kLfbank)
      .value("GDGRAM", FeatureKind::kGdGram);
  py::enum_<Pooling>(m, "Pooling").value("GAP", Pooling::kGap).value("GAVP", Pooling::kGavp);
  py::enum_<LossMode>(m, "LossMode")
      .value("CE", LossMode::kCe)
      .value("CL", LossMode::kCl)
      .value("SNN", LossMode::kSnn)
      .value("SNN_REL", LossMode::kSnnRel);

  // Audio and features. Feature matrices cross the boundary as float64
  // arrays of shape (bins, frames).
  m.def("read_wav", [](const std::filesystem::path& p) { return read_wav(p).samples; }, py::arg("path"));
  m.def(
      "cut_or_pad",
      [](std::vector<double> samples, double seconds) {
        return cut_or_pad(as_audio(std::move(samples), kSampleRate), seconds).samples;
      },
      py::arg("samples"), py::arg("buffer_seconds") = kDefaultBufferSeconds);
  m.def(
      "extract_feature",
      [](std::vector<double> samples, FeatureKind kind, double buffer_seconds, int sample_rate) {
        FrontendConfig fc;
        fc.buffer_seconds = buffer_seconds;
        return extract_feature(as_audio(std::move(samples), sample_rate), kind, fc).data;
      },
      py::arg("samples"), py::arg("kind"), py::arg("buffer_seconds") = kDefaultBufferSeconds,
      py::arg("sample_rate") = kSampleRate,
      "cut_or_pad, feature, scale to [-1, 1]");
  m.def("linear_filterbank", &linear_filterbank, py::arg("num_filters") = kDefaultFilters, py::arg("fft_bins") = 401);
  m.def(
      "read_feature_cache", [](const std::filesystem::path& p) { return read_feature_cache(p).data; }, py::arg("path"));

  // Dataset.
  m.def(
      "make_toy_corpus",
      [](int genuine, int spoofed, std::uint64_t seed, const std::filesystem::path& out_dir, double duration) {
        ToyCorpusOptions o;
        o.duration = duration;
        std::vector<std::pair<std::string, bool>> out;
        for (const auto& r : make_toy_corpus(genuine, spoofed, seed, out_dir, o))
          out.emplace_back(r.utt_id, r.label == Label::kSpoofed);
        return out;
      },
      py::arg("genuine"), py::arg("spoofed"), py::arg("seed"), py::arg("out_dir"), py::arg("duration") = 1.0,
      "Returns (utt_id, is_spoofed) pairs; writes <utt_id>.wav files.");
  m.def(
      "create_snn_dataset",
      [](const std::vector<bool>& spoofed, std::size_t num_samples, std::uint64_t seed) {
        std::vector<UtteranceRecord> recs;
        for (std::size_t i = 0; i < spoofed.size(); ++i)
          recs.push_back({std::to_string(i), spoofed[i] ? Label::kSpoofed : Label::kGenuine, Subset::kTrain, ""});
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& p : create_snn_dataset(recs, SamplerConfig{num_samples, seed}))
          out.emplace_back(p.first, p.second);
        return out;
      },
      py::arg("is_spoofed"), py::arg("num_samples"), py::arg("seed"),
      "Index pairs into the given label list.");

  // Losses.
  m.def(
      "weighted_ce", [](double s, bool spoofed, double w) { return weighted_ce(s, spoofed ? Label::kSpoofed : Label::kGenuine, w); },
      py::arg("score"), py::arg("spoofed"), py::arg("pos_weight") = 1.0);
  m.def(
      "snn_hinge",
      [](const Eigen::VectorXd& a, const Eigen::VectorXd& b, bool same_label, double margin) {
        return snn_hinge(a, b, Label::kGenuine, same_label ? Label::kGenuine : Label::kSpoofed, margin).loss;
      },
      py::arg("e1"), py::arg("e2"), py::arg("same_label"), py::arg("margin") = 0.5);
  m.def("reconstruction_loss", &reconstruction_loss, py::arg("x"), py::arg("x_hat"));

  // Model.
  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init<>())
      .def_readwrite("input_kind", &ModelSpec::input_kind)
      .def_readwrite("pooling", &ModelSpec::pooling)
      .def_readwrite("with_decoder", &ModelSpec::with_decoder)
      .def_readwrite("stage_filters", &ModelSpec::stage_filters)
      .def_readwrite("stage_blocks", &ModelSpec::stage_blocks)
      .def_property_readonly("embedding_dim", &ModelSpec::embedding_dim)
      .def_property_readonly("input_bins", &ModelSpec::input_bins);

  py::class_<Model>(m, "Model")
      .def(py::init([](const ModelSpec& s, std::uint64_t seed) { return build_model(s, seed); }), py::arg("spec"),
           py::arg("seed") = 0)
      .def_property_readonly("spec", &Model::spec)
      .def_property_readonly("trainable_parameter_count", &Model::trainable_parameter_count)
      .def_property_readonly("decoder_parameter_count", &Model::decoder_parameter_count)
      .def("conv_output_shape", &Model::conv_output_shape, py::arg("bins"), py::arg("frames"))
      .def(
          "embed",
          [](const Model& model, const Eigen::MatrixXd& x) {
            const auto r = embed(model, as_feature(x, model.spec().input_kind));
            return py::make_tuple(r.embedding, r.score);
          },
          py::arg("feature"), "(embedding, score) for one feature matrix")
      .def(
          "score",
          [](const Model& model, const std::vector<Eigen::MatrixXd>& xs) {
            std::vector<FeatureMatrix> feats;
            for (const auto& x : xs) feats.push_back(as_feature(x, model.spec().input_kind));
            std::vector<const FeatureMatrix*> ptrs;
            for (const auto& f : feats) ptrs.push_back(&f);
            return score_features(model, ptrs);
          },
          py::arg("features"))
      .def(
          "reconstruct",
          [](const Model& model, const Eigen::MatrixXd& x) {
            const FeatureMatrix f = as_feature(x, model.spec().input_kind);
            return model.forward(stack_features({&f}), false, true).reconstructions.front();
          },
          py::arg("feature"))
      .def("save", [](const Model& model, const std::filesystem::path& p) { save_checkpoint(p, model); },
           py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  // Metrics.
  m.def(
      "compute_eer",
      [](const std::vector<double>& genuine, const std::vector<double>& spoofed) { return compute_eer(genuine, spoofed); },
      py::arg("genuine"), py::arg("spoofed"));
  m.def(
      "fit_fusion",
      [](const std::vector<std::map<std::string, double>>& subsystems, const std::map<std::string, bool>& spoofed) {
        std::vector<std::vector<TrialScore>> subs;
        for (const auto& s : subsystems) subs.push_back(as_trials(s));
        const FusionModel fm = fit_fusion(subs, as_labels(spoofed));
        return py::make_tuple(fm.weights, fm.bias);
      },
      py::arg("subsystems"), py::arg("is_spoofed"), "Returns (weights, bias).");
  m.def(
      "apply_fusion",
      [](const std::vector<double>& weights, double bias, const std::vector<std::map<std::string, double>>& subsystems) {
        std::vector<std::vector<TrialScore>> subs;
        for (const auto& s : subsystems) subs.push_back(as_trials(s));
        return as_dict(apply_fusion(FusionModel{weights, bias}, subs));
      },
      py::arg("weights"), py::arg("bias"), py::arg("subsystems"));

  // Training.
  m.def(
      "train",
      [](const std::filesystem::path& config, const std::filesystem::path& out, std::optional<std::uint64_t> seed) {
        ExperimentConfig cfg = parse_config(config);
        if (seed) cfg.train.seed = *seed;
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg, out);
        }
        py::dict d;
        d["best_dev_eer"] = r.best_dev_eer;
        d["best_epoch"] = r.best_epoch;
        py::list history;
        for (const auto& h : r.history)
          history.append(py::make_tuple(h.epoch, h.train_loss, h.dev_eer, h.epochs_since_best));
        d["history"] = history;
        d["dev_scores"] = as_dict(r.dev_scores);
        d["eval_scores"] = as_dict(r.eval_scores);
        return d;
      },
      py::arg("config"), py::arg("out_dir"), py::arg("seed") = py::none(),
      "Runs a config file end to end; artifacts land in out_dir.");
}
