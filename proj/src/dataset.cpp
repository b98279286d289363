#include "antispoof/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "antispoof/errors.hpp"

namespace antispoof {

std::string_view to_string(Label label) {
  return label == Label::kSpoofed ? "spoof" : "bonafide";
}

std::string_view to_string(Subset subset) {
  switch (subset) {
    case Subset::kTrain: return "train";
    case Subset::kDev: return "dev";
    case Subset::kEval: return "eval";
  }
  return "unknown";
}

Subset parse_subset(std::string_view name) {
  if (name == "train") return Subset::kTrain;
  if (name == "dev") return Subset::kDev;
  if (name == "eval") return Subset::kEval;
  throw InvalidConfig("unknown subset '" + std::string(name) + "'");
}

LabelMap label_map(std::span<const UtteranceRecord> records) {
  LabelMap out;
  out.reserve(records.size());
  for (const auto& r : records) out.emplace(r.utt_id, r.label);
  return out;
}

std::vector<UtteranceRecord> parse_manifest_text(std::string_view text, Subset subset) {
  std::vector<UtteranceRecord> out;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> cols;
    for (std::string tok; fields >> tok;) cols.push_back(std::move(tok));
    if (cols.empty()) continue;
    if (cols.size() < 2) throw ParseError("expected at least two columns", line_no);

    UtteranceRecord rec;
    const std::string& key = cols.back();
    if (key == "bonafide")
      rec.label = Label::kGenuine;
    else if (key == "spoof")
      rec.label = Label::kSpoofed;
    else
      throw ParseError("unknown key '" + key + "'", line_no);
    rec.utt_id = cols.size() >= 3 ? cols[1] : cols[0];
    rec.subset = subset;
    rec.audio_path = rec.utt_id + ".wav";
    if (!seen.insert(rec.utt_id).second)
      throw ParseError("duplicate utterance id '" + rec.utt_id + "'", line_no);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<UtteranceRecord> parse_manifest(const std::filesystem::path& path, Subset subset) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest_text(buf.str(), subset);
}

void write_manifest(const std::filesystem::path& path, std::span<const UtteranceRecord> records) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records)
    os << "TOY " << r.utt_id << " - - " << to_string(r.label) << '\n';
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  // Lemire-style rejection to remove modulo bias
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

void normalize_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m > 0.0)
    for (double& v : x) v *= peak / m;
}

std::vector<double> convolve_truncated(const std::vector<double>& x, const std::vector<double>& h,
                                       std::size_t delay) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    const std::size_t out = n + delay;
    double acc = 0.0;
    const std::size_t kmax = std::min(h.size(), out + 1);
    for (std::size_t k = 0; k < kmax; ++k) {
      const std::size_t t = out - k;
      if (t < x.size()) acc += h[k] * x[t];
    }
    y[n] = acc;
  }
  return y;
}

}  // namespace

AudioBuffer synth_tone_complex(std::mt19937_64& rng, double duration) {
  AudioBuffer out;
  out.samples.assign(buffer_samples(duration, kSampleRate), 0.0);
  const double sr = kSampleRate;
  const double f0 = 100.0 + 150.0 * uniform01(rng);
  const double vib_rate = 3.0 + 3.0 * uniform01(rng);
  const double vib_depth = 0.01 + 0.02 * uniform01(rng);
  const double env_rate = 2.0 + 3.0 * uniform01(rng);
  const double env_phase = 2.0 * std::numbers::pi * uniform01(rng);
  const double band_limit = 7600.0;

  const int harmonics = static_cast<int>(band_limit / (f0 * (1.0 + vib_depth)));
  std::vector<double> amp(static_cast<std::size_t>(harmonics)), phase(amp.size());
  for (int h = 0; h < harmonics; ++h) {
    amp[h] = (0.3 + 0.7 * uniform01(rng)) / std::sqrt(h + 1.0);
    phase[h] = 2.0 * std::numbers::pi * uniform01(rng);
  }
  double base_phase = 0.0;
  for (std::size_t n = 0; n < out.samples.size(); ++n) {
    const double t = n / sr;
    const double f = f0 * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * t));
    base_phase += 2.0 * std::numbers::pi * f / sr;
    double s = 0.0;
    for (int h = 0; h < harmonics; ++h) s += amp[h] * std::sin((h + 1) * base_phase + phase[h]);
    const double env = 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * env_rate * t + env_phase);
    out.samples[n] = env * s;
  }
  normalize_peak(out.samples, 0.5);
  return out;
}

AudioBuffer replay_channel(const AudioBuffer& audio, std::mt19937_64& rng) {
  const double sr = audio.sample_rate;

  // Windowed-sinc low-pass, cutoff 4 kHz, linear phase (delay compensated).
  constexpr int kTaps = 101;
  const double fc = 4000.0 / sr;
  std::vector<double> lp(kTaps);
  double gain = 0.0;
  for (int n = 0; n < kTaps; ++n) {
    const double m = n - (kTaps - 1) / 2.0;
    const double sinc = m == 0.0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
    const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (kTaps - 1));
    lp[n] = sinc * w;
    gain += lp[n];
  }
  for (double& v : lp) v /= gain;
  std::vector<double> y = convolve_truncated(audio.samples, lp, (kTaps - 1) / 2);

  // Room response: direct path plus an exponentially decaying noise tail.
  constexpr double kRt60 = 0.3;
  const auto rir_len = static_cast<std::size_t>(kRt60 * sr);
  std::vector<double> rir(rir_len);
  rir[0] = 1.0;
  for (std::size_t n = 1; n < rir_len; ++n)
    rir[n] = 0.3 * standard_normal(rng) * std::exp(-6.907755 * n / (kRt60 * sr));
  y = convolve_truncated(y, rir, 0);

  double power = 0.0;
  for (double v : y) power += v * v;
  power /= static_cast<double>(std::max<std::size_t>(y.size(), 1));
  const double noise_std = std::sqrt(power / std::pow(10.0, 30.0 / 10.0));
  for (double& v : y) v += noise_std * standard_normal(rng);

  normalize_peak(y, 0.5);
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples = std::move(y);
  return out;
}

std::vector<UtteranceRecord> make_toy_corpus(int n_genuine, int n_spoofed, std::uint64_t seed,
                                             const std::filesystem::path& out_dir,
                                             const ToyCorpusOptions& opts) {
  if (n_genuine < 1 || n_spoofed < 1)
    throw InvalidConfig("toy corpus needs at least one utterance per class");
  std::filesystem::create_directories(out_dir);
  const char subset_tag = opts.subset == Subset::kTrain ? 'T' : (opts.subset == Subset::kDev ? 'D' : 'E');

  std::vector<UtteranceRecord> records;
  const int total = n_genuine + n_spoofed;
  for (int i = 0; i < total; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s_%c_%07d", opts.prefix.c_str(), subset_tag, i + 1);
    UtteranceRecord rec;
    rec.utt_id = id;
    rec.label = i < n_genuine ? Label::kGenuine : Label::kSpoofed;
    rec.subset = opts.subset;
    rec.audio_path = rec.utt_id + ".wav";

    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    AudioBuffer audio = synth_tone_complex(rng, opts.duration);
    if (rec.label == Label::kSpoofed) audio = replay_channel(audio, rng);
    write_wav(out_dir / rec.audio_path, audio);
    records.push_back(std::move(rec));
  }
  return records;
}

SamplerState::SamplerState(std::span<const UtteranceRecord> records, std::uint64_t seed)
    : class_rng(mix_seed(seed, 0x5eed)) {
  for (std::size_t i = 0; i < records.size(); ++i)
    (records[i].label == Label::kGenuine ? genuine : spoofed).push_back(i);
  if (genuine.empty() || spoofed.empty())
    throw InvalidDataset("pair sampling needs at least one record of each label");
}

void epoch_reshuffle(SamplerState& state, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::sort(state.genuine.begin(), state.genuine.end());
  std::sort(state.spoofed.begin(), state.spoofed.end());
  shuffle_indices(state.genuine, rng);
  shuffle_indices(state.spoofed, rng);
  state.genuine_pos = 0;
  state.spoofed_pos = 0;
}

std::vector<PairRef> draw_pairs(SamplerState& state, std::size_t num_samples) {
  auto draw = [&state](std::size_t& index, Label& label) {
    const bool genuine = (state.class_rng() >> 63) == 0;
    auto& list = genuine ? state.genuine : state.spoofed;
    auto& pos = genuine ? state.genuine_pos : state.spoofed_pos;
    index = list[pos];
    label = genuine ? Label::kGenuine : Label::kSpoofed;
    pos = (pos + 1) % list.size();
  };
  std::vector<PairRef> pairs(num_samples);
  for (auto& p : pairs) {
    draw(p.first, p.first_label);
    draw(p.second, p.second_label);
  }
  return pairs;
}

SnnSampler::SnnSampler(std::span<const UtteranceRecord> records, const SamplerConfig& cfg)
    : cfg_(cfg), state_(records, cfg.seed) {
  if (cfg.num_samples < 1) throw InvalidConfig("num_samples must be >= 1");
}

std::vector<PairRef> SnnSampler::epoch(std::uint64_t epoch_index) {
  epoch_reshuffle(state_, mix_seed(cfg_.seed, 0x100000 + epoch_index));
  return draw_pairs(state_, cfg_.num_samples);
}

std::vector<PairRef> create_snn_dataset(std::span<const UtteranceRecord> records,
                                        const SamplerConfig& cfg) {
  SnnSampler sampler(records, cfg);
  return sampler.epoch(0);
}

}  // namespace antispoof
