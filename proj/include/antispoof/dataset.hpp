#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "antispoof/audio.hpp"

namespace antispoof {

// Spoofed is the positive class throughout (y = 1).
enum class Label : std::uint8_t { kGenuine = 0, kSpoofed = 1 };
enum class Subset : std::uint8_t { kTrain, kDev, kEval };

inline double as_target(Label y) { return y == Label::kSpoofed ? 1.0 : 0.0; }
std::string_view to_string(Label label);
std::string_view to_string(Subset subset);
Subset parse_subset(std::string_view name);

struct UtteranceRecord {
  std::string utt_id;
  Label label = Label::kGenuine;
  Subset subset = Subset::kTrain;
  std::string audio_path;  // relative to the audio directory
};

using LabelMap = std::unordered_map<std::string, Label>;
LabelMap label_map(std::span<const UtteranceRecord> records);

// Whitespace-separated protocol lines whose last column is `bonafide` or
// `spoof`. With three or more columns the utterance id is the second column
// (ASVspoof CM layout); with two it is the first.
std::vector<UtteranceRecord> parse_manifest(const std::filesystem::path& path, Subset subset);
std::vector<UtteranceRecord> parse_manifest_text(std::string_view text, Subset subset);
void write_manifest(const std::filesystem::path& path, std::span<const UtteranceRecord> records);

// Deterministic 64-bit mixer for deriving independent seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

struct ToyCorpusOptions {
  double duration = 1.0;     // seconds per utterance
  std::string prefix = "TOY";
  Subset subset = Subset::kTrain;
};

// Genuine audio is a band-limited harmonic tone complex; spoofed audio is an
// independent draw of the same process passed through a simulated replay
// channel. Writes `<utt_id>.wav` files into `out_dir`.
std::vector<UtteranceRecord> make_toy_corpus(int n_genuine, int n_spoofed, std::uint64_t seed,
                                             const std::filesystem::path& out_dir,
                                             const ToyCorpusOptions& opts = {});

AudioBuffer synth_tone_complex(std::mt19937_64& rng, double duration);
// 4 kHz low-pass FIR, exponentially decaying reverberation (RT60 ~ 0.3 s) and
// white noise at 30 dB SNR.
AudioBuffer replay_channel(const AudioBuffer& audio, std::mt19937_64& rng);

struct SamplerConfig {
  std::size_t num_samples = 1'000'000;
  std::uint64_t seed = 0;
};

// One Siamese training pair, by index into the record list.
struct PairRef {
  std::size_t first = 0;
  Label first_label = Label::kGenuine;
  std::size_t second = 0;
  Label second_label = Label::kGenuine;
};

// Per-class shuffled index lists with wrap-around counters. Class choice
// draws from a single persistent stream; list shuffles are seeded per epoch.
struct SamplerState {
  std::vector<std::size_t> genuine;
  std::vector<std::size_t> spoofed;
  std::size_t genuine_pos = 0;
  std::size_t spoofed_pos = 0;
  std::mt19937_64 class_rng;

  SamplerState(std::span<const UtteranceRecord> records, std::uint64_t seed);
};

// Re-permutes both class lists with a stream seeded by `seed` and resets the counters.
void epoch_reshuffle(SamplerState& state, std::uint64_t seed);

// Draws `num_samples` pairs from the current state, advancing it.
std::vector<PairRef> draw_pairs(SamplerState& state, std::size_t num_samples);

// Balanced pair sampler over a whole epoch: reshuffles with the epoch seed, then draws.
class SnnSampler {
 public:
  SnnSampler(std::span<const UtteranceRecord> records, const SamplerConfig& cfg);
  std::vector<PairRef> epoch(std::uint64_t epoch_index);
  const SamplerState& state() const { return state_; }

 private:
  SamplerConfig cfg_;
  SamplerState state_;
};

// Single-epoch convenience wrapper around SnnSampler.
std::vector<PairRef> create_snn_dataset(std::span<const UtteranceRecord> records,
                                        const SamplerConfig& cfg);

// Unbiased integer in [0, n) and Fisher-Yates shuffle on a 64-bit engine.
// Implemented here rather than via <random> distributions so sequences do not
// depend on the standard library vendor.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);
void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng);
double uniform01(std::mt19937_64& rng);
double standard_normal(std::mt19937_64& rng);

}  // namespace antispoof
