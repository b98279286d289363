#pragma once

#include <filesystem>
#include <vector>

namespace antispoof {

inline constexpr int kSampleRate = 16000;
inline constexpr double kDefaultBufferSeconds = 8.5;

// Mono waveform. Samples are dimensionless amplitudes, nominally in [-1, 1].
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Number of samples a buffer of `seconds` holds at `sample_rate`.
std::size_t buffer_samples(double seconds, int sample_rate);

// Cuts or zero-pads at the end so the result holds exactly
// round(buffer_seconds * sample_rate) samples.
AudioBuffer cut_or_pad(const AudioBuffer& audio, double buffer_seconds);

// RIFF/WAVE, 16-bit PCM, mono. Other layouts are rejected with InvalidAudio.
AudioBuffer read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

}  // namespace antispoof
