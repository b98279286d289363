#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include <Eigen/Dense>

#include "antispoof/audio.hpp"

namespace antispoof {

enum class FeatureKind : std::uint8_t { kLogSpec = 0, kLfbank = 1, kGdGram = 2 };

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view name);

// Time-frequency representation, bins along rows and frames along columns.
struct FeatureMatrix {
  FeatureKind kind = FeatureKind::kLogSpec;
  Eigen::MatrixXd data;

  Eigen::Index bins() const { return data.rows(); }
  Eigen::Index frames() const { return data.cols(); }
};

struct StftConfig {
  double window_len = 0.050;  // seconds
  double hop = 0.015;         // seconds

  int window_samples(int sample_rate) const;
  int hop_samples(int sample_rate) const;
  // Non-negative frequency bins of a window-length DFT.
  int fft_bins(int sample_rate) const { return window_samples(sample_rate) / 2 + 1; }
  void validate() const;
};

// Modified group delay parameters. `alpha` compresses the output magnitude,
// `gamma` is the exponent of the smoothed spectrum in the denominator.
struct GdConfig {
  double alpha = 0.4;
  double gamma = 0.9;
  int lifter_len = 30;
  void validate() const;
};

inline constexpr double kLogFloor = 1e-10;
inline constexpr double kSpectralFloor = 1e-8;
inline constexpr int kDefaultFilters = 80;

// frames = floor(num_samples / hop); frame i starts at i * hop and the tail is
// zero-padded so the last window is complete.
int num_frames(std::size_t num_samples, const StftConfig& cfg, int sample_rate);

// Symmetric Hamming window.
Eigen::VectorXd hamming_window(int length);

// Complex STFT with one column per frame; rows are window_samples/2 + 1 bins.
Eigen::MatrixXcd stft(const AudioBuffer& audio, const StftConfig& cfg);

FeatureMatrix logspec(const AudioBuffer& audio, const StftConfig& cfg);

// Triangular filters with equal width in Hz over [0, Nyquist]. Each row is one
// filter, peaking at exactly 1 on its center bin.
Eigen::MatrixXd linear_filterbank(int num_filters, int fft_bins);

FeatureMatrix lfbank(const AudioBuffer& audio, const StftConfig& cfg,
                     int num_filters = kDefaultFilters);

FeatureMatrix gd_gram(const AudioBuffer& audio, const StftConfig& cfg, const GdConfig& gd);

// Divides by the largest magnitude so all entries land in [-1, 1]. All-zero
// input is returned unchanged.
FeatureMatrix scale_to_unit_range(FeatureMatrix feat);

struct FrontendConfig {
  double buffer_seconds = kDefaultBufferSeconds;
  StftConfig stft;
  GdConfig gd;
  int num_filters = kDefaultFilters;
};

// cut_or_pad -> feature -> scale_to_unit_range.
FeatureMatrix extract_feature(const AudioBuffer& raw, FeatureKind kind,
                              const FrontendConfig& cfg = {});

// Cache layout: kind tag (1 byte), bins (u32 LE), frames (u32 LE), then
// row-major float32 LE values.
void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& feat);
FeatureMatrix read_feature_cache(const std::filesystem::path& path);

}  // namespace antispoof
