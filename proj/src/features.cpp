#include "antispoof/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "antispoof/errors.hpp"

namespace antispoof {

namespace {

// Planning is not thread-safe in FFTW; execution on fresh arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <typename T>
FftwBuffer<T> fftw_alloc(std::size_t n) {
  return FftwBuffer<T>(static_cast<T*>(fftw_malloc(sizeof(T) * n)));
}

// Real-to-complex and complex-to-real transforms of one fixed length.
class RealFft {
 public:
  explicit RealFft(int n)
      : n_(n), real_(fftw_alloc<double>(n)), spec_(fftw_alloc<fftw_complex>(n / 2 + 1)) {
    std::lock_guard lock(planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(n, real_.get(), spec_.get(), FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, spec_.get(), real_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  void forward(const double* in, std::complex<double>* out) {
    std::copy_n(in, n_, real_.get());
    fftw_execute(forward_);
    std::memcpy(static_cast<void*>(out), spec_.get(), sizeof(fftw_complex) * bins());
  }

  // Unnormalized inverse of a Hermitian half spectrum.
  void inverse(const std::complex<double>* in, double* out) {
    std::memcpy(spec_.get(), static_cast<const void*>(in), sizeof(fftw_complex) * bins());
    fftw_execute(inverse_);
    std::copy_n(real_.get(), n_, out);
  }

 private:
  int n_;
  FftwBuffer<double> real_;
  FftwBuffer<fftw_complex> spec_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

void check_audio(const AudioBuffer& audio, const StftConfig& cfg) {
  cfg.validate();
  if (audio.sample_rate != kSampleRate)
    throw InvalidAudio("expected " + std::to_string(kSampleRate) + " Hz audio, got " +
                       std::to_string(audio.sample_rate));
  if (audio.samples.size() < static_cast<std::size_t>(cfg.window_samples(audio.sample_rate)))
    throw InvalidAudio("audio shorter than one analysis window");
}

// Copies frame `index` (zero beyond the end of the signal) and applies the window.
void windowed_frame(const AudioBuffer& audio, int index, int hop, const Eigen::VectorXd& window,
                    std::vector<double>& frame) {
  const std::size_t start = static_cast<std::size_t>(index) * hop;
  const auto len = static_cast<std::size_t>(window.size());
  for (std::size_t n = 0; n < len; ++n) {
    const std::size_t t = start + n;
    frame[n] = t < audio.samples.size() ? audio.samples[t] * window[static_cast<Eigen::Index>(n)]
                                        : 0.0;
  }
}

}  // namespace

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kLogSpec: return "logspec";
    case FeatureKind::kLfbank: return "lfbank";
    case FeatureKind::kGdGram: return "gdgram";
  }
  return "unknown";
}

FeatureKind parse_feature_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "logspec") return FeatureKind::kLogSpec;
  if (lower == "lfbank") return FeatureKind::kLfbank;
  if (lower == "gdgram" || lower == "gd") return FeatureKind::kGdGram;
  throw InvalidConfig("unknown feature kind '" + std::string(name) + "'");
}

int StftConfig::window_samples(int sample_rate) const {
  return static_cast<int>(std::lround(window_len * sample_rate));
}

int StftConfig::hop_samples(int sample_rate) const {
  return static_cast<int>(std::lround(hop * sample_rate));
}

void StftConfig::validate() const {
  if (!(hop > 0.0) || !(window_len > hop))
    throw InvalidConfig("STFT requires window_len > hop > 0");
}

void GdConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidConfig("gd alpha must be in (0, 1]");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidConfig("gd gamma must be in (0, 1]");
  if (lifter_len < 1) throw InvalidConfig("gd lifter_len must be >= 1");
}

int num_frames(std::size_t num_samples, const StftConfig& cfg, int sample_rate) {
  return static_cast<int>(num_samples / static_cast<std::size_t>(cfg.hop_samples(sample_rate)));
}

Eigen::VectorXd hamming_window(int length) {
  Eigen::VectorXd w(length);
  if (length == 1) {
    w[0] = 1.0;
    return w;
  }
  for (int n = 0; n < length; ++n)
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (length - 1));
  return w;
}

Eigen::MatrixXcd stft(const AudioBuffer& audio, const StftConfig& cfg) {
  check_audio(audio, cfg);
  const int win = cfg.window_samples(audio.sample_rate);
  const int hop = cfg.hop_samples(audio.sample_rate);
  const int frames = num_frames(audio.samples.size(), cfg, audio.sample_rate);
  const Eigen::VectorXd window = hamming_window(win);

  RealFft fft(win);
  Eigen::MatrixXcd out(fft.bins(), frames);
  std::vector<double> frame(static_cast<std::size_t>(win));
  for (int i = 0; i < frames; ++i) {
    windowed_frame(audio, i, hop, window, frame);
    fft.forward(frame.data(), out.col(i).data());
  }
  return out;
}

FeatureMatrix logspec(const AudioBuffer& audio, const StftConfig& cfg) {
  const Eigen::MatrixXcd spec = stft(audio, cfg);
  FeatureMatrix feat;
  feat.kind = FeatureKind::kLogSpec;
  feat.data = (spec.cwiseAbs2().array() + kLogFloor).log().matrix();
  return feat;
}

Eigen::MatrixXd linear_filterbank(int num_filters, int fft_bins) {
  if (num_filters < 1 || num_filters > fft_bins)
    throw InvalidConfig("filter count must be in [1, fft_bins]");
  const int last_bin = fft_bins - 1;
  // num_filters + 2 equally spaced edges between 0 Hz and Nyquist, snapped to bins.
  std::vector<int> edge(static_cast<std::size_t>(num_filters) + 2);
  for (int m = 0; m < num_filters + 2; ++m)
    edge[m] = static_cast<int>(std::lround(static_cast<double>(m) * last_bin / (num_filters + 1)));

  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(num_filters, fft_bins);
  for (int f = 0; f < num_filters; ++f) {
    const int lo = edge[f], mid = edge[f + 1], hi = edge[f + 2];
    for (int k = lo; k <= hi; ++k) {
      double w = 0.0;
      if (k < mid)
        w = static_cast<double>(k - lo) / (mid - lo);
      else if (k == mid)
        w = 1.0;
      else
        w = static_cast<double>(hi - k) / (hi - mid);
      fb(f, k) = w;
    }
  }
  return fb;
}

FeatureMatrix lfbank(const AudioBuffer& audio, const StftConfig& cfg, int num_filters) {
  const int bins = cfg.fft_bins(audio.sample_rate);
  if (num_filters > bins) throw InvalidConfig("more filters than FFT bins");
  const Eigen::MatrixXd fb = linear_filterbank(num_filters, bins);
  const Eigen::MatrixXd power = stft(audio, cfg).cwiseAbs2();
  FeatureMatrix feat;
  feat.kind = FeatureKind::kLfbank;
  feat.data = ((fb * power).array() + kLogFloor).log().matrix();
  return feat;
}

FeatureMatrix gd_gram(const AudioBuffer& audio, const StftConfig& cfg, const GdConfig& gd) {
  check_audio(audio, cfg);
  gd.validate();
  const int win = cfg.window_samples(audio.sample_rate);
  const int hop = cfg.hop_samples(audio.sample_rate);
  const int frames = num_frames(audio.samples.size(), cfg, audio.sample_rate);
  const Eigen::VectorXd window = hamming_window(win);

  RealFft fft(win);
  const int bins = fft.bins();
  std::vector<double> x(static_cast<std::size_t>(win)), nx(x.size()), cep(x.size());
  std::vector<std::complex<double>> spec_x(static_cast<std::size_t>(bins)), spec_nx(spec_x.size()),
      work(spec_x.size());

  FeatureMatrix feat;
  feat.kind = FeatureKind::kGdGram;
  feat.data.resize(bins, frames);
  for (int i = 0; i < frames; ++i) {
    windowed_frame(audio, i, hop, window, x);
    for (int n = 0; n < win; ++n) nx[n] = n * x[n];
    fft.forward(x.data(), spec_x.data());
    fft.forward(nx.data(), spec_nx.data());

    // Real cepstrum of the log magnitude, low-pass liftered, back to a
    // smoothed magnitude spectrum.
    for (int k = 0; k < bins; ++k)
      work[k] = std::log(std::max(std::abs(spec_x[k]), kSpectralFloor));
    fft.inverse(work.data(), cep.data());
    for (int n = 0; n < win; ++n) {
      const int quefrency = std::min(n, win - n);
      cep[n] = quefrency < gd.lifter_len ? cep[n] / win : 0.0;
    }
    fft.forward(cep.data(), work.data());

    for (int k = 0; k < bins; ++k) {
      const double smoothed = std::max(std::exp(work[k].real()), kSpectralFloor);
      const double num = spec_x[k].real() * spec_nx[k].real() + spec_x[k].imag() * spec_nx[k].imag();
      const double tau = num / std::pow(smoothed, 2.0 * gd.gamma);
      feat.data(k, i) = std::copysign(std::pow(std::abs(tau), gd.alpha), tau);
    }
  }
  return feat;
}

FeatureMatrix scale_to_unit_range(FeatureMatrix feat) {
  if (feat.data.size() == 0) return feat;
  const double peak = feat.data.cwiseAbs().maxCoeff();
  if (peak > 0.0) feat.data /= peak;
  return feat;
}

FeatureMatrix extract_feature(const AudioBuffer& raw, FeatureKind kind, const FrontendConfig& cfg) {
  const AudioBuffer audio = cut_or_pad(raw, cfg.buffer_seconds);
  switch (kind) {
    case FeatureKind::kLogSpec: return scale_to_unit_range(logspec(audio, cfg.stft));
    case FeatureKind::kLfbank: return scale_to_unit_range(lfbank(audio, cfg.stft, cfg.num_filters));
    case FeatureKind::kGdGram: return scale_to_unit_range(gd_gram(audio, cfg.stft, cfg.gd));
  }
  throw InvalidConfig("unknown feature kind");
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& feat) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.put(static_cast<char>(feat.kind));
  put_u32(os, static_cast<std::uint32_t>(feat.bins()));
  put_u32(os, static_cast<std::uint32_t>(feat.frames()));
  for (Eigen::Index r = 0; r < feat.bins(); ++r)
    for (Eigen::Index c = 0; c < feat.frames(); ++c)
      put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(feat.data(r, c))));
  if (!os) throw IoError("short write to " + path.string());
}

FeatureMatrix read_feature_cache(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const int tag = is.get();
  if (tag < 0 || tag > 2) throw IoError(path.string() + ": bad feature kind tag");
  const std::uint32_t bins = get_u32(is);
  const std::uint32_t frames = get_u32(is);
  if (!is) throw IoError(path.string() + ": truncated header");
  FeatureMatrix feat;
  feat.kind = static_cast<FeatureKind>(tag);
  feat.data.resize(bins, frames);
  for (std::uint32_t r = 0; r < bins; ++r)
    for (std::uint32_t c = 0; c < frames; ++c)
      feat.data(r, c) = std::bit_cast<float>(get_u32(is));
  if (!is) throw IoError(path.string() + ": truncated data");
  return feat;
}

}  // namespace antispoof
