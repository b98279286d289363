#include "antispoof/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "antispoof/errors.hpp"

namespace antispoof {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  const std::array<char, 2> b = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b.data(), 2);
}

}  // namespace

std::size_t buffer_samples(double seconds, int sample_rate) {
  if (!(seconds > 0.0) || sample_rate <= 0)
    throw InvalidAudio("buffer length and sample rate must be positive");
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

AudioBuffer cut_or_pad(const AudioBuffer& audio, double buffer_seconds) {
  if (audio.samples.empty()) throw InvalidAudio("cannot cut or pad an empty buffer");
  if (audio.sample_rate <= 0) throw InvalidAudio("sample rate must be positive");
  const std::size_t target = buffer_samples(buffer_seconds, audio.sample_rate);
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  out.samples.assign(target, 0.0);
  const std::size_t keep = std::min(target, audio.samples.size());
  std::copy_n(audio.samples.begin(), keep, out.samples.begin());
  return out;
}

AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidAudio("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw InvalidAudio(path.string() + ": not a RIFF/WAVE file");

  int channels = 0, bits = 0, format = 0;
  long rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size() && std::memcmp(chunk, "data", 4) != 0)
      throw InvalidAudio(path.string() + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw InvalidAudio(path.string() + ": short fmt chunk");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw InvalidAudio(path.string() + ": data before fmt");
      if (format != 1 || bits != 16 || channels != 1)
        throw InvalidAudio(path.string() + ": only PCM16 mono is supported");
      const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
      AudioBuffer out;
      out.sample_rate = static_cast<int>(rate);
      out.samples.resize(avail / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(bytes.data() + body + 2 * i));
        out.samples[i] = v / 32768.0;
      }
      return out;
    }
    pos = body + len + (len & 1u);
  }
  throw InvalidAudio(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  const auto data_len = static_cast<std::uint32_t>(audio.samples.size() * 2);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_len);
  os.write("WAVEfmt ", 8);
  put_u32(os, 16);
  put_u16(os, 1);
  put_u16(os, 1);
  put_u32(os, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(os, static_cast<std::uint32_t>(audio.sample_rate * 2));
  put_u16(os, 2);
  put_u16(os, 16);
  os.write("data", 4);
  put_u32(os, data_len);
  for (double s : audio.samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
  }
  if (!os) throw IoError("short write to " + path.string());
}

}  // namespace antispoof
