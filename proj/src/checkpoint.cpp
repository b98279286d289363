#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "antispoof/errors.hpp"
#include "antispoof/model.hpp"

namespace antispoof {

namespace {

constexpr std::string_view kMagic = "antispoof-checkpoint 1";

std::string join(const std::array<int, 4>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::array<int, 4> split4(const std::string& s) {
  std::array<int, 4> out{};
  std::istringstream is(s);
  std::string tok;
  for (auto& v : out) {
    if (!std::getline(is, tok, ',')) throw IoError("checkpoint: expected four comma-separated values");
    v = std::stoi(tok);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  const ModelSpec& spec = model.spec();
  const auto params = model.parameters();

  os << kMagic << '\n'
     << "input_kind = " << to_string(spec.input_kind) << '\n'
     << "pooling = " << to_string(spec.pooling) << '\n'
     << "with_decoder = " << (spec.with_decoder ? "true" : "false") << '\n'
     << "stage_filters = " << join(spec.stage_filters) << '\n'
     << "stage_blocks = " << join(spec.stage_blocks) << '\n'
     << "tensors = " << params.size() << '\n';
  for (const auto* p : params) {
    os << "tensor " << p->name << ' ' << p->shape.size();
    for (int d : p->shape) os << ' ' << d;
    os << '\n';
  }
  os << "end\n";
  for (const auto* p : params) {
    for (double v : p->value) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      const std::array<char, 4> b = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                                     static_cast<char>((bits >> 16) & 0xff),
                                     static_cast<char>((bits >> 24) & 0xff)};
      os.write(b.data(), 4);
    }
  }
  if (!os) throw IoError("short write to " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kMagic) throw IoError(path.string() + ": not a checkpoint");

  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, std::vector<int>>> directory;
  while (std::getline(is, line) && line != "end") {
    if (line.starts_with("tensor ")) {
      std::istringstream ts(line.substr(7));
      std::string name;
      std::size_t ndim = 0;
      ts >> name >> ndim;
      std::vector<int> shape(ndim);
      for (auto& d : shape) ts >> d;
      if (!ts) throw IoError(path.string() + ": bad tensor line");
      directory.emplace_back(std::move(name), std::move(shape));
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw IoError(path.string() + ": bad header line '" + line + "'");
    header[line.substr(0, eq)] = line.substr(eq + 3);
  }
  if (line != "end") throw IoError(path.string() + ": truncated header");

  ModelSpec spec;
  try {
    spec.input_kind = parse_feature_kind(header.at("input_kind"));
    spec.pooling = parse_pooling(header.at("pooling"));
    spec.with_decoder = header.at("with_decoder") == "true";
    spec.stage_filters = split4(header.at("stage_filters"));
    spec.stage_blocks = split4(header.at("stage_blocks"));
  } catch (const std::out_of_range&) {
    throw IoError(path.string() + ": incomplete model spec in header");
  }

  Model model(spec);
  const auto params = model.parameters();
  if (directory.size() != params.size())
    throw IoError(path.string() + ": tensor count does not match the model spec");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (directory[i].first != p->name || directory[i].second != p->shape)
      throw IoError(path.string() + ": unexpected tensor '" + directory[i].first + "'");
    for (double& v : p->value) {
      std::array<unsigned char, 4> b{};
      is.read(reinterpret_cast<char*>(b.data()), 4);
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
      v = std::bit_cast<float>(bits);
    }
  }
  if (!is) throw IoError(path.string() + ": truncated tensor data");
  return model;
}

}  // namespace antispoof
