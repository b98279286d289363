#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "antispoof/errors.hpp"
#include "antispoof/training.hpp"

namespace antispoof {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidConfig("bad real value for '" + key + "': " + v);
}

long long to_int(const std::string& key, const std::string& v) {
  // Accept "5e5" style counts as long as they are integral.
  const double d = to_real(key, v);
  if (d != static_cast<double>(static_cast<long long>(d)))
    throw InvalidConfig("bad integer value for '" + key + "': " + v);
  return static_cast<long long>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidConfig("bad boolean value for '" + key + "': " + v);
}

std::array<int, 4> to_quad(const std::string& key, const std::string& v) {
  std::string s = v;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream in(s);
  std::array<int, 4> out{};
  for (int& x : out) {
    std::string tok;
    if (!(in >> tok)) throw InvalidConfig("'" + key + "' needs 4 values");
    x = static_cast<int>(to_int(key, tok));
  }
  std::string extra;
  if (in >> extra) throw InvalidConfig("'" + key + "' needs 4 values");
  return out;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw InvalidConfig("config line " + std::to_string(line_no) + ": empty key");
    if (kv.count(key)) throw InvalidConfig("duplicate config key '" + key + "'");
    kv[key] = value;
  }

  ExperimentConfig cfg;
  auto path = [&base_dir](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };

  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"input_kind", [&](auto&, auto& v) { cfg.model.input_kind = parse_feature_kind(v); }},
      {"pooling", [&](auto&, auto& v) { cfg.model.pooling = parse_pooling(v); }},
      {"with_decoder", [&](auto& k, auto& v) { cfg.model.with_decoder = to_bool(k, v); }},
      {"stage_filters", [&](auto& k, auto& v) { cfg.model.stage_filters = to_quad(k, v); }},
      {"stage_blocks", [&](auto& k, auto& v) { cfg.model.stage_blocks = to_quad(k, v); }},
      {"lr", [&](auto& k, auto& v) { cfg.train.lr = to_real(k, v); }},
      {"beta1", [&](auto& k, auto& v) { cfg.train.beta1 = to_real(k, v); }},
      {"beta2", [&](auto& k, auto& v) { cfg.train.beta2 = to_real(k, v); }},
      {"adam_eps", [&](auto& k, auto& v) { cfg.train.adam_eps = to_real(k, v); }},
      {"weight_decay", [&](auto& k, auto& v) { cfg.train.weight_decay = to_real(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { cfg.train.batch_size = static_cast<int>(to_int(k, v)); }},
      {"patience", [&](auto& k, auto& v) { cfg.train.patience = static_cast<int>(to_int(k, v)); }},
      {"num_samples",
       [&](auto& k, auto& v) {
         const long long n = to_int(k, v);
         if (n < 1) throw InvalidConfig("num_samples must be >= 1");
         cfg.train.num_samples = static_cast<std::size_t>(n);
       }},
      {"max_epochs", [&](auto& k, auto& v) { cfg.train.max_epochs = static_cast<int>(to_int(k, v)); }},
      {"seed",
       [&](auto& k, auto& v) {
         const long long s = to_int(k, v);
         if (s < 0) throw InvalidConfig("seed must be >= 0");
         cfg.train.seed = static_cast<std::uint64_t>(s);
       }},
      {"mode", [&](auto&, auto& v) { cfg.train.mode = parse_loss_mode(v); }},
      {"cl_gamma", [&](auto& k, auto& v) { cfg.loss.cl_gamma = to_real(k, v); }},
      {"rel_weight", [&](auto& k, auto& v) { cfg.loss.rel_weight = to_real(k, v); }},
      {"margin", [&](auto& k, auto& v) { cfg.loss.margin = to_real(k, v); }},
      {"ce_pos_weight", [&](auto& k, auto& v) { cfg.loss.ce_pos_weight = to_real(k, v); }},
      {"cl_update_rate", [&](auto& k, auto& v) { cfg.loss.cl_update_rate = to_real(k, v); }},
      {"train_manifest", [&](auto&, auto& v) { cfg.train_manifest = path(v); }},
      {"dev_manifest", [&](auto&, auto& v) { cfg.dev_manifest = path(v); }},
      {"eval_manifest", [&](auto&, auto& v) { cfg.eval_manifest = path(v); }},
      {"feature_dir", [&](auto&, auto& v) { cfg.feature_dir = path(v); }},
      {"preload_features", [&](auto& k, auto& v) { cfg.preload_features = to_bool(k, v); }},
  };

  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw InvalidConfig("unknown config key '" + key + "'");
    it->second(key, value);
  }
  // The decoder doubles activation memory, so its runs default to smaller
  // batches and shorter epochs.
  if (cfg.model.with_decoder) {
    if (!kv.count("batch_size")) cfg.train.batch_size = 16;
    if (!kv.count("num_samples")) cfg.train.num_samples = 500'000;
  }
  for (const char* required : {"train_manifest", "dev_manifest", "feature_dir"})
    if (!kv.count(required)) throw InvalidConfig(std::string("missing config key '") + required + "'");
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.parent_path());
}

}  // namespace antispoof
