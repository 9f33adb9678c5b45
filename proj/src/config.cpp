#include "pan/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "pan/errors.hpp"

namespace pan {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

KVConfig KVConfig::parse_text(const std::string& text, const std::string& origin,
                              const std::set<std::string>& allowed_keys) {
  KVConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(origin + ":" + std::to_string(lineno) +
                      ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw DataError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!allowed_keys.contains(key))
      throw DataError(origin + ":" + std::to_string(lineno) + ": unknown key '" +
                      key + "'");
    if (cfg.values_.count(key))
      throw DataError(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                      key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

KVConfig KVConfig::parse_file(const std::string& path,
                              const std::set<std::string>& allowed_keys) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path, allowed_keys);
}

bool KVConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KVConfig::get_str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw DataError(origin_ + ": missing required key '" + key + "'");
  return it->second;
}

std::string KVConfig::get_str(const std::string& key,
                              const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::int64_t KVConfig::get_int(const std::string& key) const {
  const std::string v = get_str(key);
  try {
    std::size_t pos = 0;
    std::int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw DataError(origin_ + ": key '" + key + "' is not an integer: '" + v + "'");
  }
}

std::int64_t KVConfig::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::uint64_t KVConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get_str(key);
  try {
    std::size_t pos = 0;
    std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw DataError(origin_ + ": key '" + key + "' is not an unsigned integer: '" +
                    v + "'");
  }
}

double KVConfig::get_double(const std::string& key) const {
  const std::string v = get_str(key);
  try {
    std::size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::logic_error&) {
    throw DataError(origin_ + ": key '" + key + "' is not a number: '" + v + "'");
  }
}

double KVConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KVConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_str(key);
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw DataError(origin_ + ": key '" + key + "' is not a boolean: '" + v + "'");
}

GenConfig gen_config_from_file(const std::string& path) {
  static const std::set<std::string> keys{
      "variant",     "train_count", "val_count",    "test_count",
      "digits_min",  "digits_max",  "scale_min",    "scale_max",
      "color_sigma", "seed",        "bg_dir",       "max_attempts",
      "mdist_patches"};
  KVConfig kv = KVConfig::parse_file(path, keys);
  GenConfig cfg;
  cfg.variant = variant_from_name(kv.get_str("variant", "mref"));
  cfg.train_count = static_cast<int>(kv.get_int("train_count", cfg.train_count));
  cfg.val_count = static_cast<int>(kv.get_int("val_count", cfg.val_count));
  cfg.test_count = static_cast<int>(kv.get_int("test_count", cfg.test_count));
  cfg.digits_min = static_cast<int>(kv.get_int("digits_min", cfg.digits_min));
  cfg.digits_max = static_cast<int>(kv.get_int("digits_max", cfg.digits_max));
  cfg.scale_min = kv.get_double("scale_min", cfg.scale_min);
  cfg.scale_max = kv.get_double("scale_max", cfg.scale_max);
  cfg.color_sigma = kv.get_double("color_sigma", cfg.color_sigma);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.bg_dir = kv.get_str("bg_dir", "");
  cfg.max_attempts = static_cast<int>(kv.get_int("max_attempts", cfg.max_attempts));
  cfg.mdist_patches = static_cast<int>(kv.get_int("mdist_patches", cfg.mdist_patches));
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_file(const std::string& path) {
  static const std::set<std::string> keys{
      "model",      "epochs",     "batch_size", "learning_rate",
      "beta1",      "beta2",      "eps",        "seed",
      "shuffle",    "eval_every", "patience",   "clip_norm",
      "hidden_dim", "delta",      "attention_layers", "stop_at_train_acc"};
  KVConfig kv = KVConfig::parse_file(path, keys);
  TrainConfig cfg;
  cfg.model = ModelConfig::defaults(model_kind_from_name(kv.get_str("model")));
  if (kv.has("hidden_dim"))
    cfg.model.hidden_dim = static_cast<int>(kv.get_int("hidden_dim"));
  if (kv.has("delta")) cfg.model.delta = static_cast<int>(kv.get_int("delta"));
  if (kv.has("attention_layers")) {
    cfg.model.attention_layers.clear();
    std::istringstream ss(kv.get_str("attention_layers"));
    std::string tok;
    while (std::getline(ss, tok, ','))
      cfg.model.attention_layers.push_back(std::stoi(tok));
  }
  cfg.epochs = static_cast<int>(kv.get_int("epochs", cfg.epochs));
  cfg.batch_size = static_cast<int>(kv.get_int("batch_size", cfg.batch_size));
  cfg.learning_rate = kv.get_double("learning_rate", cfg.learning_rate);
  cfg.beta1 = kv.get_double("beta1", cfg.beta1);
  cfg.beta2 = kv.get_double("beta2", cfg.beta2);
  cfg.eps = kv.get_double("eps", cfg.eps);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.shuffle = kv.get_bool("shuffle", cfg.shuffle);
  cfg.eval_every = static_cast<int>(kv.get_int("eval_every", cfg.eval_every));
  cfg.patience = static_cast<int>(kv.get_int("patience", cfg.patience));
  cfg.clip_norm = kv.get_double("clip_norm", cfg.clip_norm);
  cfg.stop_at_train_acc = kv.get_double("stop_at_train_acc", cfg.stop_at_train_acc);
  cfg.validate();
  return cfg;
}

}  // namespace pan
