#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "pan/dataset.hpp"
#include "pan/train.hpp"

namespace pan {

// Flat `key = value` text config. '#' starts a comment; keys outside the
// caller's schema are a hard error (anti-typo contract).
class KVConfig {
 public:
  static KVConfig parse_file(const std::string& path,
                             const std::set<std::string>& allowed_keys);
  static KVConfig parse_text(const std::string& text, const std::string& origin,
                             const std::set<std::string>& allowed_keys);

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

// Schema-checked loaders for the two config file kinds.
GenConfig gen_config_from_file(const std::string& path);
TrainConfig train_config_from_file(const std::string& path);

}  // namespace pan
