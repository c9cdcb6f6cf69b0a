#pragma once

// Flat key=value experiment configuration with file includes, typed access,
// strict unknown-key validation, and a stable 64-bit content hash.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fev {

struct Config {
  std::map<std::string, std::string> values;

  bool has(const std::string& key) const { return values.count(key) > 0; }
  std::string get(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma-separated list value.
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const;

  void set(const std::string& key, const std::string& value) { values[key] = value; }
};

// Parses "key = value" lines; '#' starts a comment; "include <path>" pulls in
// another file relative to the including file. Later assignments win.
Config load_config(const std::string& path);
Config parse_config(const std::string& text, const std::string& base_dir = ".");

// Throws listing every key not in the allowed set.
void validate_keys(const Config& cfg, const std::vector<std::string>& allowed);

// FNV-1a over bytes.
std::uint64_t fnv1a(const std::string& bytes);
// Hash of the canonical serialization (sorted "key=value" lines).
std::uint64_t config_hash(const Config& cfg);
std::string hash_hex(std::uint64_t h);

}  // namespace fev
