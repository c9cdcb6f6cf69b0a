#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fev {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string dir_of(const std::string& path) {
  std::size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

void parse_into(Config& cfg, const std::string& text, const std::string& base_dir, int depth) {
  if (depth > 16) throw std::runtime_error("config: include depth exceeded");
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("include ", 0) == 0) {
      std::string inc = trim(line.substr(8));
      std::string inc_path = inc.front() == '/' ? inc : base_dir + "/" + inc;
      std::ifstream file(inc_path);
      if (!file) throw std::runtime_error("config: cannot open include " + inc_path);
      std::stringstream buf;
      buf << file.rdbuf();
      parse_into(cfg, buf.str(), dir_of(inc_path), depth + 1);
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               " is not 'key = value': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config: empty key on line " + std::to_string(lineno));
    cfg.values[key] = value;
  }
}

}  // namespace

std::string Config::get(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw std::runtime_error("config: missing required key '" + key + "'");
  return it->second;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not a number: " + it->second);
  }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not an integer: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::runtime_error("config: key '" + key + "' is not a bool: " + it->second);
}

std::vector<std::string> Config::get_list(const std::string& key,
                                          const std::vector<std::string>& fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  std::vector<std::string> out;
  std::istringstream in(it->second);
  std::string piece;
  while (std::getline(in, piece, ',')) {
    piece = trim(piece);
    if (!piece.empty()) out.push_back(piece);
  }
  return out;
}

Config load_config(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buf;
  buf << file.rdbuf();
  Config cfg;
  parse_into(cfg, buf.str(), dir_of(path), 0);
  return cfg;
}

Config parse_config(const std::string& text, const std::string& base_dir) {
  Config cfg;
  parse_into(cfg, text, base_dir, 0);
  return cfg;
}

void validate_keys(const Config& cfg, const std::vector<std::string>& allowed) {
  std::string unknown;
  for (const auto& [key, value] : cfg.values)
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      unknown += (unknown.empty() ? "" : ", ") + key;
  if (!unknown.empty()) throw std::runtime_error("config: unknown keys: " + unknown);
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t config_hash(const Config& cfg) {
  std::string canonical;
  for (const auto& [key, value] : cfg.values) canonical += key + "=" + value + "\n";
  return fnv1a(canonical);
}

std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace fev
