#include "options.hpp"

#include "hlstmat/errors.hpp"

namespace hlstmat::cli {

void apply_config(const std::string& path, KeyValues& values) {
  if (path.empty()) return;
  for (const auto& [key, value] : read_key_value_file(path)) values[key] = value;
}

std::string get_string(const KeyValues& values, const std::string& key, const std::string& fallback) {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

std::size_t get_size(const KeyValues& values, const std::string& key, std::size_t fallback) {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(it->second, &pos);
    if (pos == it->second.size() && n >= 0) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a non-negative integer, got '" + it->second + "'");
}

double get_double(const KeyValues& values, const std::string& key, double fallback) {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double d = std::stod(it->second, &pos);
    if (pos == it->second.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + it->second + "'");
}

bool get_bool(const KeyValues& values, const std::string& key, bool fallback) {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "' expects a boolean, got '" + v + "'");
}

std::string require(const KeyValues& values, const std::string& key) {
  auto it = values.find(key);
  if (it == values.end() || it->second.empty()) {
    throw ConfigError("missing required setting '" + key + "' (flag or config entry)");
  }
  return it->second;
}

}  // namespace hlstmat::cli
