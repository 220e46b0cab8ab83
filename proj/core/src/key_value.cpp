#include "hlstmat/key_value.hpp"

#include <fstream>
#include <sstream>

#include "hlstmat/errors.hpp"

namespace hlstmat {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(number) + ": empty key");
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

KeyValues parse_key_values(const std::string& text) {
  std::istringstream in(text);
  return parse_key_values(in);
}

KeyValues read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_key_values(in, path.string());
}

}  // namespace hlstmat
