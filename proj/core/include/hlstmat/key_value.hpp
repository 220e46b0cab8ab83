#pragma once

// `key = value` text used by configs and checkpoint headers. Blank lines and
// lines starting with '#' are skipped; later keys override earlier ones.

#include <filesystem>
#include <istream>
#include <map>
#include <string>

namespace hlstmat {

using KeyValues = std::map<std::string, std::string>;

/// Throws ConfigError naming the line of a malformed entry.
KeyValues parse_key_values(std::istream& in, const std::string& source = "config");
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_value_file(const std::filesystem::path& path);

}  // namespace hlstmat
