#pragma once

// Flag plumbing shared by the subcommands. Every flag writes its value into
// a KeyValues map under a config key; a --config file is applied on top, so
// its entries win over flags given on the command line.

#include <cstddef>
#include <cstdint>
#include <string>

#include <CLI11.hpp>

#include "hlstmat/key_value.hpp"

namespace hlstmat::cli {

/// Registers `--name` storing into values[key].
inline CLI::Option* flag(CLI::App& app, hlstmat::KeyValues& values, const std::string& name,
                         const std::string& key, const std::string& help) {
  return app.add_option_function<std::string>(
      name, [&values, key](const std::string& v) { values[key] = v; }, help);
}

/// Boolean switch storing "true" into values[key].
inline CLI::Option* toggle(CLI::App& app, hlstmat::KeyValues& values, const std::string& name,
                           const std::string& key, const std::string& help) {
  return app.add_flag_callback(name, [&values, key] { values[key] = "true"; }, help);
}

/// Adds --config; call apply_config() after parsing.
inline CLI::Option* config_option(CLI::App& app, std::string& path) {
  return app.add_option("--config", path, "key = value file; its entries override command-line flags");
}

void apply_config(const std::string& path, hlstmat::KeyValues& values);

std::string get_string(const hlstmat::KeyValues& values, const std::string& key, const std::string& fallback);
std::size_t get_size(const hlstmat::KeyValues& values, const std::string& key, std::size_t fallback);
double get_double(const hlstmat::KeyValues& values, const std::string& key, double fallback);
bool get_bool(const hlstmat::KeyValues& values, const std::string& key, bool fallback);
/// Throws ConfigError when the key is missing.
std::string require(const hlstmat::KeyValues& values, const std::string& key);

}  // namespace hlstmat::cli
