#pragma once

// Plain-text "key = value" configuration with '#' comments. Every key is
// validated against a registry (type + range); unknown keys are rejected so
// typos fail loudly instead of silently training with defaults.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace parot::cfg {

struct Config {
  /// Parses a file and merges it over the defaults. Throws std::runtime_error
  /// with file/line context on unknown keys, bad syntax, or out-of-range values.
  static Config from_file(const std::string& path);

  /// Validates and stores one key (used both by the file parser and by CLI
  /// flag overrides). Throws std::invalid_argument on unknown key or bad value.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  /// Every registered key with its effective value, sorted, as "key = value"
  /// lines — echoed into training logs so runs are reproducible from the log.
  std::string render() const;

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;  // only explicit settings
};

}  // namespace parot::cfg
