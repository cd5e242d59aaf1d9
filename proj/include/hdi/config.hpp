#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdi {

struct ConfigError : std::runtime_error {
  int line, column;
  ConfigError(const std::string& msg, int l, int c)
      : std::runtime_error(msg + " (line " + std::to_string(l) + ", column " +
                           std::to_string(c) + ")"),
        line(l), column(c) {}
};

/// Minimal TOML-like config: [sections], key = value, # comments. Values are
/// numbers, quoted strings, booleans, or single-line arrays of those.
class Config {
 public:
  struct Value {
    enum Kind { number, string, boolean, number_list, string_list } kind;
    double num = 0;
    std::string str;
    bool flag = false;
    std::vector<double> nums;
    std::vector<std::string> strs;
  };

  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& name = "<config>");

  bool has(const std::string& section, const std::string& key) const;
  double number(const std::string& section, const std::string& key) const;
  double number_or(const std::string& section, const std::string& key, double fallback) const;
  int integer(const std::string& section, const std::string& key) const;
  int integer_or(const std::string& section, const std::string& key, int fallback) const;
  std::string str(const std::string& section, const std::string& key) const;
  std::string str_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  std::vector<double> numbers(const std::string& section, const std::string& key) const;
  std::vector<std::string> strings(const std::string& section, const std::string& key) const;

  /// Raw config text; digests and artifacts are derived from it.
  const std::string& source() const { return source_; }

 private:
  const Value& require(const std::string& section, const std::string& key) const;
  std::map<std::string, std::map<std::string, Value>> sections_;
  std::string source_, name_;
};

/// FNV-1a 64-bit digest as a 16-hex-digit string.
std::string digest_hex(const std::string& data);

/// Shortest round-trip decimal with up to 17 significant digits.
std::string format_g17(double v);

}  // namespace hdi
