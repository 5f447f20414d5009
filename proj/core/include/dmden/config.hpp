#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dmden {

/// Flat `section.key = value` configuration. Lines starting with `#` and
/// blank lines are ignored; a later assignment overrides an earlier one.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "<config>");
  static Config parse_string(const std::string& text);
  static Config load(const std::filesystem::path& path);

  /// Applies a `key=value` override (used for command-line --set).
  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list.
  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;

  /// Sorted by key.
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

  /// Throws ConfigError naming the first key not in `known`.
  void require_known(const std::vector<std::string>& known) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dmden
