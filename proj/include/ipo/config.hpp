#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ipo/common.hpp"

namespace ipo {

/// Flat typed key-value configuration with [section] headers. Keys are
/// validated fail-closed: commands declare the keys they accept and anything
/// else is a ConfigError naming the offending line.
class IniConfig {
 public:
  static IniConfig parse_file(const std::string& path);
  static IniConfig parse_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long get_int(const std::string& section, const std::string& key) const;
  long get_int(const std::string& section, const std::string& key, long fallback) const;
  std::uint64_t get_uint64(const std::string& section, const std::string& key,
                           std::uint64_t fallback) const;

  std::vector<double> get_double_list(const std::string& section, const std::string& key) const;
  std::vector<long> get_int_list(const std::string& section, const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& section,
                                           const std::string& key) const;

  /// Throws ConfigError for any present key not listed in `allowed`
  /// (section -> set of keys), reporting its line number.
  void require_known_keys(const std::map<std::string, std::set<std::string>>& allowed) const;

  /// Flattened section.key = value pairs for manifest echoes.
  std::vector<std::pair<std::string, std::string>> flatten() const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };
  std::map<std::string, std::map<std::string, Entry>> sections_;

  const Entry& entry(const std::string& section, const std::string& key) const;
};

}  // namespace ipo
