#include "ipo/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace ipo {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

IniConfig IniConfig::parse_string(const std::string& text) {
  IniConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
    auto [it, inserted] = cfg.sections_[section].emplace(key, Entry{value, lineno});
    if (!inserted)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" +
                        section + "." + key + "'");
  }
  return cfg;
}

IniConfig IniConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

bool IniConfig::has(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

const IniConfig::Entry& IniConfig::entry(const std::string& section,
                                         const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end() || s->second.find(key) == s->second.end())
    throw ConfigError("config: missing required key '" + section + "." + key + "'");
  return s->second.at(key);
}

std::string IniConfig::get_string(const std::string& section, const std::string& key) const {
  return entry(section, key).value;
}

std::string IniConfig::get_string(const std::string& section, const std::string& key,
                                  const std::string& fallback) const {
  return has(section, key) ? entry(section, key).value : fallback;
}

namespace {

double parse_double(const std::string& raw, const std::string& where) {
  if (raw == "inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + where + "' has non-numeric value '" + raw + "'");
  }
}

long parse_int(const std::string& raw, const std::string& where) {
  try {
    std::size_t used = 0;
    const long v = std::stol(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + where + "' has non-integer value '" + raw + "'");
  }
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::istringstream is(raw);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

double IniConfig::get_double(const std::string& section, const std::string& key) const {
  return parse_double(entry(section, key).value, section + "." + key);
}

double IniConfig::get_double(const std::string& section, const std::string& key,
                             double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

long IniConfig::get_int(const std::string& section, const std::string& key) const {
  return parse_int(entry(section, key).value, section + "." + key);
}

long IniConfig::get_int(const std::string& section, const std::string& key,
                        long fallback) const {
  return has(section, key) ? get_int(section, key) : fallback;
}

std::uint64_t IniConfig::get_uint64(const std::string& section, const std::string& key,
                                    std::uint64_t fallback) const {
  if (!has(section, key)) return fallback;
  const std::string raw = entry(section, key).value;
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + section + "." + key + "' has non-integer value '" +
                      raw + "'");
  }
}

std::vector<double> IniConfig::get_double_list(const std::string& section,
                                               const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : split_list(entry(section, key).value))
    out.push_back(parse_double(item, section + "." + key));
  if (out.empty()) throw ConfigError("config: key '" + section + "." + key + "' is empty");
  return out;
}

std::vector<long> IniConfig::get_int_list(const std::string& section,
                                          const std::string& key) const {
  std::vector<long> out;
  for (const std::string& item : split_list(entry(section, key).value))
    out.push_back(parse_int(item, section + "." + key));
  if (out.empty()) throw ConfigError("config: key '" + section + "." + key + "' is empty");
  return out;
}

std::vector<std::string> IniConfig::get_string_list(const std::string& section,
                                                    const std::string& key) const {
  auto out = split_list(entry(section, key).value);
  if (out.empty()) throw ConfigError("config: key '" + section + "." + key + "' is empty");
  return out;
}

void IniConfig::require_known_keys(
    const std::map<std::string, std::set<std::string>>& allowed) const {
  for (const auto& [section, entries] : sections_) {
    const auto it = allowed.find(section);
    if (it == allowed.end()) {
      throw ConfigError("config line " + std::to_string(entries.begin()->second.line) +
                        ": unknown section '" + section + "'");
    }
    for (const auto& [key, e] : entries) {
      if (it->second.count(key) == 0)
        throw ConfigError("config line " + std::to_string(e.line) + ": unknown key '" +
                          section + "." + key + "'");
    }
  }
}

std::vector<std::pair<std::string, std::string>> IniConfig::flatten() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [section, entries] : sections_)
    for (const auto& [key, e] : entries) out.emplace_back(section + "." + key, e.value);
  return out;
}

}  // namespace ipo
