#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ipo/common.hpp"

namespace ipo {

/// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(const std::string& data);

/// SHA-256 of a file's contents. Throws IngestError if unreadable.
std::string sha256_file(const std::string& path);

/// Provenance record written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::string library_version;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::pair<std::string, std::string>> outputs;  // path -> sha256

  /// Digests `path` and appends it to outputs.
  void add_output(const std::string& path);
};

void write_manifest(const std::string& path, const RunManifest& manifest);

/// Current UTC time as ISO-8601 with seconds.
std::string utc_timestamp();

}  // namespace ipo
