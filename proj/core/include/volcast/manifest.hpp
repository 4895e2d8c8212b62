#pragma once
// Provenance record written into every command's output directory: the
// command line, input config paths with content hashes, seed, and timestamp.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace volcast {

std::string sha256_bytes(const void* data, std::size_t len);
std::string sha256_file(const std::filesystem::path& p);

struct RunManifest {
  std::string command;
  std::vector<std::string> config_paths;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_hashes;  // path -> sha256 hex
  std::string created_at;                           // UTC, ISO 8601

  // Hashes every config path (DataError when one is unreadable) and stamps
  // the current time.
  static RunManifest make(const std::string& command,
                          const std::vector<std::string>& config_paths, std::uint64_t seed);

  void save(const std::filesystem::path& dir) const;  // dir/manifest.json
  std::string to_json_text() const;
};

}  // namespace volcast
