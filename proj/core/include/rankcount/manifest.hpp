#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rankcount {

/// Record of one CLI run: the exact argument vector plus every resolved
/// setting, enough to reproduce the run and its artifacts byte for byte
/// (wall-clock fields aside).
struct RunManifest {
  std::string tool = "rankcount";
  std::string version;
  std::string subcommand;
  std::vector<std::string> argv;  // without the program name
  std::map<std::string, std::string> resolved;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started_at;
  double wall_seconds = 0.0;

  void write(const std::filesystem::path& path) const;
  static RunManifest read(const std::filesystem::path& path);
};

}  // namespace rankcount
