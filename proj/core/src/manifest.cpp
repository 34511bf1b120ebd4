#include "rankcount/manifest.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace rankcount {

void RunManifest::write(const std::filesystem::path& path) const {
  nlohmann::json j{{"tool", tool},
                   {"version", version},
                   {"subcommand", subcommand},
                   {"argv", argv},
                   {"resolved", resolved},
                   {"seed", seed},
                   {"inputs", inputs},
                   {"outputs", outputs},
                   {"started_at", started_at},
                   {"wall_seconds", wall_seconds}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

RunManifest RunManifest::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad manifest " + path.string() + ": " + e.what());
  }
  RunManifest m;
  m.tool = j.value("tool", "rankcount");
  m.version = j.value("version", "");
  m.subcommand = j.at("subcommand").get<std::string>();
  m.argv = j.at("argv").get<std::vector<std::string>>();
  m.resolved = j.value("resolved", std::map<std::string, std::string>{});
  m.seed = j.value("seed", std::uint64_t{0});
  m.inputs = j.value("inputs", std::vector<std::string>{});
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.started_at = j.value("started_at", "");
  m.wall_seconds = j.value("wall_seconds", 0.0);
  return m;
}

}  // namespace rankcount
