#include "run_manifest.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace proin::cli {

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::filesystem::path run_manifest_path(const std::filesystem::path& primary_output) {
  return primary_output.string() + ".run.json";
}

void write_run_manifest(const RunManifest& m, const std::filesystem::path& primary_output) {
  const nlohmann::ordered_json j = {
      {"command", m.command},   {"argv", m.argv},       {"config_hash", m.config_hash},
      {"seed", m.seed},         {"inputs", m.inputs},   {"outputs", m.outputs},
      {"version", kToolVersion}, {"wall_seconds", m.wall_seconds},
  };
  const auto path = run_manifest_path(primary_output);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write run manifest '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace proin::cli
