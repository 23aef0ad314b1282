#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace proin::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Written as `<primary output>.run.json` by every command.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_hash;  // fnv1a-64 of the canonical config JSON, hex
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double wall_seconds = 0;
};

std::string fnv1a_hex(const std::string& text);

void write_run_manifest(const RunManifest& manifest, const std::filesystem::path& primary_output);
std::filesystem::path run_manifest_path(const std::filesystem::path& primary_output);

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace proin::cli
