#pragma once

// Deterministic synthetic driving scenarios. Each scene is built in a road
// frame (focal agent near the origin at the last history step, driving +x),
// then moved by a seeded random rigid transform so consumers must normalize.

#include "proin/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace proin {

inline constexpr double kStepSeconds = 0.1;
inline constexpr double kSegmentLength = 2.0;
inline constexpr std::string_view kManifestVersion = "proin-manifest-v1";

enum class ScenarioKind { kStraight, kLeftTurn, kRightTurn, kLaneChangeBlocked, kYieldCrossing };

std::string_view kind_name(ScenarioKind kind);
// Throws std::invalid_argument for unknown names.
ScenarioKind kind_from_name(std::string_view name);

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kStraight;
  int n_agents = 4;
  int history_steps = 20;  // T
  int future_steps = 30;   // F
  double lane_spacing = 3.5;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument on T < 2, F < 1, n_agents < 1, noise < 0.
  void validate() const;
};

Scene generate_scene(const ScenarioSpec& spec);

// Scenes are generated in plan order; the i-th scene gets seed base_seed + i
// and the ScenarioSpec template of its entry.
struct DatasetPlan {
  std::vector<std::pair<ScenarioSpec, int>> entries;  // template, count
  std::uint64_t base_seed = 0;
};

struct DatasetManifest {
  std::string version{kManifestVersion};
  DatasetPlan plan;
  std::vector<std::uint64_t> seeds;
  std::map<std::string, int> kind_counts;
};

std::vector<Scene> generate_scenes(const DatasetPlan& plan);

// Writes the scene file and `<path>.manifest.json`. Errors carry the path.
DatasetManifest generate_dataset(const DatasetPlan& plan, const std::filesystem::path& path);

std::filesystem::path manifest_path_for(const std::filesystem::path& scene_path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Even seeds train, odd seeds validate. Scenes without a seed go to train.
std::pair<std::vector<Scene>, std::vector<Scene>> split_by_seed_parity(const std::vector<Scene>& scenes);

// Mixed plan over the given kinds with equal shares of `total` scenes.
DatasetPlan uniform_plan(const std::vector<ScenarioKind>& kinds, int total, std::uint64_t base_seed,
                         const ScenarioSpec& base = {});

}  // namespace proin
