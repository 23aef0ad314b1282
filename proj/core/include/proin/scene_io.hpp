#pragma once

// "proin-scene-v1" scene files: one self-describing JSON record per line.
//
//   {"version": "proin-scene-v1", "id": str, "focal": int, "horizon": F,
//    "agents": [{"positions": [[x, y], ...], "validity": [0|1, ...]}],
//    "lanes": [{"start": [x, y], "end": [x, y], "flags": [4 x 0|1]}],
//    "lane_successors": [[i, j], ...],
//    "future": [{"positions": [[x, y], ...], "validity": [...]}],   // optional
//    "kind": str, "seed": uint}                                      // optional
//
// Agent validity flags mark raw position availability; displacements are
// derived on load. Units are meters.

#include "proin/scene.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace proin {

inline constexpr std::string_view kSceneVersion = "proin-scene-v1";

std::string scene_to_line(const Scene& scene);
// Throws std::runtime_error naming `where` (e.g. "file:line") on malformed input.
Scene scene_from_line(std::string_view line, const std::string& where = "<line>");

std::vector<Scene> read_scenes(const std::filesystem::path& path);
void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes);

}  // namespace proin
