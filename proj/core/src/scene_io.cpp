#include "proin/scene_io.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace proin {

using nlohmann::json;

namespace {

json points_json(const Points& p) {
  json arr = json::array();
  for (Eigen::Index t = 0; t < p.rows(); ++t) arr.push_back({p(t, 0), p(t, 1)});
  return arr;
}

json vec_json(const Vec2& v) { return {v.x(), v.y()}; }

Points points_from(const json& arr) {
  Points p(static_cast<Eigen::Index>(arr.size()), 2);
  for (std::size_t t = 0; t < arr.size(); ++t) {
    const auto& row = arr.at(t);
    if (!row.is_array() || row.size() != 2) throw std::runtime_error("point must be [x, y]");
    p(static_cast<Eigen::Index>(t), 0) = row.at(0).get<double>();
    p(static_cast<Eigen::Index>(t), 1) = row.at(1).get<double>();
  }
  return p;
}

Vec2 vec_from(const json& arr) {
  if (!arr.is_array() || arr.size() != 2) throw std::runtime_error("point must be [x, y]");
  return {arr.at(0).get<double>(), arr.at(1).get<double>()};
}

std::vector<std::uint8_t> flags_from(const json& arr) {
  std::vector<std::uint8_t> out;
  for (const auto& v : arr) out.push_back(v.get<int>() != 0 ? 1 : 0);
  return out;
}

}  // namespace

std::string scene_to_line(const Scene& scene) {
  json j;
  j["version"] = kSceneVersion;
  j["id"] = scene.id;
  j["focal"] = scene.focal_index;
  j["horizon"] = scene.horizon;
  json agents = json::array();
  for (const auto& a : scene.agents) {
    json rec;
    rec["positions"] = points_json(a.positions);
    rec["validity"] = a.observed;
    agents.push_back(std::move(rec));
  }
  j["agents"] = std::move(agents);
  json lanes = json::array();
  for (const auto& s : scene.lane_graph.segments) {
    json rec;
    rec["start"] = vec_json(s.start());
    rec["end"] = vec_json(s.end());
    rec["flags"] = s.rule_flags;
    lanes.push_back(std::move(rec));
  }
  j["lanes"] = std::move(lanes);
  json succ = json::array();
  for (const auto& [a, b] : scene.lane_graph.successor_pairs) succ.push_back({a, b});
  j["lane_successors"] = std::move(succ);
  if (scene.has_futures()) {
    json fut = json::array();
    for (const auto& f : scene.futures) {
      json rec;
      rec["positions"] = points_json(f.positions);
      rec["validity"] = f.validity;
      fut.push_back(std::move(rec));
    }
    j["future"] = std::move(fut);
  }
  if (!scene.kind.empty()) j["kind"] = scene.kind;
  if (scene.seed) j["seed"] = *scene.seed;
  return j.dump();
}

Scene scene_from_line(std::string_view line, const std::string& where) {
  try {
    const json j = json::parse(line);
    const auto version = j.at("version").get<std::string>();
    if (version != kSceneVersion)
      throw std::runtime_error("unsupported scene version '" + version + "' (expected '" +
                               std::string(kSceneVersion) + "')");
    Scene s;
    s.id = j.value("id", std::string{});
    s.focal_index = j.at("focal").get<int>();
    s.horizon = j.value("horizon", 0);
    for (const auto& rec : j.at("agents")) {
      const Points p = points_from(rec.at("positions"));
      const auto flags = flags_from(rec.at("validity"));
      s.agents.push_back(preprocess_history(p, flags));
    }
    std::vector<LaneSegment> segs;
    for (const auto& rec : j.at("lanes")) {
      std::array<std::uint8_t, kRuleFlagWidth> flags{};
      const auto raw = flags_from(rec.at("flags"));
      if (raw.size() != kRuleFlagWidth)
        throw std::runtime_error("lane flags must have width " + std::to_string(kRuleFlagWidth));
      std::copy(raw.begin(), raw.end(), flags.begin());
      segs.push_back(LaneSegment::from_endpoints(vec_from(rec.at("start")), vec_from(rec.at("end")), flags));
    }
    std::vector<std::pair<int, int>> pairs;
    for (const auto& p : j.at("lane_successors")) pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    s.lane_graph = build_lane_graph(std::move(segs), pairs);
    if (j.contains("future")) {
      for (const auto& rec : j.at("future")) {
        Future f;
        f.positions = points_from(rec.at("positions"));
        f.validity = flags_from(rec.at("validity"));
        s.futures.push_back(std::move(f));
      }
      if (s.horizon == 0 && !s.futures.empty()) s.horizon = static_cast<int>(s.futures.front().validity.size());
    }
    if (j.contains("kind")) s.kind = j.at("kind").get<std::string>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    validate_scene(s);
    return s;
  } catch (const std::exception& e) {
    throw std::runtime_error(where + ": malformed scene: " + e.what());
  }
}

std::vector<Scene> read_scenes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file " + path.string());
  std::vector<Scene> scenes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    scenes.push_back(scene_from_line(line, path.string() + ":" + std::to_string(lineno)));
    if (scenes.back().id.empty()) scenes.back().id = std::to_string(scenes.size() - 1);
  }
  return scenes;
}

void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write scene file " + path.string());
  for (const auto& s : scenes) out << scene_to_line(s) << '\n';
  if (!out) throw std::runtime_error("write failed for scene file " + path.string());
}

}  // namespace proin
