#include "proin/scene_gen.hpp"

#include "proin/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace proin {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kBoxHalf = 10.0;  // intersection box half-size, meters

using Flags = std::array<std::uint8_t, kRuleFlagWidth>;

Vec2 unit(double heading) { return {std::cos(heading), std::sin(heading)}; }
Vec2 left_normal(double heading) { return {-std::sin(heading), std::cos(heading)}; }

// Arc-length parametrized centerline made of lines, circular arcs and smooth
// lateral shifts. Queries outside [0, length] extrapolate along the end tangents.
class Path {
 public:
  Path(Vec2 start, double heading) : start_(start), heading_(heading), cursor_(start), cursor_heading_(heading) {}

  Path& line(double length) { return push({Piece::kLine, cursor_, cursor_heading_, length, 0.0, 0.0}); }
  // Positive angle turns left.
  Path& arc(double radius, double angle) {
    return push({Piece::kArc, cursor_, cursor_heading_, radius * std::abs(angle), radius, angle});
  }
  // Cosine-profile lateral offset over `length` of forward travel; positive is left.
  Path& shift(double length, double lateral) {
    return push({Piece::kShift, cursor_, cursor_heading_, length, lateral, 0.0});
  }

  double length() const { return total_; }

  Vec2 at(double s) const {
    if (s <= 0.0 || pieces_.empty()) return start_ + s * unit(heading_);
    double offset = 0.0;
    for (const auto& p : pieces_) {
      if (s <= offset + p.length) return eval(p, s - offset);
      offset += p.length;
    }
    return cursor_ + (s - total_) * unit(cursor_heading_);
  }

 private:
  struct Piece {
    enum Type { kLine, kArc, kShift } type;
    Vec2 start;
    double heading;
    double length;
    double a;  // arc radius or shift lateral offset
    double b;  // arc signed angle
  };

  static Vec2 eval(const Piece& p, double u) {
    switch (p.type) {
      case Piece::kLine:
        return p.start + u * unit(p.heading);
      case Piece::kArc: {
        const double sign = p.b >= 0.0 ? 1.0 : -1.0;
        const double r = p.a;
        const double th = p.heading + sign * u / r;
        return p.start + sign * r * Vec2(std::sin(th) - std::sin(p.heading), std::cos(p.heading) - std::cos(th));
      }
      case Piece::kShift:
        return p.start + u * unit(p.heading) +
               left_normal(p.heading) * p.a * 0.5 * (1.0 - std::cos(kPi * u / p.length));
    }
    return p.start;
  }

  Path& push(Piece p) {
    pieces_.push_back(p);
    cursor_ = eval(p, p.length);
    if (p.type == Piece::kArc) cursor_heading_ += p.b;
    total_ += p.length;
    return *this;
  }

  Vec2 start_;
  double heading_;
  Vec2 cursor_;
  double cursor_heading_;
  double total_ = 0.0;
  std::vector<Piece> pieces_;
};

struct LaneSpan {
  int first = 0;
  int last = 0;
};

class RoadBuilder {
 public:
  LaneSpan add_lane(const Path& path, Flags flags = {}) {
    const int n = std::max(1, static_cast<int>(std::lround(path.length() / kSegmentLength)));
    LaneSpan span{static_cast<int>(segments_.size()), 0};
    for (int k = 0; k < n; ++k) {
      const double s0 = path.length() * k / n;
      const double s1 = path.length() * (k + 1) / n;
      segments_.push_back(LaneSegment::from_endpoints(path.at(s0), path.at(s1), flags));
      if (k > 0) pairs_.emplace_back(static_cast<int>(segments_.size()) - 2, static_cast<int>(segments_.size()) - 1);
    }
    span.last = static_cast<int>(segments_.size()) - 1;
    return span;
  }
  void connect(const LaneSpan& from, const LaneSpan& to) { pairs_.emplace_back(from.last, to.first); }
  LaneGraph build() { return build_lane_graph(std::move(segments_), pairs_); }

 private:
  std::vector<LaneSegment> segments_;
  std::vector<std::pair<int, int>> pairs_;
};

// Longitudinal motion around the last history step (tau = 0). The agent
// accelerates at `accel` until it reaches `v_target`, then holds it. Before
// tau = 0 the same acceleration is extrapolated backwards.
struct SpeedProfile {
  double v_now = 0.0;     // m/s
  double accel = 0.0;     // m/s^2
  double v_target = 0.0;  // m/s

  double distance(double tau) const {
    if (tau <= 0.0 || accel == 0.0) return v_now * tau + (tau <= 0.0 ? 0.5 * accel * tau * tau : 0.0);
    const double reach = (v_target - v_now) / accel;
    if (reach <= 0.0) return v_now * tau;
    if (tau <= reach) return v_now * tau + 0.5 * accel * tau * tau;
    return v_now * reach + 0.5 * accel * reach * reach + v_target * (tau - reach);
  }
};

struct Motion {
  Path path;
  double s_now = 0.0;
  SpeedProfile speed;
  int hidden_prefix = 0;  // leading history steps with no observation
};

class Generator {
 public:
  explicit Generator(const ScenarioSpec& spec) : spec_(spec), rng_(spec.seed) {}

  Scene run();

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }

  void straight_scene();
  void turn_scene(bool left);
  void lane_change_scene();
  void yield_scene();

  void add_straight_lanes(const std::vector<double>& offsets, double x_min, double x_max);
  void add_intersection();
  void add_fillers(const std::vector<std::pair<Path, std::pair<double, double>>>& routes, double focal_x_keepout);
  Motion filler(Path path, double s_now);

  ScenarioSpec spec_;
  std::mt19937_64 rng_;
  RoadBuilder road_;
  std::vector<Motion> motions_;
  double w_ = 3.5;
};

void Generator::add_straight_lanes(const std::vector<double>& offsets, double x_min, double x_max) {
  for (double y : offsets) road_.add_lane(Path({x_min, y}, 0.0).line(x_max - x_min));
}

void Generator::add_intersection() {
  const double h = kBoxHalf;
  const double half = 0.5 * w_;
  const Flags left{1, 0, 0, 1}, right{0, 1, 0, 1}, through{0, 0, 1, 1};
  // Eastbound approach, its three connectors and the three exits.
  LaneSpan west_in = road_.add_lane(Path({-h - 40.0, -half}, 0.0).line(40.0));
  LaneSpan east_out = road_.add_lane(Path({h, -half}, 0.0).line(30.0));
  LaneSpan north_out = road_.add_lane(Path({half, h}, 0.5 * kPi).line(30.0));
  LaneSpan south_out = road_.add_lane(Path({-half, -h}, -0.5 * kPi).line(30.0));
  LaneSpan w_through = road_.add_lane(Path({-h, -half}, 0.0).line(2.0 * h), through);
  LaneSpan w_left = road_.add_lane(Path({-h, -half}, 0.0).arc(h + half, 0.5 * kPi), left);
  LaneSpan w_right = road_.add_lane(Path({-h, -half}, 0.0).arc(h - half, -0.5 * kPi), right);
  road_.connect(west_in, w_through);
  road_.connect(west_in, w_left);
  road_.connect(west_in, w_right);
  road_.connect(w_through, east_out);
  road_.connect(w_left, north_out);
  road_.connect(w_right, south_out);
  // Northbound crossing road.
  LaneSpan south_in = road_.add_lane(Path({half, -h - 30.0}, 0.5 * kPi).line(30.0));
  LaneSpan s_through = road_.add_lane(Path({half, -h}, 0.5 * kPi).line(2.0 * h), through);
  road_.connect(south_in, s_through);
  road_.connect(s_through, north_out);
}

Motion Generator::filler(Path path, double s_now) {
  Motion m{std::move(path), s_now, {}, 0};
  if (chance(0.15)) {
    m.speed = {0.0, 0.0, 0.0};
  } else {
    const double v = uniform(4.0, 12.0);
    const double a = uniform(-0.5, 0.5);
    m.speed = {v, a, std::clamp(v + a * 5.0, 1.0, 20.0)};
  }
  if (chance(0.3)) m.hidden_prefix = uniform_int(1, spec_.history_steps / 2);
  return m;
}

// Each route carries the allowed range of s_now; placements closer than
// `keepout` to the focal agent's current position are redrawn.
void Generator::add_fillers(const std::vector<std::pair<Path, std::pair<double, double>>>& routes,
                            double keepout) {
  const Vec2 focal_now = motions_.front().path.at(motions_.front().s_now);
  while (static_cast<int>(motions_.size()) < spec_.n_agents) {
    const auto& [path, range] = routes[uniform_int(0, static_cast<int>(routes.size()) - 1)];
    double s = uniform(range.first, range.second);
    for (int tries = 0; tries < 8 && (path.at(s) - focal_now).norm() < keepout; ++tries)
      s = uniform(range.first, range.second);
    motions_.push_back(filler(path, s));
  }
}

void Generator::straight_scene() {
  add_straight_lanes({-w_, 0.0, w_}, -30.0, 60.0);
  const double v = uniform(6.0, 14.0);
  const double a = uniform(-1.0, 1.0);
  motions_.push_back({Path({-300.0, 0.0}, 0.0).line(600.0), 300.0, {v, a, a >= 0.0 ? 20.0 : 2.0}, 0});
  std::vector<std::pair<Path, std::pair<double, double>>> routes;
  for (double y : {-w_, 0.0, w_}) routes.push_back({Path({-300.0, y}, 0.0).line(600.0), {275.0, 345.0}});
  add_fillers(routes, 10.0);
}

void Generator::turn_scene(bool left) {
  add_intersection();
  const double h = kBoxHalf, half = 0.5 * w_;
  const double radius = left ? h + half : h - half;
  const double v_turn = std::min(left ? 5.0 : 4.2, std::sqrt(2.2 * radius));
  const double v_now = uniform(v_turn, v_turn + 1.5);
  // Decelerate to the turn speed exactly at the box entry, at most 1.5 m/s^2.
  double dist = uniform(3.0, 10.0);
  dist = std::max(dist, (v_now * v_now - v_turn * v_turn) / 3.0 + 0.5);
  const double a = (v_turn * v_turn - v_now * v_now) / (2.0 * dist);
  Path route = Path({-h - 200.0, -half}, 0.0).line(200.0);
  route.arc(radius, left ? 0.5 * kPi : -0.5 * kPi).line(100.0);
  motions_.push_back({route, 200.0 - dist, {v_now, a, v_turn}, 0});
  add_fillers({{Path({-h - 200.0, -half}, 0.0).line(400.0), {150.0, 185.0}},
               {Path({h - 200.0, -half}, 0.0).line(400.0), {202.0, 225.0}},
               {Path({half, -h - 200.0}, 0.5 * kPi).line(400.0), {170.0, 230.0}}},
              10.0);
}

void Generator::lane_change_scene() {
  add_straight_lanes({0.0, w_}, -30.0, 60.0);
  const double v = uniform(3.5, 5.5);
  const double lead = uniform(0.3, 1.0) * v;  // shift started this far before the current position
  Path route = Path({-300.0, 0.0}, 0.0).line(300.0 - lead);
  route.shift(3.0 * v, w_).line(500.0);
  motions_.push_back({route, 300.0, {v, 0.0, v}, 0});
  if (spec_.n_agents >= 2) {
    const double gap = uniform(6.0, 9.0);
    motions_.push_back({Path({gap, 0.0}, 0.0).line(1.0), 0.0, {0.0, 0.0, 0.0}, 0});
  }
  add_fillers({{Path({-300.0, w_}, 0.0).line(600.0), {270.0, 288.0}},
               {Path({-300.0, w_}, 0.0).line(600.0), {318.0, 345.0}},
               {Path({-300.0, 0.0}, 0.0).line(600.0), {270.0, 285.0}}},
              10.0);
}

void Generator::yield_scene() {
  add_intersection();
  const double h = kBoxHalf, half = 0.5 * w_;
  const double v_now = uniform(3.0, 7.0);
  const double stop_dist = std::max(v_now * v_now / 5.0, uniform(4.0, 12.0));
  const double a = -v_now * v_now / (2.0 * stop_dist);
  // Stop line one meter before the box.
  motions_.push_back({Path({-h - 200.0, -half}, 0.0).line(400.0), 199.0 - stop_dist, {v_now, a, 0.0}, 0});
  if (spec_.n_agents >= 2) {
    const double v = uniform(7.0, 10.0);
    motions_.push_back(
        {Path({half, -h - 200.0}, 0.5 * kPi).line(400.0), 200.0 - uniform(3.0, 12.0), {v, 0.0, v}, 0});
  }
  add_fillers({{Path({h - 200.0, -half}, 0.0).line(400.0), {202.0, 225.0}},
               {Path({-h - 200.0, -half}, 0.0).line(400.0), {150.0, 180.0}},
               {Path({half, h - 200.0}, 0.5 * kPi).line(400.0), {202.0, 220.0}}},
              8.0);
}

Scene Generator::run() {
  spec_.validate();
  w_ = spec_.lane_spacing;
  switch (spec_.kind) {
    case ScenarioKind::kStraight: straight_scene(); break;
    case ScenarioKind::kLeftTurn: turn_scene(true); break;
    case ScenarioKind::kRightTurn: turn_scene(false); break;
    case ScenarioKind::kLaneChangeBlocked: lane_change_scene(); break;
    case ScenarioKind::kYieldCrossing: yield_scene(); break;
  }
  motions_.resize(static_cast<std::size_t>(spec_.n_agents), motions_.front());

  const int T = spec_.history_steps, F = spec_.future_steps;
  const double theta = uniform(-kPi, kPi);
  const Vec2 shift(uniform(-100.0, 100.0), uniform(-100.0, 100.0));
  const RigidTransform to_world = RigidTransform::from_heading(Vec2::Zero(), -theta).inverse();
  std::normal_distribution<double> noise(0.0, 1.0);
  auto place = [&](const Vec2& p) {
    Vec2 q = p;
    if (spec_.noise_sigma > 0.0) {
      const double nx = noise(rng_), ny = noise(rng_);
      q += spec_.noise_sigma * Vec2(nx, ny);
    }
    return Vec2(to_world.apply(q) + shift);
  };

  Scene scene;
  scene.focal_index = 0;
  scene.horizon = F;
  scene.kind = std::string(kind_name(spec_.kind));
  scene.seed = spec_.seed;
  scene.id = scene.kind + "-" + std::to_string(spec_.seed);
  for (const auto& m : motions_) {
    Points hist(T, 2);
    std::vector<std::uint8_t> observed(T, 1);
    Future fut;
    fut.positions.resize(F, 2);
    fut.validity.assign(F, 1);
    for (int t = 0; t < T + F; ++t) {
      const double tau = (t - (T - 1)) * kStepSeconds;
      const Vec2 p = place(m.path.at(m.s_now + m.speed.distance(tau)));
      if (t < T) {
        hist.row(t) = p.transpose();
        if (t < m.hidden_prefix) {
          observed[t] = 0;
          hist.row(t).setZero();
        }
      } else {
        fut.positions.row(t - T) = p.transpose();
      }
    }
    scene.agents.push_back(preprocess_history(hist, observed));
    scene.futures.push_back(std::move(fut));
  }

  LaneGraph graph = road_.build();
  for (auto& s : graph.segments) {
    s.center = to_world.apply(s.center) + shift;
    s.delta = to_world.apply_vector(s.delta);
  }
  scene.lane_graph = std::move(graph);
  return scene;
}

}  // namespace

std::string_view kind_name(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kStraight: return "straight";
    case ScenarioKind::kLeftTurn: return "left_turn";
    case ScenarioKind::kRightTurn: return "right_turn";
    case ScenarioKind::kLaneChangeBlocked: return "lane_change_blocked";
    case ScenarioKind::kYieldCrossing: return "yield_crossing";
  }
  return "unknown";
}

ScenarioKind kind_from_name(std::string_view name) {
  for (auto k : {ScenarioKind::kStraight, ScenarioKind::kLeftTurn, ScenarioKind::kRightTurn,
                 ScenarioKind::kLaneChangeBlocked, ScenarioKind::kYieldCrossing})
    if (kind_name(k) == name) return k;
  throw std::invalid_argument("unknown scenario kind '" + std::string(name) + "'");
}

void ScenarioSpec::validate() const {
  if (history_steps < 2) throw std::invalid_argument("ScenarioSpec: history_steps must be >= 2");
  if (future_steps < 1) throw std::invalid_argument("ScenarioSpec: future_steps must be >= 1");
  if (n_agents < 1) throw std::invalid_argument("ScenarioSpec: n_agents must be >= 1");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("ScenarioSpec: noise_sigma must be >= 0");
  if (!(lane_spacing > 0.0)) throw std::invalid_argument("ScenarioSpec: lane_spacing must be > 0");
}

Scene generate_scene(const ScenarioSpec& spec) { return Generator(spec).run(); }

std::vector<Scene> generate_scenes(const DatasetPlan& plan) {
  std::vector<Scene> scenes;
  std::uint64_t seed = plan.base_seed;
  for (const auto& [tmpl, count] : plan.entries) {
    for (int i = 0; i < count; ++i) {
      ScenarioSpec spec = tmpl;
      spec.seed = seed++;
      scenes.push_back(generate_scene(spec));
    }
  }
  return scenes;
}

namespace {

using nlohmann::json;

json spec_json(const ScenarioSpec& s) {
  return {{"kind", kind_name(s.kind)},       {"n_agents", s.n_agents},
          {"history_steps", s.history_steps}, {"future_steps", s.future_steps},
          {"lane_spacing", s.lane_spacing},   {"noise_sigma", s.noise_sigma}};
}

ScenarioSpec spec_from(const json& j) {
  ScenarioSpec s;
  s.kind = kind_from_name(j.at("kind").get<std::string>());
  s.n_agents = j.at("n_agents").get<int>();
  s.history_steps = j.at("history_steps").get<int>();
  s.future_steps = j.at("future_steps").get<int>();
  s.lane_spacing = j.at("lane_spacing").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  return s;
}

}  // namespace

std::filesystem::path manifest_path_for(const std::filesystem::path& scene_path) {
  return std::filesystem::path(scene_path.string() + ".manifest.json");
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json j;
  j["version"] = m.version;
  j["base_seed"] = m.plan.base_seed;
  json entries = json::array();
  for (const auto& [spec, count] : m.plan.entries) entries.push_back({{"spec", spec_json(spec)}, {"count", count}});
  j["entries"] = std::move(entries);
  j["seeds"] = m.seeds;
  j["kind_counts"] = m.kind_counts;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for manifest " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  try {
    const json j = json::parse(in);
    DatasetManifest m;
    m.version = j.at("version").get<std::string>();
    if (m.version != kManifestVersion)
      throw std::runtime_error("unsupported manifest version '" + m.version + "'");
    m.plan.base_seed = j.at("base_seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) m.plan.entries.emplace_back(spec_from(e.at("spec")), e.at("count").get<int>());
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.kind_counts = j.at("kind_counts").get<std::map<std::string, int>>();
    return m;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed manifest: " + e.what());
  }
}

DatasetManifest generate_dataset(const DatasetPlan& plan, const std::filesystem::path& path) {
  DatasetManifest m;
  m.plan = plan;
  const auto scenes = generate_scenes(plan);
  for (const auto& s : scenes) {
    m.seeds.push_back(*s.seed);
    ++m.kind_counts[s.kind];
  }
  write_scenes(path, scenes);
  write_manifest(m, manifest_path_for(path));
  return m;
}

std::pair<std::vector<Scene>, std::vector<Scene>> split_by_seed_parity(const std::vector<Scene>& scenes) {
  std::pair<std::vector<Scene>, std::vector<Scene>> out;
  for (const auto& s : scenes) {
    if (s.seed && (*s.seed % 2 == 1))
      out.second.push_back(s);
    else
      out.first.push_back(s);
  }
  return out;
}

DatasetPlan uniform_plan(const std::vector<ScenarioKind>& kinds, int total, std::uint64_t base_seed,
                         const ScenarioSpec& base) {
  if (kinds.empty()) throw std::invalid_argument("uniform_plan: no kinds");
  DatasetPlan plan;
  plan.base_seed = base_seed;
  const int n = static_cast<int>(kinds.size());
  for (int i = 0; i < n; ++i) {
    ScenarioSpec s = base;
    s.kind = kinds[i];
    plan.entries.emplace_back(s, total / n + (i < total % n ? 1 : 0));
  }
  return plan;
}

}  // namespace proin
