#include "proin/scene.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace proin {

namespace {

// Two most recent observed step indices, latest first; -1 when missing.
std::pair<int, int> last_two_observed(std::span<const std::uint8_t> observed) {
  int last = -1, prev = -1;
  for (int t = static_cast<int>(observed.size()) - 1; t >= 0; --t) {
    if (!observed[t]) continue;
    if (last < 0) {
      last = t;
    } else {
      prev = t;
      break;
    }
  }
  return {last, prev};
}

}  // namespace

Vec2 AgentHistory::current_position() const {
  for (int t = steps() - 1; t >= 0; --t)
    if (observed[t]) return positions.row(t).transpose();
  return Vec2::Zero();
}

bool AgentHistory::has_current_position() const {
  return std::any_of(observed.begin(), observed.end(), [](std::uint8_t v) { return v != 0; });
}

AgentHistory preprocess_history(const Points& positions, std::span<const std::uint8_t> observed) {
  const auto steps = positions.rows();
  if (steps == 0) throw std::invalid_argument("preprocess_history: empty history");
  if (static_cast<Eigen::Index>(observed.size()) != steps)
    throw std::invalid_argument("preprocess_history: " + std::to_string(observed.size()) +
                                " validity flags for " + std::to_string(steps) + " positions");
  AgentHistory h;
  h.positions = Points::Zero(steps, 2);
  h.displacements = Points::Zero(steps, 2);
  h.validity.assign(steps, 0);
  h.observed.assign(observed.begin(), observed.end());
  for (Eigen::Index t = 0; t < steps; ++t) {
    h.observed[t] = observed[t] ? 1 : 0;
    if (h.observed[t]) h.positions.row(t) = positions.row(t);
  }
  h.validity[0] = h.observed[0];
  for (Eigen::Index t = 1; t < steps; ++t) {
    if (h.observed[t] && h.observed[t - 1]) {
      h.displacements.row(t) = h.positions.row(t) - h.positions.row(t - 1);
      h.validity[t] = 1;
    }
  }
  if (steps >= 2 && h.validity[steps - 1]) {
    h.last_velocity = h.displacements.row(steps - 1).transpose();
  } else {
    auto [last, prev] = last_two_observed(h.observed);
    if (last >= 0 && prev >= 0)
      h.last_velocity = (h.positions.row(last) - h.positions.row(prev)).transpose() / double(last - prev);
  }
  return h;
}

LaneSegment LaneSegment::from_endpoints(const Vec2& start, const Vec2& end,
                                        std::array<std::uint8_t, kRuleFlagWidth> flags) {
  LaneSegment s;
  s.delta = end - start;
  s.center = 0.5 * (start + end);
  s.rule_flags = flags;
  return s;
}

namespace {

Adjacency compose(const Adjacency& a, const Adjacency& b) {
  Adjacency out(a.size());
  for (std::size_t u = 0; u < a.size(); ++u) {
    std::set<int> reach;
    for (int v : a[u])
      for (int w : b[v]) reach.insert(w);
    out[u].assign(reach.begin(), reach.end());
  }
  return out;
}

Adjacency transpose(const Adjacency& a) {
  Adjacency out(a.size());
  for (std::size_t u = 0; u < a.size(); ++u)
    for (int v : a[u]) out[v].push_back(static_cast<int>(u));
  for (auto& l : out) std::sort(l.begin(), l.end());
  return out;
}

}  // namespace

LaneGraph build_lane_graph(std::vector<LaneSegment> segments,
                           std::span<const std::pair<int, int>> successor_pairs) {
  LaneGraph g;
  const int n = static_cast<int>(segments.size());
  g.segments = std::move(segments);
  Adjacency base(n);
  for (const auto& [from, to] : successor_pairs) {
    if (from < 0 || from >= n || to < 0 || to >= n)
      throw std::out_of_range("build_lane_graph: successor pair (" + std::to_string(from) + ", " +
                              std::to_string(to) + ") outside " + std::to_string(n) + " segments");
    if (from == to)
      throw std::invalid_argument("build_lane_graph: self loop at segment " + std::to_string(from));
    base[from].push_back(to);
    g.successor_pairs.emplace_back(from, to);
  }
  for (auto& l : base) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
  g.successors[0] = base;
  g.successors[1] = compose(base, base);
  g.successors[2] = compose(g.successors[1], g.successors[1]);
  for (std::size_t level = 0; level < kDilations.size(); ++level)
    g.predecessors[level] = transpose(g.successors[level]);
  return g;
}

int Future::valid_steps() const {
  return static_cast<int>(std::count_if(validity.begin(), validity.end(), [](std::uint8_t v) { return v; }));
}

void validate_scene(const Scene& scene) {
  if (scene.agents.empty()) throw std::invalid_argument("scene '" + scene.id + "': no agents");
  if (scene.focal_index < 0 || scene.focal_index >= static_cast<int>(scene.agents.size()))
    throw std::invalid_argument("scene '" + scene.id + "': focal index " + std::to_string(scene.focal_index) +
                                " out of range");
  const int steps = scene.history_steps();
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    const auto& a = scene.agents[i];
    if (a.steps() != steps || a.positions.rows() != steps || a.displacements.rows() != steps ||
        static_cast<int>(a.observed.size()) != steps)
      throw std::invalid_argument("scene '" + scene.id + "': agent " + std::to_string(i) +
                                  " history length differs from " + std::to_string(steps));
    if (a.displacements.row(0).squaredNorm() != 0.0)
      throw std::invalid_argument("scene '" + scene.id + "': agent " + std::to_string(i) +
                                  " has nonzero first displacement");
    for (int t = 0; t < steps; ++t)
      if (!a.validity[t] && a.displacements.row(t).squaredNorm() != 0.0)
        throw std::invalid_argument("scene '" + scene.id + "': agent " + std::to_string(i) +
                                    " has displacement at invalid step " + std::to_string(t));
    if (!a.positions.allFinite())
      throw std::invalid_argument("scene '" + scene.id + "': agent " + std::to_string(i) + " non-finite positions");
  }
  for (const auto& s : scene.lane_graph.segments)
    if (!s.delta.allFinite() || !s.center.allFinite())
      throw std::invalid_argument("scene '" + scene.id + "': non-finite lane segment");
  if (scene.has_futures()) {
    if (scene.futures.size() != scene.agents.size())
      throw std::invalid_argument("scene '" + scene.id + "': " + std::to_string(scene.futures.size()) +
                                  " futures for " + std::to_string(scene.agents.size()) + " agents");
    for (const auto& f : scene.futures)
      if (f.positions.rows() != scene.horizon || static_cast<int>(f.validity.size()) != scene.horizon)
        throw std::invalid_argument("scene '" + scene.id + "': future length differs from horizon " +
                                    std::to_string(scene.horizon));
  }
}

RigidTransform RigidTransform::inverse() const {
  // x = R^T x' + origin  ==  R^T (x' - (-R origin))
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.origin = -(rotation * origin);
  return inv;
}

RigidTransform RigidTransform::from_heading(const Vec2& origin, double heading) {
  RigidTransform t;
  const double c = std::cos(heading), s = std::sin(heading);
  t.rotation << c, s, -s, c;
  t.origin = origin;
  return t;
}

Scene transform_scene(const Scene& scene, const RigidTransform& transform) {
  Scene out = scene;
  for (auto& a : out.agents) {
    Points moved = a.positions;
    for (int t = 0; t < a.steps(); ++t)
      if (a.observed[t]) moved.row(t) = transform.apply(a.positions.row(t).transpose()).transpose();
    a = preprocess_history(moved, a.observed);
  }
  for (auto& f : out.futures)
    for (Eigen::Index t = 0; t < f.positions.rows(); ++t)
      if (f.validity[t]) f.positions.row(t) = transform.apply(f.positions.row(t).transpose()).transpose();
  for (auto& s : out.lane_graph.segments) {
    s.center = transform.apply(s.center);
    s.delta = transform.apply_vector(s.delta);
  }
  return out;
}

FocalFrame to_focal_frame(const Scene& scene) {
  if (scene.focal_index < 0 || scene.focal_index >= static_cast<int>(scene.agents.size()))
    throw std::invalid_argument("to_focal_frame: focal index out of range");
  const AgentHistory& focal = scene.agents[scene.focal_index];
  if (!focal.has_current_position())
    throw std::invalid_argument("to_focal_frame: focal agent has no observed position");

  FocalFrame frame;
  const int last = focal.steps() - 1;
  Vec2 heading_vec = Vec2::Zero();
  if (last >= 1 && focal.validity[last] && focal.displacements.row(last).norm() > 0.0) {
    heading_vec = focal.displacements.row(last).transpose();
    frame.heading_source = HeadingSource::kLastVelocity;
  } else {
    auto [a, b] = last_two_observed(focal.observed);
    if (a >= 0 && b >= 0) heading_vec = (focal.positions.row(a) - focal.positions.row(b)).transpose();
    frame.heading_source =
        heading_vec.norm() > 0.0 ? HeadingSource::kLastTwoPositions : HeadingSource::kIdentity;
  }
  const double heading = frame.heading_source == HeadingSource::kIdentity
                             ? 0.0
                             : std::atan2(heading_vec.y(), heading_vec.x());
  frame.transform = RigidTransform::from_heading(focal.current_position(), heading);
  frame.scene = transform_scene(scene, frame.transform);
  return frame;
}

}  // namespace proin
