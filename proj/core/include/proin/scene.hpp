#pragma once

// Scene representation: agent histories encoded as per-step displacements with
// validity flags, a directed lane-segment graph with dilated adjacency, and the
// rigid focal-agent frame transform.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace proin {

using Vec2 = Eigen::Vector2d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 2>;

// Dilation levels of the lane graph. Level index 0, 1, 2 holds d = 1, 2, 4.
inline constexpr std::array<int, 3> kDilations = {1, 2, 4};
inline constexpr int kRuleFlagWidth = 4;

enum RuleFlag : int { kLeftTurn = 0, kRightTurn = 1, kStraight = 2, kInIntersection = 3 };

struct AgentHistory {
  Points displacements;               // T x 2, meters per step
  std::vector<std::uint8_t> validity;  // T flags
  Points positions;                   // T x 2, meters; zero rows where the raw step was missing
  std::vector<std::uint8_t> observed;  // T flags, raw position availability
  Vec2 last_velocity = Vec2::Zero();  // meters per step

  int steps() const { return static_cast<int>(validity.size()); }
  // Position at the last step, or the latest observed one before it.
  Vec2 current_position() const;
  bool has_current_position() const;
};

// Builds the displacement/validity encoding from raw positions. Row 0 is the
// zero vector; row t holds p(t) - p(t-1) when both steps were observed and is
// zero with validity 0 otherwise. Throws std::invalid_argument on empty input.
AgentHistory preprocess_history(const Points& positions, std::span<const std::uint8_t> observed);

struct LaneSegment {
  Vec2 delta = Vec2::Zero();   // end minus start
  Vec2 center = Vec2::Zero();
  std::array<std::uint8_t, kRuleFlagWidth> rule_flags{};

  Vec2 start() const { return center - 0.5 * delta; }
  Vec2 end() const { return center + 0.5 * delta; }
  static LaneSegment from_endpoints(const Vec2& start, const Vec2& end,
                                    std::array<std::uint8_t, kRuleFlagWidth> flags = {});
};

using Adjacency = std::vector<std::vector<int>>;

struct LaneGraph {
  std::vector<LaneSegment> segments;
  // successors[level][u] are nodes reachable from u in exactly kDilations[level]
  // directed steps; predecessors is the transpose at each level. Lists are sorted.
  std::array<Adjacency, 3> successors;
  std::array<Adjacency, 3> predecessors;
  std::vector<std::pair<int, int>> successor_pairs;  // dilation-1 edges as given

  int size() const { return static_cast<int>(segments.size()); }
};

// Throws std::out_of_range for pair indices outside the segment list. Self
// loops at dilation 1 are rejected with std::invalid_argument.
LaneGraph build_lane_graph(std::vector<LaneSegment> segments,
                           std::span<const std::pair<int, int>> successor_pairs);

struct Future {
  Points positions;                   // F x 2
  std::vector<std::uint8_t> validity;  // F flags

  bool endpoint_valid() const { return !validity.empty() && validity.back() != 0; }
  int valid_steps() const;
};

struct Scene {
  std::string id;
  std::vector<AgentHistory> agents;
  LaneGraph lane_graph;
  int focal_index = 0;
  int horizon = 0;               // F
  std::vector<Future> futures;   // empty at inference, else one per agent

  // Optional generator metadata carried through the scene file.
  std::string kind;
  std::optional<std::uint64_t> seed;

  int history_steps() const { return agents.empty() ? 0 : agents.front().steps(); }
  bool has_futures() const { return !futures.empty(); }
};

// Throws std::invalid_argument describing the first violated invariant.
void validate_scene(const Scene& scene);

// x' = rotation * (x - origin)
struct RigidTransform {
  Eigen::Matrix2d rotation = Eigen::Matrix2d::Identity();
  Vec2 origin = Vec2::Zero();

  Vec2 apply(const Vec2& p) const { return rotation * (p - origin); }
  Vec2 apply_vector(const Vec2& v) const { return rotation * v; }
  RigidTransform inverse() const;
  static RigidTransform from_heading(const Vec2& origin, double heading);
};

enum class HeadingSource { kLastVelocity, kLastTwoPositions, kIdentity };

struct FocalFrame {
  Scene scene;
  RigidTransform transform;  // original -> focal frame
  HeadingSource heading_source = HeadingSource::kLastVelocity;
};

// Applies the transform to every position, future, lane center and delta, then
// re-derives displacements and velocities from the transformed positions.
Scene transform_scene(const Scene& scene, const RigidTransform& transform);

// Translates and rotates the scene so the focal agent's current position is
// the origin and its heading is +x. Heading comes from the last velocity, then
// the last two observed positions, then identity. Throws std::invalid_argument
// when the focal agent has no observed position.
FocalFrame to_focal_frame(const Scene& scene);

}  // namespace proin
