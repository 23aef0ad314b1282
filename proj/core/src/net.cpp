#include "proin/net.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace proin {

using ad::Matrix;
using ad::ParamStore;
using ad::Tape;
using ad::Var;

namespace {

// Metric inputs (centers, lane deltas, offsets) enter the network in units of
// ten meters.
constexpr double kGeometryScale = 0.1;

const char* const kDirections[2] = {"pre", "suc"};

class Initializer {
 public:
  Initializer(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  void matrix(const std::string& path, int rows, int cols, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    store_.add(path, std::move(m));
  }

  void linear(const std::string& name, int in, int out, bool bias = true) {
    matrix(name + "/W", in, out, in);
    if (bias) matrix(name + "/b", 1, out, in);
  }

  void mlp(const std::string& name, int in, int hidden, int out) {
    linear(name + "/l1", in, hidden);
    linear(name + "/l2", hidden, out);
  }

  void interaction(const std::string& stage, int center_dim, int neighbor_dim, int hidden) {
    matrix(stage + "/w1", center_dim, hidden, center_dim);
    matrix(stage + "/w2", center_dim, center_dim, center_dim);
    matrix(stage + "/w3", hidden, center_dim, hidden);
    mlp(stage + "/phi1", 2, hidden, hidden);
    mlp(stage + "/phi2", hidden + neighbor_dim + hidden, hidden, hidden);
    mlp(stage + "/phi3", hidden, hidden, center_dim);
  }

 private:
  ParamStore& store_;
  std::mt19937_64 rng_;
};

Var linear(Tape& t, const ParamStore& p, const std::string& name, const Var& x, bool bias = true) {
  Var y = ad::matmul(x, t.param(p, name + "/W"));
  return bias ? ad::add_row(y, t.param(p, name + "/b")) : y;
}

Var mlp(Tape& t, const ParamStore& p, const std::string& name, const Var& x) {
  return linear(t, p, name + "/l2", ad::relu(linear(t, p, name + "/l1", x)));
}

std::string mode_name(const char* prefix, int k) { return std::string(prefix) + std::to_string(k); }

}  // namespace

// ---- Topology / config ----------------------------------------------------

std::string Topology::name() const {
  if (*this == full()) return "full";
  if (*this == one_stage()) return "one-stage";
  const Topology minus_modes{true, true, true, false}, minus_social{true, true, false, true},
      minus_a2a{true, false, true, true}, minus_enc{false, true, true, true};
  if (*this == minus_modes) return "w/o M2A_m";
  if (*this == minus_social) return "w/o M2A_s";
  if (*this == minus_a2a) return "w/o A2A";
  if (*this == minus_enc) return "w/o M2A_e";
  // Table-safe: no commas in names.
  std::string f = flags();
  std::replace(f.begin(), f.end(), ',', '+');
  return f;
}

std::string Topology::flags() const {
  std::vector<std::string> parts;
  if (m2a_encoder) parts.emplace_back("m2a_e");
  if (agent_agent) parts.emplace_back("a2a");
  if (m2a_social) parts.emplace_back("m2a_s");
  if (m2a_modes) parts.emplace_back("m2a_m");
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out.empty() ? "none" : out;
}

Topology Topology::parse(std::string_view text) {
  if (text == "full") return full();
  if (text == "one-stage") return one_stage();
  Topology t{false, false, false, false};
  if (text == "none" || text.empty()) return t;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "m2a_e")
      t.m2a_encoder = true;
    else if (item == "a2a")
      t.agent_agent = true;
    else if (item == "m2a_s")
      t.m2a_social = true;
    else if (item == "m2a_m")
      t.m2a_modes = true;
    else
      throw std::invalid_argument("unknown topology flag '" + item + "' (expected m2a_e, a2a, m2a_s, m2a_m)");
  }
  return t;
}

std::vector<Topology> Topology::ablation_rows() {
  return {one_stage(),
          {true, true, true, false},
          {true, true, false, true},
          {true, false, true, true},
          {false, true, true, true},
          full()};
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("ModelConfig: ") + what);
  };
  require(d_agent >= 1 && d_map >= 1 && mlp_hidden >= 1, "feature widths must be positive");
  require(modes >= 1, "modes (K) must be >= 1");
  require(history_steps >= 1 && future_steps >= 1, "T and F must be >= 1");
  require(delta > 0.0, "delta must be > 0");
  require(a2a_radius > 0.0, "a2a_radius must be > 0");
  require(lookahead_steps >= 0, "lookahead_steps must be >= 0");
  require(pool_radius >= 0.0, "pool_radius must be >= 0");
}

// ---- parameters -------------------------------------------------------------

ParamStore init_params(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ParamStore store;
  Initializer init(store, seed);
  const int da = c.d_agent, dm = c.d_map, h = c.mlp_hidden;

  init.matrix("agent/lstm/wx", 3, 4 * da, 3);
  init.matrix("agent/lstm/wh", da, 4 * da, da);
  init.matrix("agent/lstm/b", 1, 4 * da, da);
  init.linear("agent/fc", c.history_steps * da, da);

  init.mlp("map/center", 2, h, dm);
  init.mlp("map/delta", 2, h, dm);
  init.mlp("map/flags", kRuleFlagWidth, h, dm);
  init.interaction("map/pool", dm, da, h);
  for (int l = 0; l < 3; ++l) {
    const std::string layer = "map/conv" + std::to_string(l);
    init.linear(layer + "/self", dm, dm);
    for (const char* dir : kDirections)
      for (int d : kDilations) init.linear(layer + "/" + dir + std::to_string(d), dm, dm, false);
  }

  if (c.topology.m2a_encoder) init.interaction("m2a_e", da, dm, h);
  if (c.topology.agent_agent) init.interaction("a2a", da, da, h);
  if (c.topology.m2a_social) init.interaction("m2a_s", da, dm, h);
  for (int k = 0; k < c.modes; ++k) init.mlp(mode_name("mode", k), da, h, da);
  if (c.topology.m2a_modes) init.interaction("m2a_m", da, dm, h);
  for (int k = 0; k < c.modes; ++k) init.mlp(mode_name("dec", k), da, h, 2 * c.future_steps);
  // No output bias: it is shared by all modes and cancels in the softmax.
  init.linear("score/l1", 2 * da, h);
  init.linear("score/l2", h, 1, false);
  return store;
}

// ---- geometry ---------------------------------------------------------------

std::vector<Vec2> current_positions(const std::vector<AgentHistory>& agents) {
  std::vector<Vec2> out;
  out.reserve(agents.size());
  for (const auto& a : agents) out.push_back(a.current_position());
  return out;
}

std::vector<int> select_map_neighbors(const AgentHistory& agent, const LaneGraph& graph, const ModelConfig& config) {
  const Vec2 reach = agent.last_velocity * static_cast<double>(config.lookahead_steps);
  const Vec2 center = agent.current_position() + reach;
  const double radius = reach.norm() + config.delta;
  std::vector<int> out;
  for (int j = 0; j < graph.size(); ++j)
    if ((graph.segments[j].center - center).norm() <= radius) out.push_back(j);
  return out;
}

NeighborEdges map_agent_edges(const std::vector<AgentHistory>& agents, const LaneGraph& graph,
                              const ModelConfig& config) {
  NeighborEdges e;
  std::vector<Vec2> offsets;
  for (int i = 0; i < static_cast<int>(agents.size()); ++i) {
    const Vec2 p = agents[i].current_position();
    for (int j : select_map_neighbors(agents[i], graph, config)) {
      e.center.push_back(i);
      e.neighbor.push_back(j);
      offsets.push_back(graph.segments[j].center - p);
    }
  }
  e.offsets.resize(static_cast<Eigen::Index>(offsets.size()), 2);
  for (std::size_t r = 0; r < offsets.size(); ++r) e.offsets.row(static_cast<Eigen::Index>(r)) = offsets[r].transpose();
  return e;
}

NeighborEdges agent_agent_edges(const std::vector<Vec2>& positions, double radius) {
  NeighborEdges e;
  std::vector<Vec2> offsets;
  const int n = static_cast<int>(positions.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const Vec2 d = positions[j] - positions[i];
      if (d.norm() > radius) continue;
      e.center.push_back(i);
      e.neighbor.push_back(j);
      offsets.push_back(d);
    }
  e.offsets.resize(static_cast<Eigen::Index>(offsets.size()), 2);
  for (std::size_t r = 0; r < offsets.size(); ++r) e.offsets.row(static_cast<Eigen::Index>(r)) = offsets[r].transpose();
  return e;
}

// ---- stages -------------------------------------------------------------------

Var interact(Tape& t, const ParamStore& p, const std::string& stage, const Var& centers, const Var& neighbors,
             const NeighborEdges& edges, std::vector<AttentionRecord>* attention, int agents_per_mode) {
  const Var self = ad::matmul(centers, t.param(p, stage + "/w2"));
  if (edges.size() == 0) return self;

  const Var w1 = t.param(p, stage + "/w1");
  const Eigen::Index h = w1.cols();
  const Eigen::Index dn = neighbors.cols();
  // phi2's first layer applied to [a W1, n, phi1(offset)] split by input block.
  const Var first = t.param(p, stage + "/phi2/l1/W");
  if (first.rows() != h + dn + h)
    throw std::invalid_argument(stage + ": neighbor width " + std::to_string(dn) + " does not match parameters");
  const Var from_center = ad::matmul(ad::matmul(centers, w1), ad::slice_rows(first, 0, h));
  const Var from_neighbor = ad::matmul(neighbors, ad::slice_rows(first, h, dn));
  const Var offsets = mlp(t, p, stage + "/phi1", t.constant(edges.offsets * kGeometryScale));
  const Var from_offset = ad::matmul(offsets, ad::slice_rows(first, h + dn, h));

  Var pre = ad::add(ad::gather_rows(from_center, edges.center), ad::gather_rows(from_neighbor, edges.neighbor));
  pre = ad::add_row(ad::add(pre, from_offset), t.param(p, stage + "/phi2/l1/b"));
  const Var relation = linear(t, p, stage + "/phi2/l2", ad::relu(pre));

  const Eigen::Index rows = centers.rows();
  const Var weights = ad::segment_softmax(mlp(t, p, stage + "/phi3", relation), edges.center, rows);
  const Var messages = ad::mul(weights, ad::matmul(relation, t.param(p, stage + "/w3")));

  if (attention) {
    const Matrix& w = weights.value();
    for (std::size_t e = 0; e < edges.size(); ++e) {
      AttentionRecord r;
      r.stage = stage;
      const int c = edges.center[e];
      r.agent = agents_per_mode > 0 ? c % agents_per_mode : c;
      r.mode = agents_per_mode > 0 ? c / agents_per_mode : -1;
      r.node = edges.neighbor[e];
      r.weight = w.row(static_cast<Eigen::Index>(e)).mean();
      attention->push_back(std::move(r));
    }
  }
  return ad::add(self, ad::scatter_add_rows(messages, edges.center, rows));
}

Var encode_agents(Tape& t, const ParamStore& p, const ModelConfig& c, const std::vector<AgentHistory>& agents) {
  const int n = static_cast<int>(agents.size());
  const int steps = c.history_steps;
  for (const auto& a : agents)
    if (a.steps() != steps)
      throw std::invalid_argument("encode_agents: history has " + std::to_string(a.steps()) +
                                  " steps, model expects " + std::to_string(steps));
  const Var wx = t.param(p, "agent/lstm/wx");
  const Var wh = t.param(p, "agent/lstm/wh");
  const Var b = t.param(p, "agent/lstm/b");
  ad::RecurrentState state{t.constant(Matrix::Zero(n, c.d_agent)), t.constant(Matrix::Zero(n, c.d_agent))};
  std::vector<Var> hidden;
  hidden.reserve(steps);
  for (int s = 0; s < steps; ++s) {
    Matrix x(n, 3);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = agents[i].displacements(s, 0);
      x(i, 1) = agents[i].displacements(s, 1);
      x(i, 2) = agents[i].validity[s];
    }
    state = ad::recurrent_step(t.constant(std::move(x)), state, wx, wh, b);
    hidden.push_back(state.hidden);
  }
  return linear(t, p, "agent/fc", ad::concat_cols(hidden));
}

Var encode_map(Tape& t, const ParamStore& p, const ModelConfig& c, const LaneGraph& graph,
               const std::vector<Vec2>& agent_positions, const Var& agent_features) {
  const int m = graph.size();
  if (m == 0) throw std::invalid_argument("encode_map: empty lane graph");
  Matrix centers(m, 2), deltas(m, 2), flags(m, kRuleFlagWidth);
  for (int j = 0; j < m; ++j) {
    const auto& s = graph.segments[j];
    centers.row(j) = s.center.transpose() * kGeometryScale;
    deltas.row(j) = s.delta.transpose() * kGeometryScale;
    for (int f = 0; f < kRuleFlagWidth; ++f) flags(j, f) = s.rule_flags[f];
  }
  Var x = ad::add(ad::add(mlp(t, p, "map/center", t.constant(std::move(centers))),
                          mlp(t, p, "map/delta", t.constant(std::move(deltas)))),
                  mlp(t, p, "map/flags", t.constant(std::move(flags))));

  NeighborEdges pool;
  std::vector<Vec2> offsets;
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < static_cast<int>(agent_positions.size()); ++i) {
      const Vec2 d = agent_positions[i] - graph.segments[j].center;
      if (d.norm() > c.pool_radius) continue;
      pool.center.push_back(j);
      pool.neighbor.push_back(i);
      offsets.push_back(d);
    }
  pool.offsets.resize(static_cast<Eigen::Index>(offsets.size()), 2);
  for (std::size_t r = 0; r < offsets.size(); ++r) pool.offsets.row(static_cast<Eigen::Index>(r)) = offsets[r].transpose();
  x = interact(t, p, "map/pool", x, agent_features, pool);

  // Aggregation edges: node `dst` sums the features of its neighbors `src`.
  struct Aggregation {
    std::string suffix;
    std::vector<int> src, dst;
  };
  std::vector<Aggregation> aggs;
  for (int dir = 0; dir < 2; ++dir)
    for (std::size_t level = 0; level < kDilations.size(); ++level) {
      const Adjacency& adj = dir == 0 ? graph.predecessors[level] : graph.successors[level];
      Aggregation a{std::string(kDirections[dir]) + std::to_string(kDilations[level]), {}, {}};
      for (int u = 0; u < m; ++u)
        for (int v : adj[u]) {
          a.src.push_back(v);
          a.dst.push_back(u);
        }
      aggs.push_back(std::move(a));
    }

  for (int l = 0; l < 3; ++l) {
    const std::string layer = "map/conv" + std::to_string(l);
    Var y = linear(t, p, layer + "/self", x);
    for (const auto& a : aggs) {
      if (a.src.empty()) continue;
      const Var summed = ad::scatter_add_rows(ad::gather_rows(x, a.src), a.dst, m);
      y = ad::add(y, linear(t, p, layer + "/" + a.suffix, summed, false));
    }
    x = ad::add(ad::relu(y), x);
  }
  return x;
}

Var differentiate_modes(Tape& t, const ParamStore& p, const ModelConfig& c, const Var& features) {
  std::vector<Var> branches;
  branches.reserve(c.modes);
  for (int k = 0; k < c.modes; ++k) branches.push_back(ad::add(features, mlp(t, p, mode_name("mode", k), features)));
  return ad::concat_rows(branches);
}

ForwardOutput decode_and_score(Tape& t, const ParamStore& p, const ModelConfig& c, const Var& branches,
                               const Var& agent_features, const std::vector<Vec2>& positions) {
  const int n = static_cast<int>(agent_features.rows());
  if (branches.rows() != static_cast<Eigen::Index>(n) * c.modes)
    throw std::invalid_argument("decode_and_score: expected " + std::to_string(n * c.modes) + " branch rows");
  Matrix origin(n, 2 * c.future_steps);
  for (int i = 0; i < n; ++i)
    for (int s = 0; s < c.future_steps; ++s) {
      origin(i, 2 * s) = positions[i].x();
      origin(i, 2 * s + 1) = positions[i].y();
    }
  const Var start = t.constant(std::move(origin));
  std::vector<Var> trajectories, logits;
  for (int k = 0; k < c.modes; ++k) {
    const Var branch = ad::slice_rows(branches, static_cast<Eigen::Index>(k) * n, n);
    const Var steps = mlp(t, p, mode_name("dec", k), branch);
    trajectories.push_back(ad::add(ad::cumsum_steps(steps, 2), start));
    const Var both[] = {branch, agent_features};
    logits.push_back(linear(t, p, "score/l2", ad::relu(linear(t, p, "score/l1", ad::concat_cols(both))), false));
  }
  ForwardOutput out;
  out.trajectories = ad::concat_rows(trajectories);
  out.scores = ad::row_softmax(ad::concat_cols(logits));
  out.agents = n;
  out.modes = c.modes;
  out.future_steps = c.future_steps;
  return out;
}

ForwardOutput forward(Tape& t, const Scene& scene, const ParamStore& p, const ModelConfig& c, bool record_attention) {
  const auto& agents = scene.agents;
  const int n = static_cast<int>(agents.size());
  if (n == 0) throw std::invalid_argument("forward: scene without agents");
  const std::vector<Vec2> positions = current_positions(agents);
  const bool has_map = scene.lane_graph.size() > 0;
  std::vector<AttentionRecord> attention;
  std::vector<AttentionRecord>* dump = record_attention ? &attention : nullptr;

  Var a = encode_agents(t, p, c, agents);
  const Var map = has_map ? encode_map(t, p, c, scene.lane_graph, positions, a)
                          : t.constant(Matrix::Zero(1, c.d_map));
  const NeighborEdges map_edges = has_map ? map_agent_edges(agents, scene.lane_graph, c) : NeighborEdges{};

  if (c.topology.m2a_encoder) a = interact(t, p, "m2a_e", a, map, map_edges, dump);
  if (c.topology.agent_agent) a = interact(t, p, "a2a", a, a, agent_agent_edges(positions, c.a2a_radius));
  if (c.topology.m2a_social) a = interact(t, p, "m2a_s", a, map, map_edges, dump);

  Var branches = differentiate_modes(t, p, c, a);
  if (c.topology.m2a_modes) {
    NeighborEdges per_mode;
    const auto e = static_cast<Eigen::Index>(map_edges.size());
    per_mode.offsets.resize(e * c.modes, 2);
    for (int k = 0; k < c.modes; ++k) {
      for (std::size_t r = 0; r < map_edges.size(); ++r) {
        per_mode.center.push_back(k * n + map_edges.center[r]);
        per_mode.neighbor.push_back(map_edges.neighbor[r]);
      }
      if (e > 0) per_mode.offsets.middleRows(k * e, e) = map_edges.offsets;
    }
    branches = interact(t, p, "m2a_m", branches, map, per_mode, dump, n);
  }
  ForwardOutput out = decode_and_score(t, p, c, branches, a, positions);
  out.attention = std::move(attention);
  return out;
}

Prediction ForwardOutput::prediction(int agent) const {
  if (agent < 0 || agent >= agents) throw std::out_of_range("ForwardOutput: agent index out of range");
  Prediction pred;
  const Matrix& traj = trajectories.value();
  const Matrix& sc = scores.value();
  for (int k = 0; k < modes; ++k) {
    Points pts(future_steps, 2);
    for (int s = 0; s < future_steps; ++s) {
      pts(s, 0) = traj(static_cast<Eigen::Index>(k) * agents + agent, 2 * s);
      pts(s, 1) = traj(static_cast<Eigen::Index>(k) * agents + agent, 2 * s + 1);
    }
    pred.trajectories.push_back(std::move(pts));
    pred.scores.push_back(sc(agent, k));
  }
  for (const auto& r : attention)
    if (r.agent == agent) pred.attention.push_back(r);
  return pred;
}

Prediction predict_focal(const Scene& scene, const ParamStore& params, const ModelConfig& config,
                         bool record_attention) {
  const FocalFrame frame = to_focal_frame(scene);
  Tape tape;
  const ForwardOutput out = forward(tape, frame.scene, params, config, record_attention);
  Prediction pred = out.prediction(scene.focal_index);
  const RigidTransform back = frame.transform.inverse();
  for (auto& traj : pred.trajectories)
    for (Eigen::Index s = 0; s < traj.rows(); ++s) traj.row(s) = back.apply(traj.row(s).transpose()).transpose();
  return pred;
}

}  // namespace proin
