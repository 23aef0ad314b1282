#pragma once

// Progressive-interaction forecasting network.
//
// Pipeline over a focal-frame scene:
//   agent encoder -> map encoder -> map-agent (after encoder) -> agent-agent
//   -> map-agent (after social) -> K residual branches -> map-agent per branch
//   -> per-branch trajectory decoders + shared score head.
//
// Every interaction block has the same graph-convolution form:
//   g_ij = phi2([a_i W1, n_j, phi1(offset_ij)])
//   a_i' = a_i W2 + sum_j softmax_j(phi3(g_ij)) (.) g_ij W3
// where the softmax normalizes each channel over the neighbor set of a_i and
// an empty neighbor set leaves a_i' = a_i W2.

#include "proin/autodiff.hpp"
#include "proin/scene.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace proin {

// Which interaction stages are active; the six rows of the component ablation
// are produced by disabling one stage (or two for the one-stage baseline).
struct Topology {
  bool m2a_encoder = true;
  bool agent_agent = true;
  bool m2a_social = true;
  bool m2a_modes = true;

  std::string name() const;
  // Comma list of "m2a_e", "a2a", "m2a_s", "m2a_m" (or "full" / "one-stage").
  std::string flags() const;
  static Topology parse(std::string_view flags);
  static Topology full() { return {}; }
  static Topology one_stage() { return {true, true, false, false}; }
  // one-stage, w/o M2A_m, w/o M2A_s, w/o A2A, w/o M2A_e, full.
  static std::vector<Topology> ablation_rows();

  friend bool operator==(const Topology&, const Topology&) = default;
};

struct ModelConfig {
  int d_agent = 128;
  int d_map = 128;
  int modes = 6;           // K
  int history_steps = 20;  // T
  int future_steps = 30;   // F
  double delta = 10.0;     // neighbor radius slack, meters
  int lookahead_steps = 25;
  double a2a_radius = 100.0;
  double pool_radius = 10.0;  // agent pooling radius around lane segments
  int mlp_hidden = 128;
  Topology topology;

  // Throws std::invalid_argument on a violated invariant.
  void validate() const;
};

struct AttentionRecord {
  std::string stage;  // "m2a_e", "m2a_s" or "m2a_m"
  int agent = 0;
  int mode = -1;      // branch index for m2a_m, -1 otherwise
  int node = 0;
  double weight = 0;  // mean softmax weight over channels
};

struct Prediction {
  std::vector<Points> trajectories;  // K x (F x 2), meters
  std::vector<double> scores;        // K, sums to one
  std::vector<AttentionRecord> attention;

  int modes() const { return static_cast<int>(scores.size()); }
};

// Neighborhood description for one interaction block.
struct NeighborEdges {
  std::vector<int> center;
  std::vector<int> neighbor;
  ad::Matrix offsets;  // E x 2, meters (neighbor minus center)

  std::size_t size() const { return center.size(); }
};

struct ForwardOutput {
  ad::Var trajectories;  // (K * N) x 2F absolute positions, row k * N + i
  ad::Var scores;        // N x K
  int agents = 0;
  int modes = 0;
  int future_steps = 0;
  std::vector<AttentionRecord> attention;

  Prediction prediction(int agent) const;
};

// Parameter initialization: uniform in +-1/sqrt(fan_in). Only enabled stages
// get parameters.
ad::ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

// ---- stages ---------------------------------------------------------------

// Recurrent pass over [dx, dy, valid] per step, all step states combined by
// one affine layer. Returns N x d_agent.
ad::Var encode_agents(ad::Tape& tape, const ad::ParamStore& params, const ModelConfig& config,
                      const std::vector<AgentHistory>& agents);

// Lane nodes from center/delta/flag MLPs plus pooled nearby agents, then three
// residual graph convolutions over predecessor/successor adjacency at
// dilations 1, 2, 4. Returns M x d_map.
ad::Var encode_map(ad::Tape& tape, const ad::ParamStore& params, const ModelConfig& config,
                   const LaneGraph& graph, const std::vector<Vec2>& agent_positions, const ad::Var& agent_features);

// Nodes within |D| + delta of p(T) + D, D = last_velocity * lookahead_steps.
std::vector<int> select_map_neighbors(const AgentHistory& agent, const LaneGraph& graph, const ModelConfig& config);

NeighborEdges map_agent_edges(const std::vector<AgentHistory>& agents, const LaneGraph& graph,
                              const ModelConfig& config);
NeighborEdges agent_agent_edges(const std::vector<Vec2>& positions, double radius);

// One interaction block named `stage`. When `attention` is set, the mean
// channel weight of every edge is appended with `mode_of_center` translating
// center rows into (agent, mode).
ad::Var interact(ad::Tape& tape, const ad::ParamStore& params, const std::string& stage, const ad::Var& centers,
                 const ad::Var& neighbors, const NeighborEdges& edges,
                 std::vector<AttentionRecord>* attention = nullptr, int agents_per_mode = 0);

// K residual branches stacked as rows k * N + i.
ad::Var differentiate_modes(ad::Tape& tape, const ad::ParamStore& params, const ModelConfig& config,
                            const ad::Var& features);

ForwardOutput decode_and_score(ad::Tape& tape, const ad::ParamStore& params, const ModelConfig& config,
                               const ad::Var& branches, const ad::Var& agent_features,
                               const std::vector<Vec2>& current_positions);

// Full pipeline. The scene must already be in the focal frame.
ForwardOutput forward(ad::Tape& tape, const Scene& scene, const ad::ParamStore& params, const ModelConfig& config,
                      bool record_attention = false);

// Normalizes, runs the network on its own tape and maps the focal agent's
// prediction back into the scene's original frame.
Prediction predict_focal(const Scene& scene, const ad::ParamStore& params, const ModelConfig& config,
                         bool record_attention = false);

std::vector<Vec2> current_positions(const std::vector<AgentHistory>& agents);

}  // namespace proin
