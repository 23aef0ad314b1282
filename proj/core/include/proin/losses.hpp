#pragma once

// Training objectives. Trajectory tensors follow the network layout: rows
// k * N + i hold mode k of agent i as [x0, y0, x1, y1, ...]; scores are N x K.

#include "proin/autodiff.hpp"
#include "proin/scene.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace proin {

enum class Stage { kWarmup, kAllocation };

std::string_view stage_name(Stage stage);
// Accepts "warmup"/"1" and "allocation"/"2".
Stage stage_from_name(std::string_view name);

struct LossConfig {
  double epsilon = 0.2;   // score margin
  double eta = 2.0;       // weight of the (1 - s_best)^2 term
  double zeta = 8.0;      // allocation numerator
  double varsigma = 4.0;  // allocation denominator offset
  double alpha = 1.0;     // allocation regression weight
  double beta = 0.2;      // endpoint weight
  Stage stage = Stage::kWarmup;

  void validate() const;
};

// Ground truth aligned with the network rows. Agents whose endpoint is not
// valid have an all-zero mask row and take no part in any loss.
struct Targets {
  ad::Matrix positions;  // N x 2F
  ad::Matrix mask;       // N x 2F, 1 on valid steps
  std::vector<int> agents;
  int future_steps = 0;

  int rows() const { return static_cast<int>(positions.rows()); }
};

// Targets from a scene's futures (normally the focal-frame scene). With
// `only_agent` >= 0 every other agent is excluded.
Targets make_targets(const Scene& scene, int only_agent = -1);

// Plain-value helpers.
int best_mode(std::span<const Vec2> endpoints, const Vec2& truth);
std::vector<double> allocation_weights(std::span<const double> endpoint_errors, const LossConfig& config);

// Best mode per target row (-1 for excluded agents), from values only.
std::vector<int> best_modes(const ad::Matrix& trajectories, int modes, const Targets& targets);

ad::Var cls_loss(const ad::Var& scores, std::span<const int> best, const LossConfig& config);
ad::Var reg_l1(const ad::Var& trajectories, int modes, std::span<const int> best, const Targets& targets);
// N x K allocation weights from trajectory values (zero rows for excluded agents).
ad::Matrix allocation_weight_matrix(const ad::Matrix& trajectories, int modes, const Targets& targets,
                                    const LossConfig& config);
// Allocation weights are computed from values and enter as constants.
ad::Var reg_allocation(const ad::Var& trajectories, int modes, const Targets& targets, const LossConfig& config);
ad::Var reg_allocation(const ad::Var& trajectories, int modes, const Targets& targets, const ad::Matrix& weights);
ad::Var reg_endpoint(const ad::Var& trajectories, int modes, std::span<const int> best, const Targets& targets);

// The value-derived pieces of the loss: best modes and allocation weights.
// Neither carries gradient, so holding them fixed gives the function whose
// derivative backward() computes.
struct Selection {
  std::vector<int> best;
  ad::Matrix weights;  // N x K, empty in the warmup stage
};

struct LossTerms {
  ad::Var total;
  double cls = 0;
  double l1 = 0;
  double allocation = 0;  // zero in the warmup stage
  double endpoint = 0;    // zero in the warmup stage
  std::vector<int> best;
  ad::Matrix weights;  // allocation weights, allocation stage only

  Selection selection() const { return {best, weights}; }
};

// warmup: cls + reg_l1; allocation: cls + reg_l1 + alpha reg_allocation + beta reg_endpoint.
LossTerms total_loss(const ad::Var& trajectories, const ad::Var& scores, int modes, const Targets& targets,
                     const LossConfig& config, const Selection* frozen = nullptr);

}  // namespace proin
