#pragma once

// Displacement metrics, per-branch diagnostics, the metrics table format and
// endpoint clustering for self-ensembles.

#include "proin/net.hpp"
#include "proin/scene.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace proin {

inline constexpr double kMissThreshold = 2.0;  // meters

struct BranchStats {
  double fde_when_best = 0;  // mean FDE over scenes where the branch is best, 0 without hits
  double hit_rate = 0;
  int hits = 0;
  int branch = 0;  // model-order index, kept when the list is re-sorted
};

struct EvalReport {
  double min_ade = 0;
  double min_fde = 0;
  double brier_min_fde = 0;
  double miss_rate = 0;
  std::vector<BranchStats> per_branch;
  int n_scenes = 0;
};

struct SceneScore {
  double min_ade = 0;
  double min_fde = 0;
  double brier_min_fde = 0;
  int best = 0;  // minimal endpoint error, ties to the lowest index
  bool miss = false;
  std::vector<double> fde;  // per mode
};

// ADE averages over valid future steps. Throws std::invalid_argument when the
// endpoint is missing or shapes disagree.
SceneScore score_prediction(const Prediction& prediction, const Future& truth);

// Scene averages. Throws std::invalid_argument when K differs across scenes.
EvalReport evaluate(std::span<const Prediction> predictions, std::span<const Future> truths);

// Branches ordered by fde_when_best (branches without hits last).
std::vector<BranchStats> sorted_by_fde(const EvalReport& report);

// name,minADE,minFDE,brier_minFDE,MR,hit_1..hit_K,fde_1..fde_K
std::string metrics_table(std::span<const std::pair<std::string, EvalReport>> rows);
// Same columns with branches in sorted_by_fde order.
std::string sorted_metrics_table(std::span<const std::pair<std::string, EvalReport>> rows);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Single-mode extrapolation of the last velocity over `future_steps`.
Prediction constant_velocity(const AgentHistory& agent, int future_steps);

// k-means over the endpoints of all member modes (50 iterations). The first
// center is the highest-scoring endpoint, then farthest points. Cluster
// trajectories are score-weighted member means and cluster scores are summed
// member scores, renormalized. Clusters come out in order of their first
// member (member-major, mode-minor). When fewer than k_out distinct endpoints
// exist, the missing slots take the highest-scoring members with zero score.
inline constexpr int kEnsembleIterations = 50;
Prediction ensemble_cluster(std::span<const Prediction> members, int k_out);

}  // namespace proin
