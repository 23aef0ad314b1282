#pragma once

// Model evaluation over a scene set and the topology ablation harness.

#include "proin/metrics.hpp"
#include "proin/net.hpp"
#include "proin/train.hpp"

#include <string>
#include <utility>
#include <vector>

namespace proin {

// Focal-agent predictions in the focal frame, with the matching ground truth.
// Scenes whose focal endpoint is missing are skipped.
struct EvalSet {
  std::vector<Prediction> predictions;
  std::vector<Future> truths;
  std::vector<std::string> scene_ids;
};

EvalSet predict_eval_set(const std::vector<Scene>& scenes, const ad::ParamStore& params, const ModelConfig& model);
EvalReport evaluate_model(const std::vector<Scene>& scenes, const ad::ParamStore& params, const ModelConfig& model);
EvalReport evaluate_constant_velocity(const std::vector<Scene>& scenes, int future_steps);

struct AblationRow {
  std::string name;
  Topology topology;
  EvalReport report;
};

// Trains one model per topology with the same seed and schedule, then
// evaluates each on `eval_scenes`.
std::vector<AblationRow> run_ablation(const std::vector<Scene>& train_scenes, const std::vector<Scene>& eval_scenes,
                                      const std::vector<Topology>& topologies, const ModelConfig& model,
                                      const TrainConfig& train);

std::vector<std::pair<std::string, EvalReport>> table_rows(const std::vector<AblationRow>& rows);

}  // namespace proin
