#include "proin/ablation.hpp"

namespace proin {

namespace {

template <typename Predict>
EvalSet collect(const std::vector<Scene>& scenes, Predict&& predict) {
  EvalSet set;
  for (const Scene& raw : scenes) {
    if (raw.futures.empty() || !raw.futures[raw.focal_index].endpoint_valid()) continue;
    const Scene s = to_focal_frame(raw).scene;
    set.predictions.push_back(predict(s));
    set.truths.push_back(s.futures[s.focal_index]);
    set.scene_ids.push_back(s.id);
  }
  return set;
}

}  // namespace

EvalSet predict_eval_set(const std::vector<Scene>& scenes, const ad::ParamStore& params, const ModelConfig& model) {
  return collect(scenes, [&](const Scene& s) {
    ad::Tape t;
    return forward(t, s, params, model).prediction(s.focal_index);
  });
}

EvalReport evaluate_model(const std::vector<Scene>& scenes, const ad::ParamStore& params, const ModelConfig& model) {
  const EvalSet set = predict_eval_set(scenes, params, model);
  return evaluate(set.predictions, set.truths);
}

EvalReport evaluate_constant_velocity(const std::vector<Scene>& scenes, int future_steps) {
  const EvalSet set =
      collect(scenes, [&](const Scene& s) { return constant_velocity(s.agents[s.focal_index], future_steps); });
  return evaluate(set.predictions, set.truths);
}

std::vector<AblationRow> run_ablation(const std::vector<Scene>& train_scenes, const std::vector<Scene>& eval_scenes,
                                      const std::vector<Topology>& topologies, const ModelConfig& model,
                                      const TrainConfig& config) {
  std::vector<AblationRow> rows;
  for (const Topology& topology : topologies) {
    ModelConfig m = model;
    m.topology = topology;
    const TrainResult r = train(train_scenes, m, config);
    if (r.diverged) throw std::runtime_error("ablation '" + topology.name() + "' diverged: " + r.message);
    rows.push_back({topology.name(), topology, evaluate_model(eval_scenes, r.checkpoint.params, m)});
  }
  return rows;
}

std::vector<std::pair<std::string, EvalReport>> table_rows(const std::vector<AblationRow>& rows) {
  std::vector<std::pair<std::string, EvalReport>> out;
  for (const auto& r : rows) out.emplace_back(r.name, r.report);
  return out;
}

}  // namespace proin
