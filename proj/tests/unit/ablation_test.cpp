#include "proin/ablation.hpp"
#include "proin/scene_gen.hpp"

#include <gtest/gtest.h>

namespace proin {
namespace {

struct Tiny {
  ModelConfig model;
  TrainConfig train;
  std::vector<Scene> train_scenes, eval_scenes;

  Tiny() {
    model.d_agent = model.d_map = model.mlp_hidden = 8;
    model.modes = 3;
    train.schedule = parse_schedule("warmup:1@1e-3,allocation:1@1e-3");
    train.batch_size = 4;
    auto scenes = generate_scenes(uniform_plan({ScenarioKind::kStraight, ScenarioKind::kLeftTurn}, 16, 40));
    std::tie(train_scenes, eval_scenes) = split_by_seed_parity(scenes);
  }
};

TEST(Ablation, OneRowPerTopology) {
  const Tiny t;
  const auto rows = run_ablation(t.train_scenes, t.eval_scenes, Topology::ablation_rows(), t.model, t.train);
  ASSERT_EQ(rows.size(), 6u);
  bool full = false;
  for (const auto& r : rows) {
    EXPECT_EQ(r.report.n_scenes, static_cast<int>(t.eval_scenes.size()));
    EXPECT_EQ(r.name.find(','), std::string::npos);
    if (r.topology == Topology::full()) {
      full = true;
      EXPECT_EQ(r.name, "full");
      EXPECT_TRUE(r.topology.m2a_encoder && r.topology.agent_agent && r.topology.m2a_social && r.topology.m2a_modes);
    }
  }
  EXPECT_TRUE(full);
  EXPECT_EQ(metrics_table(table_rows(rows)).substr(0, 4), "name");
}

TEST(Ablation, RepeatedTopologyGivesIdenticalRows) {
  const Tiny t;
  const std::vector<Topology> twice{Topology::one_stage(), Topology::one_stage()};
  const auto rows = table_rows(run_ablation(t.train_scenes, t.eval_scenes, twice, t.model, t.train));
  const std::string table = metrics_table(rows);
  const auto first = table.find('\n');
  const auto second = table.find('\n', first + 1);
  EXPECT_EQ(table.substr(first + 1, second - first), table.substr(second + 1));
}

TEST(EvaluateModel, SkipsScenesWithoutFocalEndpoint) {
  Tiny t;
  t.eval_scenes[0].futures[t.eval_scenes[0].focal_index].validity.back() = 0;
  const EvalReport r = evaluate_constant_velocity(t.eval_scenes, 30);
  EXPECT_EQ(r.n_scenes, static_cast<int>(t.eval_scenes.size()) - 1);
  EXPECT_GT(r.min_fde, 0.0);
}

}  // namespace
}  // namespace proin
