#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace proin::cli {

// Model/train settings shared by the commands that build a model.
struct ModelFlags {
  std::string config;  // JSON file, optional
  std::optional<std::uint64_t> seed;
  std::optional<std::string> topology;
  std::optional<std::string> schedule;
  std::optional<int> dim;    // sets d_agent, d_map and mlp_hidden together
  std::optional<int> modes;  // K
};

struct GenArgs {
  std::string out;
  int count = 2000;
  std::vector<std::string> kinds;
  std::uint64_t seed = 0;
  int agents = 4;
  double noise = 0.0;
};

struct TrainArgs {
  std::string scenes, out, resume;
  std::string split = "all";  // all | train (even seeds)
  ModelFlags model;
};

struct EvalArgs {
  std::string scenes, out;
  std::vector<std::string> checkpoints;
  std::string split = "all";  // all | val (odd seeds)
  bool baseline = false;
};

struct PredictArgs {
  std::string scenes, checkpoint, out;
};

struct AblateArgs {
  std::string scenes, out;
  std::vector<std::string> topologies;
  ModelFlags model;
};

struct EnsembleArgs {
  std::string scenes, out;
  std::vector<std::string> checkpoints;
  int k_out = 6;
};

struct AttentionArgs {
  std::string scenes, checkpoint, out, scene_id;
  int scene_index = 0;
};

// Each returns the process exit code and writes `<out>.run.json`.
int cmd_gen(const GenArgs& args, const std::vector<std::string>& argv);
int cmd_train(const TrainArgs& args, const std::vector<std::string>& argv);
int cmd_eval(const EvalArgs& args, const std::vector<std::string>& argv);
int cmd_predict(const PredictArgs& args, const std::vector<std::string>& argv);
int cmd_ablate(const AblateArgs& args, const std::vector<std::string>& argv);
int cmd_ensemble(const EnsembleArgs& args, const std::vector<std::string>& argv);
int cmd_export_attention(const AttentionArgs& args, const std::vector<std::string>& argv);

}  // namespace proin::cli
