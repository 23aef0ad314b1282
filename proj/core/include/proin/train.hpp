#pragma once

// Two-stage training: scene augmentation, Adam with global-norm clipping,
// seeded shuffling, per-epoch checkpoints and a CSV loss log.

#include "proin/autodiff.hpp"
#include "proin/losses.hpp"
#include "proin/net.hpp"
#include "proin/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace proin {

struct StagePhase {
  Stage stage = Stage::kWarmup;
  int epochs = 0;
  double learning_rate = 1e-3;

  friend bool operator==(const StagePhase&, const StagePhase&) = default;
};

// Desk-scale default: warmup 8 @ 1e-3 then 1 @ 1e-4, allocation 12 @ 1e-3 then 3 @ 1e-4.
std::vector<StagePhase> toy_schedule();
// Full-scale schedule: warmup 32 @ 1e-3, 2 @ 1e-4; allocation 46 @ 1e-3, 10 @ 1e-4.
std::vector<StagePhase> full_schedule();
// "warmup:8@1e-3,warmup:1@1e-4,allocation:12@1e-3", or "toy" / "full".
std::vector<StagePhase> parse_schedule(std::string_view text);
std::string format_schedule(const std::vector<StagePhase>& schedule);

struct TrainConfig {
  std::vector<StagePhase> schedule = toy_schedule();
  int batch_size = 32;
  std::uint64_t seed = 0;
  double flip_prob = 0.3;
  double mask_prob = 0.3;
  double mask_fraction = 0.3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double clip_norm = 10.0;
  LossConfig loss;

  void validate() const;
};

// ---- augmentation -------------------------------------------------------------

// Negates every y coordinate (positions, displacements, velocities, futures,
// lane centers and deltas).
Scene flip_y(const Scene& scene);
// Marks history steps 1..floor(fraction * T) as invalid with zero displacement.
Scene mask_history(const Scene& scene, double fraction);
// Draws the flip decision, then the mask decision, from `rng`.
Scene augment(const Scene& scene, std::mt19937_64& rng, const TrainConfig& config);

// ---- optimizer ------------------------------------------------------------------

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, ad::Matrix> m;
  std::map<std::string, ad::Matrix> v;
};

// One bias-corrected Adam update from the gradients in `params`.
void adam_step(ad::ParamStore& params, AdamState& state, double learning_rate, const TrainConfig& config);

// Rescales gradients to the given global norm when above it; returns the
// norm before clipping.
double clip_gradients(ad::ParamStore& params, double max_norm);

// ---- checkpoints ----------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainProgress {
  int phase = 0;        // index into the schedule of the next epoch to run
  int phase_epoch = 0;  // epochs already done within that phase
  int epoch = 0;        // epochs done overall
  friend bool operator==(const TrainProgress&, const TrainProgress&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig model;
  TrainConfig train;
  ad::ParamStore params;
  AdamState adam;
  TrainProgress progress;
  std::string rng_state;  // textual engine state
};

// Format: see docs/checkpoint-format.md. Errors carry the path.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Same bytes that save_checkpoint writes.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& where = "checkpoint");

// ---- training ---------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;  // 1-based over the whole schedule
  Stage stage = Stage::kWarmup;
  double mean_loss = 0;
  double learning_rate = 0;
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // per-epoch files when set
  std::filesystem::path log_path;        // CSV log when set
  int max_epochs = -1;                   // stop after this many epochs in this call (-1: all)
  bool verbose = false;
  std::function<void(const EpochLog&)> on_epoch;  // called after each epoch's checkpoint is written
};

struct TrainResult {
  Checkpoint checkpoint;  // last good state
  std::vector<EpochLog> log;
  bool diverged = false;
  std::string message;
};

// Fresh run from init_params(model, train.seed).
Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& train);

// Scenes are normalized to the focal frame internally. Scenes without any
// valid future endpoint are skipped. Throws std::invalid_argument on an empty
// dataset. A non-finite loss stops training and returns the state at the end
// of the last completed epoch with diverged = true.
TrainResult train(const std::vector<Scene>& dataset, Checkpoint start, const TrainOptions& options = {});
TrainResult train(const std::vector<Scene>& dataset, const ModelConfig& model, const TrainConfig& config,
                  const TrainOptions& options = {});

std::string training_log_csv(const std::vector<EpochLog>& log);

// Loss of one focal-frame scene under the given stage, no augmentation.
double scene_loss(const Scene& focal_scene, const ad::ParamStore& params, const ModelConfig& model,
                  const LossConfig& loss);

// ---- config files ------------------------------------------------------------------

// JSON object {"model": {...}, "train": {...}}; missing keys keep defaults.
void load_config_file(const std::filesystem::path& path, ModelConfig& model, TrainConfig& train);
std::string config_to_json(const ModelConfig& model, const TrainConfig& train);
void config_from_json(const std::string& text, ModelConfig& model, TrainConfig& train);

}  // namespace proin
