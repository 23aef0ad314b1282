#include "commands.hpp"

#include "plot.hpp"
#include "run_manifest.hpp"

#include "proin/ablation.hpp"
#include "proin/metrics.hpp"
#include "proin/scene_gen.hpp"
#include "proin/scene_io.hpp"
#include "proin/train.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace proin::cli {

namespace {

using nlohmann::ordered_json;

constexpr const char* kPredictionVersion = "proin-pred-v1";

void resolve_model(const ModelFlags& f, ModelConfig& model, TrainConfig& train) {
  if (!f.config.empty()) load_config_file(f.config, model, train);
  if (f.seed) train.seed = *f.seed;
  if (f.topology) model.topology = Topology::parse(*f.topology);
  if (f.schedule) train.schedule = parse_schedule(*f.schedule);
  if (f.dim) model.d_agent = model.d_map = model.mlp_hidden = *f.dim;
  if (f.modes) model.modes = *f.modes;
  model.validate();
  train.validate();
}

std::vector<Scene> load_split(const std::string& path, const std::string& split) {
  std::vector<Scene> scenes = read_scenes(path);
  if (split == "all") return scenes;
  auto [even, odd] = split_by_seed_parity(scenes);
  if (split == "train") return even;
  if (split == "val") return odd;
  throw std::invalid_argument("unknown split '" + split + "' (expected all, train or val)");
}

void check_horizon(const std::vector<Scene>& scenes, const ModelConfig& m, const std::string& path) {
  for (const Scene& s : scenes)
    if (s.history_steps() != m.history_steps || (s.horizon && s.horizon != m.future_steps))
      throw std::invalid_argument(path + ": scene '" + s.id + "' has T=" + std::to_string(s.history_steps()) +
                                  ", F=" + std::to_string(s.horizon) + " but the model expects T=" +
                                  std::to_string(m.history_steps) + ", F=" + std::to_string(m.future_steps));
}

ordered_json prediction_json(const std::string& scene_id, const Prediction& p) {
  ordered_json modes = ordered_json::array();
  for (int k = 0; k < p.modes(); ++k) {
    ordered_json pts = ordered_json::array();
    for (Eigen::Index t = 0; t < p.trajectories[k].rows(); ++t)
      pts.push_back({p.trajectories[k](t, 0), p.trajectories[k](t, 1)});
    modes.push_back({{"score", p.scores[k]}, {"positions", std::move(pts)}});
  }
  return {{"version", kPredictionVersion}, {"scene_id", scene_id}, {"modes", std::move(modes)}};
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

std::string checkpoint_label(const std::string& path) { return std::filesystem::path(path).stem().string(); }

}  // namespace

int cmd_gen(const GenArgs& a, const std::vector<std::string>& argv) {
  const Stopwatch clock;
  std::vector<ScenarioKind> kinds;
  for (const auto& k : a.kinds) kinds.push_back(kind_from_name(k));
  if (kinds.empty())
    kinds = {ScenarioKind::kStraight, ScenarioKind::kLeftTurn, ScenarioKind::kRightTurn,
             ScenarioKind::kLaneChangeBlocked, ScenarioKind::kYieldCrossing};
  ScenarioSpec base;
  base.n_agents = a.agents;
  base.noise_sigma = a.noise;
  base.validate();
  const DatasetManifest m = generate_dataset(uniform_plan(kinds, a.count, a.seed, base), a.out);
  spdlog::info("wrote {} scenes to {}", m.seeds.size(), a.out);
  std::string plan;
  for (const auto& k : kinds) plan += std::string(kind_name(k)) + ",";
  plan += std::to_string(a.count) + "," + std::to_string(a.agents) + "," + std::to_string(a.noise);
  write_run_manifest({"gen", argv, fnv1a_hex(plan), a.seed, {}, {a.out, manifest_path_for(a.out).string()},
                      clock.seconds()},
                     a.out);
  return 0;
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  const Stopwatch clock;
  const std::vector<Scene> scenes = load_split(a.scenes, a.split);
  Checkpoint start;
  if (!a.resume.empty()) {
    start = load_checkpoint(a.resume);
    spdlog::info("resuming {} at epoch {}", a.resume, start.progress.epoch);
  } else {
    ModelConfig model;
    TrainConfig train;
    resolve_model(a.model, model, train);
    start = initial_checkpoint(model, train);
  }
  check_horizon(scenes, start.model, a.scenes);
  const std::string epochs_dir = a.out + ".epochs";
  const std::string log_path = a.out + ".log.csv";
  TrainOptions options;
  options.checkpoint_dir = epochs_dir;
  options.log_path = log_path;
  options.on_epoch = [](const EpochLog& e) {
    spdlog::info("epoch {} {} loss {:.6f} lr {}", e.epoch, stage_name(e.stage), e.mean_loss, e.learning_rate);
  };
  spdlog::info("training on {} scenes ({} split), {} parameters", scenes.size(), a.split,
               start.params.scalar_count());
  const TrainResult r = train(scenes, start, options);
  save_checkpoint(r.checkpoint, a.out);
  write_run_manifest({"train", argv, fnv1a_hex(config_to_json(r.checkpoint.model, r.checkpoint.train)),
                      r.checkpoint.train.seed, {a.scenes}, {a.out, log_path, epochs_dir}, clock.seconds()},
                     a.out);
  if (r.diverged) {
    spdlog::error("training diverged: {}; wrote last good state to {}", r.message, a.out);
    return 2;
  }
  return 0;
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  const Stopwatch clock;
  const std::vector<Scene> scenes = load_split(a.scenes, a.split);
  std::vector<std::pair<std::string, EvalReport>> rows;
  std::string configs;
  std::uint64_t seed = 0;
  for (const auto& path : a.checkpoints) {
    const Checkpoint c = load_checkpoint(path);
    check_horizon(scenes, c.model, a.scenes);
    rows.emplace_back(checkpoint_label(path), evaluate_model(scenes, c.params, c.model));
    configs += config_to_json(c.model, c.train);
    seed = c.train.seed;
    spdlog::info("{}: minADE {:.4f} minFDE {:.4f} MR {:.4f} over {} scenes", rows.back().first,
                 rows.back().second.min_ade, rows.back().second.min_fde, rows.back().second.miss_rate,
                 rows.back().second.n_scenes);
  }
  if (a.baseline) {
    const int f = scenes.empty() ? 0 : scenes.front().horizon;
    rows.emplace_back("constant_velocity", evaluate_constant_velocity(scenes, f));
  }
  if (rows.empty()) throw std::invalid_argument("eval: pass --checkpoint and/or --baseline");
  write_text_file(a.out, metrics_table(rows));
  const std::string sorted = a.out + ".sorted.csv";
  write_text_file(sorted, sorted_metrics_table(rows));
  std::vector<std::string> inputs{a.scenes};
  inputs.insert(inputs.end(), a.checkpoints.begin(), a.checkpoints.end());
  write_run_manifest({"eval", argv, fnv1a_hex(configs), seed, inputs, {a.out, sorted}, clock.seconds()}, a.out);
  return 0;
}

int cmd_predict(const PredictArgs& a, const std::vector<std::string>& argv) {
  const Stopwatch clock;
  const Checkpoint c = load_checkpoint(a.checkpoint);
  const std::vector<Scene> scenes = read_scenes(a.scenes);
  check_horizon(scenes, c.model, a.scenes);
  std::ofstream out = open_out(a.out);
  for (const Scene& s : scenes) out << prediction_json(s.id, predict_focal(s, c.params, c.model)).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing '" + a.out + "'");
  spdlog::info("wrote {} predictions to {}", scenes.size(), a.out);
  write_run_manifest({"predict", argv, fnv1a_hex(config_to_json(c.model, c.train)), c.train.seed,
                      {a.scenes, a.checkpoint}, {a.out}, clock.seconds()},
                     a.out);
  return 0;
}

int cmd_ablate(const AblateArgs& a, const std::vector<std::string>& argv) {
  const Stopwatch clock;
  ModelConfig model;
  TrainConfig train;
  resolve_model(a.model, model, train);
  std::vector<Topology> topologies;
  for (const auto& t : a.topologies) topologies.push_back(Topology::parse(t));
  if (topologies.empty()) topologies = Topology::ablation_rows();
  const auto [train_scenes, eval_scenes] = split_by_seed_parity(read_scenes(a.scenes));
  check_horizon(train_scenes, model, a.scenes);
  spdlog::info("ablation over {} topologies: {} train / {} eval scenes", topologies.size(), train_scenes.size(),
               eval_scenes.size());
  const auto rows = run_ablation(train_scenes, eval_scenes, topologies, model, train);
  write_text_file(a.out, metrics_table(table_rows(rows)));
  const std::string sorted = a.out + ".sorted.csv";
  write_text_file(sorted, sorted_metrics_table(table_rows(rows)));
  write_run_manifest({"ablate", argv, fnv1a_hex(config_to_json(model, train)), train.seed, {a.scenes},
                      {a.out, sorted}, clock.seconds()},
                     a.out);
  return 0;
}

int cmd_ensemble(const EnsembleArgs& a, const std::vector<std::string>& argv) {
  const Stopwatch clock;
  if (a.checkpoints.empty()) throw std::invalid_argument("ensemble: pass at least one --checkpoint");
  std::vector<Checkpoint> members;
  std::string configs;
  for (const auto& p : a.checkpoints) {
    members.push_back(load_checkpoint(p));
    configs += config_to_json(members.back().model, members.back().train);
  }
  const std::vector<Scene> scenes = read_scenes(a.scenes);
  for (const auto& m : members) check_horizon(scenes, m.model, a.scenes);

  std::ofstream out = open_out(a.out);
  std::vector<std::vector<Prediction>> per_member(members.size());
  std::vector<Prediction> fused;
  std::vector<Future> truths;
  for (const Scene& s : scenes) {
    std::vector<Prediction> preds;
    for (const auto& m : members) preds.push_back(predict_focal(s, m.params, m.model));
    const Prediction e = ensemble_cluster(preds, a.k_out);
    out << prediction_json(s.id, e).dump() << '\n';
    if (s.has_futures() && s.futures[s.focal_index].endpoint_valid()) {
      for (std::size_t i = 0; i < preds.size(); ++i) per_member[i].push_back(preds[i]);
      fused.push_back(e);
      truths.push_back(s.futures[s.focal_index]);
    }
  }
  if (!out) throw std::runtime_error("failed writing '" + a.out + "'");
  std::vector<std::string> outputs{a.out};
  if (!truths.empty()) {
    std::vector<std::pair<std::string, EvalReport>> rows;
    for (std::size_t i = 0; i < members.size(); ++i)
      rows.emplace_back(checkpoint_label(a.checkpoints[i]), evaluate(per_member[i], truths));
    rows.emplace_back("ensemble", evaluate(fused, truths));
    const std::string metrics = a.out + ".metrics.csv";
    write_text_file(metrics, metrics_table(rows));
    outputs.push_back(metrics);
    spdlog::info("ensemble minFDE {:.4f} over {} scenes", rows.back().second.min_fde, truths.size());
  }
  std::vector<std::string> inputs{a.scenes};
  inputs.insert(inputs.end(), a.checkpoints.begin(), a.checkpoints.end());
  write_run_manifest({"ensemble", argv, fnv1a_hex(configs + std::to_string(a.k_out)), members.front().train.seed,
                      inputs, outputs, clock.seconds()},
                     a.out);
  return 0;
}

int cmd_export_attention(const AttentionArgs& a, const std::vector<std::string>& argv) {
  const Stopwatch clock;
  const Checkpoint c = load_checkpoint(a.checkpoint);
  const std::vector<Scene> scenes = read_scenes(a.scenes);
  const Scene* chosen = nullptr;
  if (!a.scene_id.empty()) {
    for (const Scene& s : scenes)
      if (s.id == a.scene_id) chosen = &s;
    if (!chosen) throw std::invalid_argument("no scene with id '" + a.scene_id + "' in " + a.scenes);
  } else {
    if (a.scene_index < 0 || a.scene_index >= static_cast<int>(scenes.size()))
      throw std::invalid_argument("scene index " + std::to_string(a.scene_index) + " out of range for " +
                                  std::to_string(scenes.size()) + " scenes");
    chosen = &scenes[a.scene_index];
  }
  check_horizon({*chosen}, c.model, a.scenes);
  const Scene focal = to_focal_frame(*chosen).scene;
  ad::Tape tape;
  const Prediction p = forward(tape, focal, c.params, c.model, true).prediction(focal.focal_index);

  std::string csv = "scene_id,stage,mode,node,weight\n";
  char line[160];
  for (const auto& r : p.attention) {
    std::snprintf(line, sizeof line, ",%s,%d,%d,%.9g\n", r.stage.c_str(), r.mode, r.node, r.weight);
    csv += focal.id + line;
  }
  write_text_file(a.out, csv);
  const std::string svg = std::filesystem::path(a.out).replace_extension(".svg").string();
  write_text_file(svg, attention_svg(focal, p));
  spdlog::info("wrote {} attention records to {} and plot to {}", p.attention.size(), a.out, svg);
  write_run_manifest({"export-attention", argv, fnv1a_hex(config_to_json(c.model, c.train)), c.train.seed,
                      {a.scenes, a.checkpoint}, {a.out, svg}, clock.seconds()},
                     a.out);
  return 0;
}

}  // namespace proin::cli
