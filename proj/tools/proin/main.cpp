// proin: generate scenes, train, evaluate, predict, ablate, ensemble and
// export attention. Log verbosity comes from PROIN_LOG_LEVEL
// (trace, debug, info, warn, error, off; default info).

#include "commands.hpp"
#include "run_manifest.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <functional>

#include "CLI11.hpp"

namespace {

using namespace proin::cli;

void add_model_flags(CLI::App* cmd, ModelFlags& f, bool with_topology = true) {
  cmd->add_option("--config", f.config, "JSON config {\"model\": {...}, \"train\": {...}}")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "training seed");
  if (with_topology)
    cmd->add_option("--topology", f.topology, "comma list of m2a_e,a2a,m2a_s,m2a_m, or full / one-stage");
  cmd->add_option("--stage-schedule", f.schedule, "toy, full, or stage:epochs@lr,...");
  cmd->add_option("--dim", f.dim, "feature width for agents, lanes and hidden layers");
  cmd->add_option("--modes", f.modes, "number of predicted modes K");
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("proin");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  if (const char* level = std::getenv("PROIN_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  const std::vector<std::string> args(argv, argv + argc);

  CLI::App app{"Progressive-interaction trajectory prediction on synthetic driving scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  std::function<int()> run;

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic scene file and its manifest");
  g->add_option("--out", gen.out, "scene file (JSON lines)")->required();
  g->add_option("--count", gen.count, "number of scenes")->check(CLI::PositiveNumber);
  g->add_option("--kinds", gen.kinds, "scenario kinds (default all)")->delimiter(',');
  g->add_option("--seed", gen.seed, "base seed; scene i uses seed + i");
  g->add_option("--agents", gen.agents, "agents per scene")->check(CLI::PositiveNumber);
  g->add_option("--noise", gen.noise, "observation noise sigma, meters")->check(CLI::NonNegativeNumber);
  g->callback([&] { run = [&] { return cmd_gen(gen, args); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model; writes the final checkpoint, a CSV log and per-epoch files");
  t->add_option("--scenes", tr.scenes)->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "final checkpoint path")->required();
  t->add_option("--checkpoint", tr.resume, "resume from this checkpoint")->check(CLI::ExistingFile);
  t->add_option("--split", tr.split, "all or train (even seeds)")->check(CLI::IsMember({"all", "train"}));
  add_model_flags(t, tr.model);
  t->callback([&] { run = [&] { return cmd_train(tr, args); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "metrics table for one or more checkpoints");
  e->add_option("--scenes", ev.scenes)->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint,--checkpoints", ev.checkpoints)->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "metrics CSV")->required();
  e->add_option("--split", ev.split, "all or val (odd seeds)")->check(CLI::IsMember({"all", "val"}));
  e->add_flag("--baseline", ev.baseline, "add a constant-velocity row");
  e->callback([&] { run = [&] { return cmd_eval(ev, args); }; });

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "write K trajectories and scores per scene (proin-pred-v1)");
  p->add_option("--scenes", pr.scenes)->required()->check(CLI::ExistingFile);
  p->add_option("--checkpoint", pr.checkpoint)->required()->check(CLI::ExistingFile);
  p->add_option("--out", pr.out)->required();
  p->callback([&] { run = [&] { return cmd_predict(pr, args); }; });

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "train and evaluate one model per topology (even seeds train, odd evaluate)");
  a->add_option("--scenes", ab.scenes)->required()->check(CLI::ExistingFile);
  a->add_option("--out", ab.out, "metrics CSV")->required();
  a->add_option("--topology", ab.topologies, "one row per use, each a comma list (default: the six ablation rows)");
  add_model_flags(a, ab.model, false);
  a->callback([&] { run = [&] { return cmd_ablate(ab, args); }; });

  EnsembleArgs en;
  auto* n = app.add_subcommand("ensemble", "cluster the modes of several checkpoints into K_out modes");
  n->add_option("--scenes", en.scenes)->required()->check(CLI::ExistingFile);
  n->add_option("--checkpoints,--checkpoint", en.checkpoints)->required()->check(CLI::ExistingFile);
  n->add_option("--k-out", en.k_out)->check(CLI::PositiveNumber);
  n->add_option("--out", en.out, "prediction file")->required();
  n->callback([&] { run = [&] { return cmd_ensemble(en, args); }; });

  AttentionArgs at;
  auto* x = app.add_subcommand("export-attention", "attention weights of the focal agent as CSV plus an SVG plot");
  x->add_option("--scenes", at.scenes)->required()->check(CLI::ExistingFile);
  x->add_option("--checkpoint", at.checkpoint)->required()->check(CLI::ExistingFile);
  x->add_option("--out", at.out, "CSV path; the plot goes next to it with an .svg extension")->required();
  x->add_option("--scene-index", at.scene_index);
  x->add_option("--scene-id", at.scene_id);
  x->callback([&] { run = [&] { return cmd_export_attention(at, args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }
  try {
    return run();
  } catch (const std::exception& err) {
    spdlog::error("{}", err.what());
    return 1;
  }
}
