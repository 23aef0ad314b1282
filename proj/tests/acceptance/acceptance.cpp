// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails. Pass criterion numbers as arguments to run a subset.

#include "proin/ablation.hpp"
#include "proin/losses.hpp"
#include "proin/metrics.hpp"
#include "proin/net.hpp"
#include "proin/scene_gen.hpp"
#include "proin/train.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "eval_oracle.hpp"

namespace {

using namespace proin;
using ad::Matrix;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

const std::vector<ScenarioKind> kAllKinds{ScenarioKind::kStraight, ScenarioKind::kLeftTurn, ScenarioKind::kRightTurn,
                                          ScenarioKind::kLaneChangeBlocked, ScenarioKind::kYieldCrossing};

// ---- 1. gradient check --------------------------------------------------------

// 20 lane nodes: a 10-node trunk splitting into a straight and a left branch,
// three agents on curved paths.
Scene gradient_scene() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> jitter(0, 0.05);
  std::vector<LaneSegment> lanes;
  std::vector<std::pair<int, int>> succ;
  for (int i = 0; i < 10; ++i) lanes.push_back(LaneSegment::from_endpoints({-12.0 + 2 * i, 0}, {-10.0 + 2 * i, 0}));
  for (int i = 0; i < 5; ++i)
    lanes.push_back(LaneSegment::from_endpoints({8.0 + 2 * i, 0}, {10.0 + 2 * i, 0}, {0, 0, 0, 1}));
  for (int i = 0; i < 5; ++i) {
    const double a0 = i * 0.3, a1 = (i + 1) * 0.3, r = 8;
    lanes.push_back(LaneSegment::from_endpoints({8 + r * std::sin(a0), r - r * std::cos(a0)},
                                                {8 + r * std::sin(a1), r - r * std::cos(a1)}, {1, 0, 1, 0}));
  }
  for (int i = 0; i < 9; ++i) succ.emplace_back(i, i + 1);
  succ.emplace_back(9, 10);
  succ.emplace_back(9, 15);
  for (int i = 10; i < 14; ++i) succ.emplace_back(i, i + 1);
  for (int i = 15; i < 19; ++i) succ.emplace_back(i, i + 1);

  Scene s;
  s.id = "gradcheck";
  s.horizon = 30;
  s.lane_graph = build_lane_graph(lanes, succ);
  const Vec2 starts[] = {{-14, 0.2}, {-20, -0.3}, {-4, 3}};
  const Vec2 vels[] = {{0.7, 0.0}, {0.9, 0.02}, {0.5, -0.1}};
  const double curls[] = {0.01, -0.004, 0.02};
  for (int a = 0; a < 3; ++a) {
    Points all(50, 2);
    Vec2 p = starts[a], v = vels[a];
    for (int t = 0; t < 50; ++t) {
      all.row(t) = (p + Vec2(jitter(rng), jitter(rng))).transpose();
      v = Eigen::Rotation2Dd(curls[a]) * v;
      p += v;
    }
    s.agents.push_back(preprocess_history(all.topRows(20), std::vector<std::uint8_t>(20, 1)));
    Future f;
    f.positions = all.bottomRows(30);
    f.validity.assign(30, 1);
    s.futures.push_back(f);
  }
  return to_focal_frame(s).scene;
}

// Central differences at h = 1e-5, one forward per probe shared by both
// stages. The loss is ~10, so one ulp of it divided by 2h is ~1e-10: entries
// of the attention-logit layers (~1e-8) sit at that floor, and larger steps
// start crossing ReLU kinks. Each entry's error is therefore taken relative
// to max(|a|, |n|, 1e-5 * largest gradient of that stage).
Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr double kStep = 1e-5;
  constexpr double kScaleFloor = 1e-5;
  ModelConfig m;
  m.d_agent = m.d_map = m.mlp_hidden = 16;
  m.modes = 3;
  const Scene s = gradient_scene();
  const Targets targets = make_targets(s);
  const Stage stages[2] = {Stage::kWarmup, Stage::kAllocation};
  LossConfig loss[2];
  ad::ParamStore grads[2];
  Selection frozen[2];
  double scale[2] = {0, 0};
  ad::ParamStore params = init_params(m, 3);
  for (int k = 0; k < 2; ++k) {
    loss[k].stage = stages[k];
    grads[k] = params;
    ad::Tape t;
    const ForwardOutput out = forward(t, s, grads[k], m);
    const LossTerms terms = total_loss(out.trajectories, out.scores, m.modes, targets, loss[k]);
    frozen[k] = terms.selection();
    t.backward(terms.total);
    grads[k].zero_grad();
    t.accumulate_param_grads(grads[k]);
    for (const std::string& path : grads[k].paths())
      scale[k] = std::max(scale[k], grads[k].grad(path).cwiseAbs().maxCoeff());
  }

  auto losses = [&](double out[2]) {
    ad::Tape t;
    const ForwardOutput f = forward(t, s, params, m);
    for (int k = 0; k < 2; ++k)
      out[k] = total_loss(f.trajectories, f.scores, m.modes, targets, loss[k], &frozen[k]).total.value()(0, 0);
  };

  double worst = 0, worst_plain = 0;
  std::size_t entries = 0, tensors = 0;
  std::string worst_path;
  for (const std::string& path : params.paths()) {
    Matrix& v = params.value(path);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double x = v.data()[i];
      double up[2], down[2];
      v.data()[i] = x + kStep;
      losses(up);
      v.data()[i] = x - kStep;
      losses(down);
      v.data()[i] = x;
      for (int k = 0; k < 2; ++k) {
        const double n = (up[k] - down[k]) / (2 * kStep);
        const double a = grads[k].grad(path).data()[i];
        const double diff = std::abs(a - n);
        const double big = std::max(std::abs(a), std::abs(n));
        const double err = diff / std::max(big, kScaleFloor * scale[k]);
        if (big > 1e-3 * scale[k]) worst_plain = std::max(worst_plain, diff / big);
        if (err > worst) {
          worst = err;
          worst_path = fmt("%s:%s[%ld]", std::string(stage_name(stages[k])).c_str(), path.c_str(), static_cast<long>(i));
        }
      }
      ++entries;
    }
    ++tensors;
  }
  const double elapsed = seconds_since(t0);
  return {worst < 1e-4 && elapsed < 120,
          fmt("max relative error %.2e (%s; floor %.1e/%.1e), %.2e on entries above 1e-3 of scale, "
              "%zu tensors / %zu entries, both stages, %.1f s",
              worst, worst_path.c_str(), kScaleFloor * scale[0], kScaleFloor * scale[1], worst_plain, tensors,
              entries, elapsed)};
}

// ---- 2. loss oracles ----------------------------------------------------------

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

Targets targets_from(const Matrix& positions) {
  Targets t;
  t.positions = positions;
  t.mask = Matrix::Ones(positions.rows(), positions.cols());
  t.future_steps = static_cast<int>(positions.cols() / 2);
  for (int i = 0; i < positions.rows(); ++i) t.agents.push_back(i);
  return t;
}

Outcome criterion_loss_oracles() {
  const LossConfig c;
  ad::Tape t;
  const std::vector<int> first{0};
  std::vector<std::pair<std::string, double>> errors;
  auto check = [&](const std::string& name, double got, double want) { errors.emplace_back(name, std::abs(got - want)); };
  auto val = [](const ad::Var& v) { return v.value()(0, 0); };

  check("cls [0.8,0.3]", val(cls_loss(t.constant(row({0.8, 0.3})), first, c)), 0.08);
  check("cls [0.5,0.5]", val(cls_loss(t.constant(row({0.5, 0.5})), first, c)), 0.6);
  check("cls confident", val(cls_loss(t.constant(row({1.0, 0.8})), first, c)), 0.0);
  check("l1 exact", val(reg_l1(t.constant(row({1, 2})), 1, first, targets_from(row({1, 2})))), 0.0);
  check("l1 0.5", val(reg_l1(t.constant(row({0.5, 0})), 1, first, targets_from(row({0, 0})))), 0.125);
  check("l1 two steps", val(reg_l1(t.constant(row({2, 0, 0, 0})), 1, first, targets_from(row({0, 0, 0, 0})))), 0.75);
  const std::vector<double> e02{0.0, 2.0}, efar{0.0, 1e6}, eq{1.0, 1.0, 1.0};
  const auto w = allocation_weights(e02, c);
  check("w[0] {0,2}", w[0], std::exp(2.0) / (std::exp(2.0) + std::exp(1.0)));
  check("w[1] {0,2}", w[1], std::exp(1.0) / (std::exp(2.0) + std::exp(1.0)));
  const double f_far = 8.0 / (4.0 + 1e12);
  const auto wf = allocation_weights(efar, c);
  check("w[0] {0,1e6}", wf[0], std::exp(2.0) / (std::exp(2.0) + std::exp(f_far)));
  for (double x : allocation_weights(eq, c)) check("w uniform", x, 1.0 / 3.0);
  const Matrix single = row({0.3, -0.2, 2.5, 1});
  const Targets tg = targets_from(row({0, 0, 1, 1}));
  check("alloc K=1", val(reg_allocation(t.constant(single), 1, tg, c)), val(reg_l1(t.constant(single), 1, first, tg)));
  Matrix same(3, 4);
  for (int k = 0; k < 3; ++k) same.row(k) = single;
  check("alloc identical", val(reg_allocation(t.constant(same), 3, tg, c)),
        val(reg_l1(t.constant(single), 1, first, tg)) / 3);
  Matrix onehot = Matrix::Zero(1, 3);
  onehot(0, 0) = 1;
  Matrix spread = same;
  spread.row(1).array() += 3;
  spread.row(2).array() -= 2;
  check("alloc one-hot", val(reg_allocation(t.constant(spread), 3, tg, onehot)),
        val(reg_l1(t.constant(single), 1, first, tg)) / 3);
  check("endpoint (3,4)", val(reg_endpoint(t.constant(row({9, 9, 3, 4})), 1, first, targets_from(row({0, 0, 0, 0})))),
        25.0);
  Matrix ends(2, 2);
  ends << 1, 0, 0, 2;
  const std::vector<int> both{0, 0};
  check("endpoint N=2", val(reg_endpoint(t.constant(ends), 1, both, targets_from(Matrix::Zero(2, 2)))), 2.5);

  double worst = 0;
  std::string worst_name;
  for (const auto& [name, err] : errors)
    if (err >= worst) {
      worst = err;
      worst_name = name;
    }
  const bool reference_w = std::abs(w[0] - 0.7311) < 5e-5 && std::abs(w[1] - 0.2689) < 5e-5 &&
                       std::abs(wf[0] - 0.8808) < 5e-5;
  return {worst < 1e-9 && reference_w,
          fmt("%zu examples, max abs error %.1e (%s); w{0,2} = [%.4f, %.4f]", errors.size(), worst,
              worst_name.c_str(), w[0], w[1])};
}

// ---- 3. metric oracle ---------------------------------------------------------

Outcome criterion_metric_oracle() {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> k_dist(1, 6), f_dist(1, 10), n_dist(1, 10);
  std::normal_distribution<double> pos(0, 3);
  std::bernoulli_distribution drop(0.2);
  int mismatches = 0, exact_threshold_ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = k_dist(rng), f = f_dist(rng), n = n_dist(rng);
    std::vector<Prediction> preds;
    std::vector<Future> truths;
    for (int s = 0; s < n; ++s) {
      Future gt;
      gt.positions.resize(f, 2);
      for (Eigen::Index i = 0; i < gt.positions.size(); ++i) gt.positions.data()[i] = pos(rng);
      for (int t = 0; t < f; ++t) gt.validity.push_back(t == f - 1 || !drop(rng));
      Prediction p;
      double total = 0;
      for (int m = 0; m < k; ++m) {
        Points traj = gt.positions;
        for (Eigen::Index i = 0; i < traj.size(); ++i) traj.data()[i] += pos(rng) * 0.6;
        p.trajectories.push_back(traj);
        p.scores.push_back(std::uniform_real_distribution<double>(0.01, 1)(rng));
        total += p.scores.back();
      }
      for (double& x : p.scores) x /= total;
      preds.push_back(p);
      truths.push_back(gt);
    }
    const EvalReport r = evaluate(preds, truths);
    const auto o = testing::oracle_evaluate(preds, truths);
    bool same = r.min_ade == o.min_ade && r.min_fde == o.min_fde && r.brier_min_fde == o.brier &&
                r.miss_rate == o.mr && r.per_branch.size() == o.hit_rate.size();
    for (std::size_t m = 0; same && m < o.hit_rate.size(); ++m)
      same = r.per_branch[m].hit_rate == o.hit_rate[m] && r.per_branch[m].fde_when_best == o.fde_when_best[m];
    if (!same) ++mismatches;
  }
  // The threshold itself: a 2 m miss is not a miss, 2 m plus a hair is.
  for (double d : {2.0, 2.0 + 1e-9}) {
    Future gt;
    gt.positions = Points::Zero(1, 2);
    gt.validity = {1};
    Prediction p;
    p.trajectories = {Points(1, 2)};
    p.trajectories[0] << d, 0;
    p.scores = {1.0};
    if (score_prediction(p, gt).miss == (d > 2.0)) ++exact_threshold_ok;
  }
  return {mismatches == 0 && exact_threshold_ok == 2 && kMissThreshold == 2.0,
          fmt("%d/100 randomized cases differ from the brute-force oracle; MR threshold %.1f m", mismatches,
              kMissThreshold)};
}

// ---- 4. stage semantics -------------------------------------------------------

Outcome criterion_stage_semantics() {
  ModelConfig m;
  m.d_agent = m.d_map = m.mlp_hidden = 16;
  int warm_ok = 0, alloc_ok = 0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    ScenarioSpec spec;
    spec.kind = kAllKinds[seed % kAllKinds.size()];
    spec.seed = 7000 + seed;
    const Scene s = to_focal_frame(generate_scene(spec)).scene;
    const Targets targets = make_targets(s, s.focal_index);
    bool warm_zero = true, alloc_positive = true;
    for (Stage stage : {Stage::kWarmup, Stage::kAllocation}) {
      ad::ParamStore params = init_params(m, static_cast<std::uint64_t>(seed));
      LossConfig loss;
      loss.stage = stage;
      ad::Tape t;
      const ForwardOutput out = forward(t, s, params, m);
      const LossTerms terms = total_loss(out.trajectories, out.scores, m.modes, targets, loss);
      t.backward(terms.total);
      params.zero_grad();
      t.accumulate_param_grads(params);
      const int best = terms.best[s.focal_index];
      for (int k = 0; k < m.modes; ++k) {
        if (k == best) continue;
        double norm = 0;
        for (const char* part : {"/l1/W", "/l1/b", "/l2/W", "/l2/b"})
          norm += params.grad("dec" + std::to_string(k) + part).squaredNorm();
        if (stage == Stage::kWarmup && norm != 0.0) warm_zero = false;
        if (stage == Stage::kAllocation && !(norm > 0.0)) alloc_positive = false;
      }
    }
    warm_ok += warm_zero;
    alloc_ok += alloc_positive;
  }
  return {warm_ok == seeds && alloc_ok >= 19,
          fmt("warmup: non-best decoder gradients zero in %d/%d samples; allocation: positive in %d/%d", warm_ok,
              seeds, alloc_ok, seeds)};
}

// ---- 5-7. toy training --------------------------------------------------------

struct ToyRun {
  EvalReport all;       // held-out scenes of every kind
  EvalReport driving;   // held-out straight and turn scenes
  double seconds = 0;
};

struct ToyCorpus {
  std::vector<Scene> train, eval, eval_driving;
};

const ToyCorpus& toy_corpus() {
  static const ToyCorpus corpus = [] {
    ToyCorpus c;
    std::tie(c.train, c.eval) = split_by_seed_parity(generate_scenes(uniform_plan(kAllKinds, 2000, 1000)));
    for (const Scene& s : c.eval)
      if (s.kind == "straight" || s.kind == "left_turn" || s.kind == "right_turn") c.eval_driving.push_back(s);
    return c;
  }();
  return corpus;
}

// Widest power of two whose toy run stays well inside the 15 minute budget.
ModelConfig toy_model(const Topology& topology) {
  ModelConfig m;
  m.d_agent = m.d_map = m.mlp_hidden = 32;
  m.modes = 6;
  m.topology = topology;
  return m;
}

const ToyRun& toy_run(const std::string& variant, std::uint64_t seed) {
  static std::map<std::pair<std::string, std::uint64_t>, ToyRun> cache;
  const auto key = std::make_pair(variant, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const auto t0 = std::chrono::steady_clock::now();
  const ToyCorpus& corpus = toy_corpus();
  const ModelConfig m = toy_model(variant == "one-stage" ? Topology::one_stage() : Topology::full());
  TrainConfig c;
  c.seed = seed;
  if (variant == "no-allocation") c.loss.alpha = 0;
  const TrainResult r = train(corpus.train, m, c);
  ToyRun run;
  run.all = evaluate_model(corpus.eval, r.checkpoint.params, m);
  run.driving = evaluate_model(corpus.eval_driving, r.checkpoint.params, m);
  run.seconds = seconds_since(t0);
  std::printf("  [toy %s seed %llu] minADE %.3f minFDE %.3f min hit %.3f | straight/turn minADE %.3f minFDE %.3f | %.0f s%s\n",
              variant.c_str(), static_cast<unsigned long long>(seed), run.all.min_ade, run.all.min_fde,
              std::min_element(run.all.per_branch.begin(), run.all.per_branch.end(),
                               [](const BranchStats& a, const BranchStats& b) { return a.hit_rate < b.hit_rate; })
                  ->hit_rate,
              run.driving.min_ade, run.driving.min_fde, run.seconds, r.diverged ? " DIVERGED" : "");
  std::fflush(stdout);
  return cache.emplace(key, run).first->second;
}

const std::vector<std::uint64_t> kToySeeds{1, 2, 3};

double min_hit_rate(const EvalReport& r) {
  double lo = 1;
  for (const auto& b : r.per_branch) lo = std::min(lo, b.hit_rate);
  return lo;
}

Outcome criterion_allocation_effect() {
  std::vector<double> with, without;
  for (auto seed : kToySeeds) {
    with.push_back(min_hit_rate(toy_run("full", seed).all));
    without.push_back(min_hit_rate(toy_run("no-allocation", seed).all));
  }
  const double a = median3(with), b = median3(without);
  return {a >= b, fmt("median minimum branch hit rate %.3f with allocation vs %.3f without (seeds 1-3)", a, b)};
}

Outcome criterion_progressive_effect() {
  std::vector<double> full, one;
  double longest = 0;
  for (auto seed : kToySeeds) {
    full.push_back(toy_run("full", seed).all.min_fde);
    one.push_back(toy_run("one-stage", seed).all.min_fde);
    longest = std::max({longest, toy_run("full", seed).seconds, toy_run("one-stage", seed).seconds});
  }
  const double a = median3(full), b = median3(one);
  return {a <= b && longest <= 900,
          fmt("median minFDE %.4f full vs %.4f one-stage; longest run %.0f s", a, b, longest)};
}

Outcome criterion_end_to_end() {
  std::vector<double> ade, fde;
  for (auto seed : kToySeeds) {
    ade.push_back(toy_run("full", seed).driving.min_ade);
    fde.push_back(toy_run("full", seed).driving.min_fde);
  }
  const double model_ade = median3(ade), model_fde = median3(fde);
  const double cv_fde = evaluate_constant_velocity(toy_corpus().eval_driving, 30).min_fde;
  const double gain = 1.0 - model_fde / cv_fde;
  return {gain >= 0.30 && model_ade <= 0.5,
          fmt("held-out straight/turn (%zu scenes): minFDE %.3f vs constant velocity %.3f (%.0f%% better), minADE "
              "%.3f",
              toy_corpus().eval_driving.size(), model_fde, cv_fde, 100 * gain, model_ade)};
}

// ---- 8. determinism -----------------------------------------------------------

Outcome criterion_determinism() {
  const auto scenes = generate_scenes(uniform_plan(kAllKinds, 100, 4000));
  const auto [train_set, eval_set] = split_by_seed_parity(scenes);
  ModelConfig m = toy_model(Topology::full());
  TrainConfig c;
  c.seed = 21;
  c.schedule = parse_schedule("warmup:2@1e-3,allocation:2@1e-3");
  c.batch_size = 8;
  std::vector<std::string> ckpts, tables;
  for (int run = 0; run < 2; ++run) {
    const TrainResult r = train(train_set, m, c);
    ckpts.push_back(serialize_checkpoint(r.checkpoint));
    const std::vector<std::pair<std::string, EvalReport>> rows{
        {"run", evaluate_model(eval_set, r.checkpoint.params, m)}};
    tables.push_back(metrics_table(rows));
  }
  c.seed = 22;
  const bool seed_matters = serialize_checkpoint(train(train_set, m, c).checkpoint) != ckpts[0];
  return {ckpts[0] == ckpts[1] && tables[0] == tables[1] && seed_matters,
          fmt("checkpoints %s (%zu bytes), metrics tables %s, different seed changes the checkpoint: %s",
              ckpts[0] == ckpts[1] ? "identical" : "DIFFER", ckpts[0].size(),
              tables[0] == tables[1] ? "identical" : "DIFFER", seed_matters ? "yes" : "no")};
}

// ---- 9. ensemble --------------------------------------------------------------

Outcome criterion_ensemble() {
  Prediction member;
  const int k = 6;
  for (int m = 0; m < k; ++m) {
    Points t(30, 2);
    const double heading = -0.9 + 0.36 * m;
    for (int s = 0; s < 30; ++s) t.row(s) << 0.8 * (s + 1) * std::cos(heading), 0.8 * (s + 1) * std::sin(heading);
    member.trajectories.push_back(t);
    member.scores.push_back((m + 1.0) / 21.0);
  }
  const std::vector<Prediction> members(8, member);
  const Prediction out = ensemble_cluster(members, k);
  double total = 0, traj_err = 0, score_err = 0;
  for (double s : out.scores) total += s;
  // Match each recovered mode to a member mode by endpoint.
  std::set<int> matched;
  for (int i = 0; i < out.modes(); ++i) {
    int best = 0;
    double d = 1e300;
    for (int m = 0; m < k; ++m) {
      const double e = (out.trajectories[i] - member.trajectories[m]).cwiseAbs().maxCoeff();
      if (e < d) {
        d = e;
        best = m;
      }
    }
    matched.insert(best);
    traj_err = std::max(traj_err, d);
    score_err = std::max(score_err, std::abs(out.scores[i] - member.scores[best]));
  }
  double worst_gap = -1e300;
  for (int m = 0; m < k; ++m) {
    Future gt;
    gt.positions = member.trajectories[m];
    gt.positions.row(29) += Eigen::RowVector2d(0.3, -0.2);
    gt.validity.assign(30, 1);
    worst_gap = std::max(worst_gap, score_prediction(out, gt).min_fde - score_prediction(member, gt).min_fde);
  }
  const bool ok = out.modes() == k && matched.size() == static_cast<std::size_t>(k) && traj_err < 1e-9 &&
                  score_err < 1e-9 && std::abs(total - 1) < 1e-12 && worst_gap <= 1e-9;
  return {ok, fmt("%zu/%d modes recovered (max deviation %.1e), scores sum to %.15f, ensemble minFDE minus best member "
                  "%.1e",
                  matched.size(), k, traj_err, total, worst_gap)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient correctness", criterion_gradients},
      {2, "loss oracles", criterion_loss_oracles},
      {3, "metric oracle equivalence", criterion_metric_oracle},
      {4, "stage semantics", criterion_stage_semantics},
      {5, "allocation effect", criterion_allocation_effect},
      {6, "progressive-interaction effect", criterion_progressive_effect},
      {7, "end-to-end learning", criterion_end_to_end},
      {8, "determinism", criterion_determinism},
      {9, "ensemble sanity", criterion_ensemble},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
