#include "proin/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace proin {

SceneScore score_prediction(const Prediction& p, const Future& truth) {
  const int k = p.modes();
  if (k < 1 || static_cast<int>(p.trajectories.size()) != k)
    throw std::invalid_argument("score_prediction: prediction without modes");
  if (!truth.endpoint_valid()) throw std::invalid_argument("score_prediction: ground-truth endpoint is missing");
  const auto f = truth.positions.rows();
  for (const auto& traj : p.trajectories)
    if (traj.rows() != f) throw std::invalid_argument("score_prediction: trajectory length differs from ground truth");

  SceneScore s;
  s.fde.resize(k);
  s.min_ade = std::numeric_limits<double>::infinity();
  for (int m = 0; m < k; ++m) {
    double total = 0;
    int count = 0;
    for (Eigen::Index t = 0; t < f; ++t) {
      if (!truth.validity[t]) continue;
      total += (p.trajectories[m].row(t) - truth.positions.row(t)).norm();
      ++count;
    }
    s.min_ade = std::min(s.min_ade, total / count);
    s.fde[m] = (p.trajectories[m].row(f - 1) - truth.positions.row(f - 1)).norm();
    if (s.fde[m] < s.fde[s.best]) s.best = m;
  }
  s.min_fde = s.fde[s.best];
  const double miss_score = 1.0 - p.scores[s.best];
  s.brier_min_fde = s.min_fde + miss_score * miss_score;
  s.miss = s.min_fde > kMissThreshold;
  return s;
}

EvalReport evaluate(std::span<const Prediction> predictions, std::span<const Future> truths) {
  if (predictions.size() != truths.size())
    throw std::invalid_argument("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(truths.size()) + " ground truths");
  EvalReport r;
  if (predictions.empty()) return r;
  const int k = predictions.front().modes();
  r.per_branch.resize(k);
  for (int m = 0; m < k; ++m) r.per_branch[m].branch = m;
  std::vector<double> fde_sum(k, 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].modes() != k)
      throw std::invalid_argument("evaluate: scene " + std::to_string(i) + " has " +
                                  std::to_string(predictions[i].modes()) + " modes, expected " + std::to_string(k));
    const SceneScore s = score_prediction(predictions[i], truths[i]);
    r.min_ade += s.min_ade;
    r.min_fde += s.min_fde;
    r.brier_min_fde += s.brier_min_fde;
    r.miss_rate += s.miss ? 1.0 : 0.0;
    r.per_branch[s.best].hits += 1;
    fde_sum[s.best] += s.min_fde;
  }
  const double n = static_cast<double>(predictions.size());
  r.n_scenes = static_cast<int>(predictions.size());
  r.min_ade /= n;
  r.min_fde /= n;
  r.brier_min_fde /= n;
  r.miss_rate /= n;
  for (int m = 0; m < k; ++m) {
    auto& b = r.per_branch[m];
    b.hit_rate = b.hits / n;
    b.fde_when_best = b.hits ? fde_sum[m] / b.hits : 0.0;
  }
  return r;
}

std::vector<BranchStats> sorted_by_fde(const EvalReport& report) {
  std::vector<BranchStats> out = report.per_branch;
  std::stable_sort(out.begin(), out.end(), [](const BranchStats& a, const BranchStats& b) {
    if ((a.hits > 0) != (b.hits > 0)) return a.hits > 0;
    return a.fde_when_best < b.fde_when_best;
  });
  return out;
}

namespace {

std::string table(std::span<const std::pair<std::string, EvalReport>> rows, bool sorted) {
  std::size_t k = 0;
  for (const auto& [name, r] : rows) k = std::max(k, r.per_branch.size());
  std::ostringstream os;
  os << "name,minADE,minFDE,brier_minFDE,MR";
  for (std::size_t m = 1; m <= k; ++m) os << ",hit_" << m;
  for (std::size_t m = 1; m <= k; ++m) os << ",fde_" << m;
  os << '\n' << std::fixed << std::setprecision(6);
  for (const auto& [name, r] : rows) {
    const std::vector<BranchStats> branches = sorted ? sorted_by_fde(r) : r.per_branch;
    os << name << ',' << r.min_ade << ',' << r.min_fde << ',' << r.brier_min_fde << ',' << r.miss_rate;
    for (std::size_t m = 0; m < k; ++m) {
      os << ',';
      if (m < branches.size()) os << branches[m].hit_rate;
    }
    for (std::size_t m = 0; m < k; ++m) {
      os << ',';
      if (m < branches.size()) os << branches[m].fde_when_best;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::string metrics_table(std::span<const std::pair<std::string, EvalReport>> rows) { return table(rows, false); }

std::string sorted_metrics_table(std::span<const std::pair<std::string, EvalReport>> rows) {
  return table(rows, true);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Prediction constant_velocity(const AgentHistory& agent, int future_steps) {
  Prediction p;
  Points traj(future_steps, 2);
  const Vec2 start = agent.current_position();
  for (int s = 0; s < future_steps; ++s) traj.row(s) = (start + agent.last_velocity * (s + 1)).transpose();
  p.trajectories.push_back(std::move(traj));
  p.scores.push_back(1.0);
  return p;
}

Prediction ensemble_cluster(std::span<const Prediction> members, int k_out) {
  struct Item {
    const Points* traj;
    double score;
    Vec2 end;
  };
  std::vector<Item> items;
  for (const auto& m : members)
    for (int k = 0; k < m.modes(); ++k) {
      const Points& t = m.trajectories[k];
      if (t.rows() == 0 || (!items.empty() && t.rows() != items.front().traj->rows()))
        throw std::invalid_argument("ensemble_cluster: member trajectories differ in length");
      items.push_back({&t, m.scores[k], t.row(t.rows() - 1).transpose()});
    }
  if (k_out < 1) throw std::invalid_argument("ensemble_cluster: k_out must be >= 1");
  if (static_cast<int>(items.size()) < k_out)
    throw std::invalid_argument("ensemble_cluster: " + std::to_string(items.size()) + " member modes for k_out " +
                                std::to_string(k_out));
  const int n = static_cast<int>(items.size());

  // Farthest-point initialization from the highest-scoring endpoint.
  std::vector<Vec2> centers;
  int first = 0;
  for (int i = 1; i < n; ++i)
    if (items[i].score > items[first].score) first = i;
  centers.push_back(items[first].end);
  std::vector<double> nearest(n);
  for (int i = 0; i < n; ++i) nearest[i] = (items[i].end - centers[0]).norm();
  while (static_cast<int>(centers.size()) < k_out) {
    int far = 0;
    for (int i = 1; i < n; ++i)
      if (nearest[i] > nearest[far]) far = i;
    if (nearest[far] <= 0.0) break;  // every endpoint already coincides with a center
    centers.push_back(items[far].end);
    for (int i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], (items[i].end - centers.back()).norm());
  }
  const int c = static_cast<int>(centers.size());

  std::vector<int> assign(n, 0);
  auto assign_all = [&] {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (items[i].end - centers[0]).squaredNorm();
      for (int j = 1; j < c; ++j) {
        const double d = (items[i].end - centers[j]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      assign[i] = best;
    }
  };
  for (int iter = 0; iter < kEnsembleIterations; ++iter) {
    assign_all();
    std::vector<Vec2> sum(c, Vec2::Zero());
    std::vector<int> count(c, 0);
    for (int i = 0; i < n; ++i) {
      sum[assign[i]] += items[i].end;
      ++count[assign[i]];
    }
    for (int j = 0; j < c; ++j)
      if (count[j]) centers[j] = sum[j] / count[j];
  }
  assign_all();

  struct Cluster {
    int first_member = std::numeric_limits<int>::max();
    double score = 0;
    Points weighted;
    Points plain;
    int count = 0;
  };
  const auto f = items.front().traj->rows();
  std::vector<Cluster> clusters(c);
  for (auto& cl : clusters) {
    cl.weighted = Points::Zero(f, 2);
    cl.plain = Points::Zero(f, 2);
  }
  for (int i = 0; i < n; ++i) {
    Cluster& cl = clusters[assign[i]];
    cl.first_member = std::min(cl.first_member, i);
    cl.score += items[i].score;
    cl.weighted += items[i].score * *items[i].traj;
    cl.plain += *items[i].traj;
    ++cl.count;
  }
  std::vector<Cluster*> order;
  for (auto& cl : clusters)
    if (cl.count) order.push_back(&cl);
  std::sort(order.begin(), order.end(),
            [](const Cluster* a, const Cluster* b) { return a->first_member < b->first_member; });

  Prediction out;
  double total = 0;
  for (const Cluster* cl : order) {
    out.trajectories.push_back(cl->score > 0 ? Points(cl->weighted / cl->score) : Points(cl->plain / cl->count));
    out.scores.push_back(cl->score);
    total += cl->score;
  }
  // Fill missing slots with the highest-scoring members at zero score.
  std::vector<int> by_score(n);
  std::iota(by_score.begin(), by_score.end(), 0);
  std::stable_sort(by_score.begin(), by_score.end(),
                   [&](int a, int b) { return items[a].score > items[b].score; });
  for (int i = 0; out.modes() < k_out; ++i) {
    out.trajectories.push_back(*items[by_score[i % n]].traj);
    out.scores.push_back(0.0);
  }
  for (double& s : out.scores) s = total > 0 ? s / total : 1.0 / out.modes();
  return out;
}

}  // namespace proin
