#include "proin/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace proin {

using ad::Matrix;
using ad::Var;

std::string_view stage_name(Stage stage) { return stage == Stage::kWarmup ? "warmup" : "allocation"; }

Stage stage_from_name(std::string_view name) {
  if (name == "warmup" || name == "1") return Stage::kWarmup;
  if (name == "allocation" || name == "2") return Stage::kAllocation;
  throw std::invalid_argument("unknown stage '" + std::string(name) + "' (expected warmup or allocation)");
}

void LossConfig::validate() const {
  if (!(eta > 0 && zeta > 0 && varsigma > 0)) throw std::invalid_argument("LossConfig: eta, zeta, varsigma must be > 0");
  if (!(alpha >= 0 && beta >= 0)) throw std::invalid_argument("LossConfig: alpha, beta must be >= 0");
}

Targets make_targets(const Scene& scene, int only_agent) {
  if (!scene.has_futures()) throw std::invalid_argument("make_targets: scene '" + scene.id + "' has no futures");
  const int n = static_cast<int>(scene.agents.size());
  const int f = scene.horizon;
  Targets t;
  t.future_steps = f;
  t.positions = Matrix::Zero(n, 2 * f);
  t.mask = Matrix::Zero(n, 2 * f);
  for (int i = 0; i < n; ++i) {
    const Future& fut = scene.futures[i];
    if (!fut.endpoint_valid() || (only_agent >= 0 && i != only_agent)) continue;
    t.agents.push_back(i);
    for (int s = 0; s < f; ++s) {
      if (!fut.validity[s]) continue;
      t.positions(i, 2 * s) = fut.positions(s, 0);
      t.positions(i, 2 * s + 1) = fut.positions(s, 1);
      t.mask(i, 2 * s) = t.mask(i, 2 * s + 1) = 1.0;
    }
  }
  return t;
}

int best_mode(std::span<const Vec2> endpoints, const Vec2& truth) {
  if (endpoints.empty()) throw std::invalid_argument("best_mode: no modes");
  int best = 0;
  double best_err = (endpoints[0] - truth).norm();
  for (std::size_t k = 1; k < endpoints.size(); ++k) {
    const double e = (endpoints[k] - truth).norm();
    if (e < best_err) {
      best_err = e;
      best = static_cast<int>(k);
    }
  }
  return best;
}

std::vector<double> allocation_weights(std::span<const double> errors, const LossConfig& c) {
  std::vector<double> w(errors.size());
  if (w.empty()) return w;
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = c.zeta / (c.varsigma + errors[k] * errors[k]);
  const double top = *std::max_element(w.begin(), w.end());
  double total = 0;
  for (double& v : w) total += (v = std::exp(v - top));
  for (double& v : w) v /= total;
  return w;
}

namespace {

int agent_rows(const Var& trajectories, int modes, const Targets& targets) {
  if (modes < 1 || trajectories.rows() != static_cast<ad::Index>(modes) * targets.rows() ||
      trajectories.cols() != 2 * targets.future_steps)
    throw std::invalid_argument("losses: trajectories shape does not match targets");
  return targets.rows();
}

Vec2 endpoint_of(const Matrix& rows, ad::Index r) {
  const auto c = rows.cols();
  return {rows(r, c - 2), rows(r, c - 1)};
}

Var zero_like(const Var& v) { return ad::scale(ad::sum(v), 0.0); }

std::vector<int> included(std::span<const int> best) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < best.size(); ++i)
    if (best[i] >= 0) rows.push_back(static_cast<int>(i));
  return rows;
}

}  // namespace

std::vector<int> best_modes(const Matrix& trajectories, int modes, const Targets& targets) {
  const int n = targets.rows();
  std::vector<int> best(n, -1);
  std::vector<Vec2> ends(modes);
  for (int i : targets.agents) {
    for (int k = 0; k < modes; ++k) ends[k] = endpoint_of(trajectories, static_cast<ad::Index>(k) * n + i);
    best[i] = best_mode(ends, endpoint_of(targets.positions, i));
  }
  return best;
}

Var cls_loss(const Var& scores, std::span<const int> best, const LossConfig& c) {
  if (static_cast<std::size_t>(scores.rows()) != best.size())
    throw std::invalid_argument("cls_loss: best-mode list does not match score rows");
  const std::vector<int> rows = included(best);
  if (rows.empty()) return zero_like(scores);
  const auto n = static_cast<ad::Index>(rows.size());
  const auto k = scores.cols();
  ad::Tape& t = *scores.tape();
  Matrix onehot = Matrix::Zero(n, k);
  for (ad::Index r = 0; r < n; ++r) onehot(r, best[rows[r]]) = 1.0;
  const Var s = ad::gather_rows(scores, rows);
  const Var s_best = ad::matmul(ad::mul(s, t.constant(onehot)), t.constant(Matrix::Ones(k, 1)));
  const Var spread = ad::matmul(s_best, t.constant(Matrix::Ones(1, k)));
  const Var margins = ad::mul(ad::relu(ad::add_scalar(ad::sub(s, spread), c.epsilon)),
                              t.constant(Matrix::Ones(n, k) - onehot));
  const Var brier = ad::square(ad::add_scalar(ad::scale(s_best, -1.0), 1.0));
  return ad::add(ad::scale(ad::sum(margins), 1.0 / static_cast<double>(n * k)),
                 ad::scale(ad::sum(brier), c.eta / static_cast<double>(n)));
}

Var reg_l1(const Var& trajectories, int modes, std::span<const int> best, const Targets& targets) {
  const int n = agent_rows(trajectories, modes, targets);
  const std::vector<int> agents = included(best);
  if (agents.empty()) return zero_like(trajectories);
  std::vector<int> rows;
  for (int i : agents) rows.push_back(best[i] * n + i);
  ad::Tape& t = *trajectories.tape();
  Matrix truth(agents.size(), targets.positions.cols()), mask(agents.size(), targets.mask.cols());
  for (std::size_t r = 0; r < agents.size(); ++r) {
    truth.row(r) = targets.positions.row(agents[r]);
    mask.row(r) = targets.mask.row(agents[r]);
  }
  const double steps = mask.sum() / 2.0;
  if (steps <= 0) return zero_like(trajectories);
  const Var diff = ad::mul(ad::sub(ad::gather_rows(trajectories, rows), t.constant(std::move(truth))),
                           t.constant(std::move(mask)));
  return ad::scale(ad::sum(ad::smooth_l1(diff)), 1.0 / steps);
}

Matrix allocation_weight_matrix(const Matrix& values, int modes, const Targets& targets, const LossConfig& c) {
  const int n = targets.rows();
  Matrix w = Matrix::Zero(n, modes);
  std::vector<double> errors(modes);
  for (int i : targets.agents) {
    const Vec2 end = endpoint_of(targets.positions, i);
    for (int k = 0; k < modes; ++k) errors[k] = (endpoint_of(values, static_cast<ad::Index>(k) * n + i) - end).norm();
    const std::vector<double> wi = allocation_weights(errors, c);
    for (int k = 0; k < modes; ++k) w(i, k) = wi[k];
  }
  return w;
}

Var reg_allocation(const Var& trajectories, int modes, const Targets& targets, const LossConfig& c) {
  agent_rows(trajectories, modes, targets);
  return reg_allocation(trajectories, modes, targets, allocation_weight_matrix(trajectories.value(), modes, targets, c));
}

Var reg_allocation(const Var& trajectories, int modes, const Targets& targets, const Matrix& weights) {
  const int n = agent_rows(trajectories, modes, targets);
  if (weights.rows() != n || weights.cols() != modes)
    throw std::invalid_argument("reg_allocation: weights must be N x K");
  const double steps = targets.mask.sum() / 2.0;
  if (targets.agents.empty() || steps <= 0) return zero_like(trajectories);
  const Matrix& values = trajectories.value();
  Matrix truth(values.rows(), values.cols()), weight = Matrix::Zero(values.rows(), values.cols());
  for (int k = 0; k < modes; ++k) truth.middleRows(static_cast<ad::Index>(k) * n, n) = targets.positions;
  for (int i : targets.agents)
    for (int k = 0; k < modes; ++k) weight.row(static_cast<ad::Index>(k) * n + i) = weights(i, k) * targets.mask.row(i);
  ad::Tape& t = *trajectories.tape();
  const Var diff = ad::sub(trajectories, t.constant(std::move(truth)));
  return ad::scale(ad::sum(ad::mul(ad::smooth_l1(diff), t.constant(std::move(weight)))),
                   1.0 / (static_cast<double>(modes) * steps));
}

Var reg_endpoint(const Var& trajectories, int modes, std::span<const int> best, const Targets& targets) {
  const int n = agent_rows(trajectories, modes, targets);
  const std::vector<int> agents = included(best);
  if (agents.empty()) return zero_like(trajectories);
  std::vector<int> rows;
  Matrix truth(agents.size(), 2);
  for (std::size_t r = 0; r < agents.size(); ++r) {
    rows.push_back(best[agents[r]] * n + agents[r]);
    truth.row(r) = endpoint_of(targets.positions, agents[r]).transpose();
  }
  ad::Tape& t = *trajectories.tape();
  const Var ends = ad::slice_cols(ad::gather_rows(trajectories, rows), trajectories.cols() - 2, 2);
  return ad::scale(ad::sum(ad::square(ad::sub(ends, t.constant(std::move(truth))))),
                   1.0 / static_cast<double>(agents.size()));
}

LossTerms total_loss(const Var& trajectories, const Var& scores, int modes, const Targets& targets,
                     const LossConfig& c, const Selection* frozen) {
  agent_rows(trajectories, modes, targets);
  if (scores.rows() != targets.rows() || scores.cols() != modes)
    throw std::invalid_argument("total_loss: scores shape does not match targets");
  LossTerms out;
  out.best = frozen ? frozen->best : best_modes(trajectories.value(), modes, targets);
  if (c.stage == Stage::kAllocation)
    out.weights = frozen ? frozen->weights : allocation_weight_matrix(trajectories.value(), modes, targets, c);
  const Var cls = cls_loss(scores, out.best, c);
  const Var l1 = reg_l1(trajectories, modes, out.best, targets);
  out.cls = cls.value()(0, 0);
  out.l1 = l1.value()(0, 0);
  out.total = ad::add(cls, l1);
  if (c.stage == Stage::kAllocation) {
    const Var alloc = reg_allocation(trajectories, modes, targets, out.weights);
    const Var end = reg_endpoint(trajectories, modes, out.best, targets);
    out.allocation = alloc.value()(0, 0);
    out.endpoint = end.value()(0, 0);
    out.total = ad::add(out.total, ad::add(ad::scale(alloc, c.alpha), ad::scale(end, c.beta)));
  }
  return out;
}

}  // namespace proin
