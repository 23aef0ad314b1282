#pragma once

// Straightforward re-implementation of the evaluation metrics, written without
// looking at the library's loop structure. Used to cross-check evaluate().

#include <cmath>
#include <vector>

#include "proin/metrics.hpp"

namespace proin::testing {

struct OracleReport {
  double min_ade = 0, min_fde = 0, brier = 0, mr = 0;
  std::vector<double> hit_rate;
  std::vector<double> fde_when_best;
};

inline OracleReport oracle_evaluate(const std::vector<Prediction>& preds, const std::vector<Future>& truths) {
  OracleReport r;
  const std::size_t k = preds.front().trajectories.size();
  r.hit_rate.assign(k, 0.0);
  std::vector<double> fde_sum(k, 0.0);
  std::vector<int> hits(k, 0);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const Future& gt = truths[s];
    const long last = static_cast<long>(gt.positions.rows()) - 1;
    double ade_min = 1e300, fde_min = 1e300;
    std::size_t arg = 0;
    for (std::size_t m = 0; m < k; ++m) {
      const Points& p = preds[s].trajectories[m];
      double sum = 0;
      int n = 0;
      for (long t = 0; t <= last; ++t)
        if (gt.validity[t]) {
          const double dx = p(t, 0) - gt.positions(t, 0), dy = p(t, 1) - gt.positions(t, 1);
          sum += std::sqrt(dx * dx + dy * dy);
          n += 1;
        }
      if (sum / n < ade_min) ade_min = sum / n;
      const double dx = p(last, 0) - gt.positions(last, 0), dy = p(last, 1) - gt.positions(last, 1);
      const double fde = std::sqrt(dx * dx + dy * dy);
      if (fde < fde_min) {
        fde_min = fde;
        arg = m;
      }
    }
    const double miss = 1 - preds[s].scores[arg];
    r.min_ade += ade_min;
    r.min_fde += fde_min;
    r.brier += fde_min + miss * miss;
    r.mr += fde_min > 2.0 ? 1 : 0;
    hits[arg] += 1;
    fde_sum[arg] += fde_min;
  }
  const double n = static_cast<double>(preds.size());
  r.min_ade /= n;
  r.min_fde /= n;
  r.brier /= n;
  r.mr /= n;
  r.fde_when_best.assign(k, 0.0);
  for (std::size_t m = 0; m < k; ++m) {
    r.hit_rate[m] = hits[m] / n;
    if (hits[m]) r.fde_when_best[m] = fde_sum[m] / hits[m];
  }
  return r;
}

}  // namespace proin::testing
