#ifndef FEDLAB_SCHEDULES_HPP
#define FEDLAB_SCHEDULES_HPP

#include <cmath>

#include "fedlab/common.hpp"

namespace fedlab {

// Cyclical local learning rate: within a round it decays linearly from
// eta_l to rho*eta_l over K local iterations, and restarts from eta_l
// (times the per-round decay) at the next round.
struct LrSchedule {
  double eta_l = 0.1;        // base local LR at k = 0
  double rho = 0.1;          // terminal ratio, in [0, 1]; rho = 1 => constant
  int local_iters = 10;      // K
  double round_decay = 0.998;  // multiplicative decay of eta_l per round

  void validate() const {
    require(eta_l > 0.0, "sched.eta_l must be > 0");
    require(rho >= 0.0 && rho <= 1.0, "sched.rho must be in [0, 1]");
    require(local_iters >= 1, "sched.local_iters must be >= 1");
    require(round_decay > 0.0 && round_decay <= 1.0,
            "sched.round_decay must be in (0, 1]");
  }
};

// eta_k = eta_l*(1 - k/K) + (k/K)*rho*eta_l, for 0 <= k <= K.
// rho == 1 short-circuits to eta_l so a degenerate cycle is bit-identical
// to a constant schedule.
inline double local_lr(const LrSchedule& s, int k) {
  const int K = s.local_iters;
  if (k < 0 || k > K) fail("local_lr: k out of range [0, K]");
  if (s.rho == 1.0) return s.eta_l;
  const double frac = static_cast<double>(k) / static_cast<double>(K);
  return s.eta_l * (1.0 - frac) + frac * s.rho * s.eta_l;
}

// Base LR for round t; the cycle restarts from this value every round.
inline double round_base_lr(const LrSchedule& s, int t) {
  if (t < 0) fail("round_base_lr: t must be >= 0");
  return s.eta_l * std::pow(s.round_decay, static_cast<double>(t));
}

// Schedule as seen inside round t: same shape, decayed base.
inline LrSchedule for_round(const LrSchedule& s, int t) {
  LrSchedule r = s;
  r.eta_l = round_base_lr(s, t);
  return r;
}

// Closed form of sum_{k=0}^{K-1} local_lr(k); the steps actually applied in
// one round (step k moves theta_k -> theta_{k+1}).
inline double sum_local_lr(const LrSchedule& s) {
  const double K = static_cast<double>(s.local_iters);
  return s.eta_l * (K * (1.0 + s.rho) / 2.0 + (1.0 - s.rho) / 2.0);
}

}  // namespace fedlab

#endif
