#ifndef FEDLAB_ALGORITHMS_HPP
#define FEDLAB_ALGORITHMS_HPP

#include <optional>
#include <string>
#include <vector>

#include "fedlab/numkit.hpp"
#include "fedlab/rng.hpp"
#include "fedlab/tasks.hpp"

namespace fedlab {

enum class Algorithm { fedavg, fedsam, mofedsam, scaffold, fedswa, fedmoswa };
enum class CtrlOption { option1 = 1, option2 = 2 };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

bool uses_controls(Algorithm a);   // scaffold, fedmoswa
bool uses_swa_schedule(Algorithm a);  // fedswa, fedmoswa: cyclical LR + EMA

struct AlgoConfig {
  double alpha = 1.5;       // server EMA/extrapolation coefficient
  double gamma = 0.2;       // server-control momentum
  double sam_radius = 0.05; // SAM perturbation norm
  CtrlOption ctrl_option = CtrlOption::option2;
  double mom_beta = 0.9;    // local momentum coefficient (mofedsam)
  bool ctrl_init_grad = false;  // c_i^0 = grad F_i(theta_0) instead of 0
  bool freeze_ctrl = false;     // diagnostics: skip all control updates
  bool swa_shadow = false;      // maintain the running weight average

  void validate() const {
    require(alpha > 0.0, "algo.alpha must be > 0");
    require(gamma > 0.0 && gamma <= 1.0, "algo.gamma must be in (0, 1]");
    require(sam_radius >= 0.0, "algo.sam_radius must be >= 0");
    require(mom_beta > 0.0 && mom_beta <= 1.0,
            "algo.mom_beta must be in (0, 1]");
  }
};

// Per-client state across rounds.
struct ClientState {
  ParamVec ctrl;  // control variate c_i (empty when the algorithm has none)
};

// Per-step record of one local run, retained only under --diagnostics.
struct LocalTrace {
  std::vector<ParamVec> thetas;  // theta_{i,k}, k = 0..K
  std::vector<ParamVec> grads;   // raw minibatch gradients g_i(theta_{i,k})
  std::vector<double> lrs;       // eta_k actually applied
};

// Minibatch drawing policy. batch_size >= n means the full shard in index
// order (deterministic, no RNG draws). exclude_* is a probe knob used by the
// stability tests to keep one sample out of every batch.
struct BatchSpec {
  int batch_size = 0;
  int exclude_client = -1;
  std::int64_t exclude_id = -1;
};

std::vector<std::int64_t> draw_batch(const TaskSpec& task, int client,
                                     const BatchSpec& spec, CounterRng& rng);

// K local SGD steps: theta <- theta - eta_k * g_i  (one batch per step).
ParamVec local_update_fedavg(const TaskSpec& task, int client, ParamVec theta,
                             const std::vector<double>& step_lrs,
                             const BatchSpec& batch, CounterRng& rng,
                             LocalTrace* trace = nullptr);

// First-order SAM ascent direction: radius * g/||g||, zero when ||g|| ~ 0.
ParamVec sam_perturb(const ParamVec& grad, double sam_radius);

// K SAM steps: g1 at theta, g2 at theta + sam_perturb(g1) on the same batch,
// then theta <- theta - eta_k * g2.
ParamVec local_update_fedsam(const TaskSpec& task, int client, ParamVec theta,
                             const std::vector<double>& step_lrs,
                             const BatchSpec& batch, double sam_radius,
                             CounterRng& rng, LocalTrace* trace = nullptr);

// SAM step blended with the previous server update direction:
// d = mom_beta * g2 + (1 - mom_beta) * delta_prev.
ParamVec local_update_mofedsam(const TaskSpec& task, int client,
                               ParamVec theta, const ParamVec& delta_prev,
                               double mom_beta, double sam_radius,
                               const std::vector<double>& step_lrs,
                               const BatchSpec& batch, CounterRng& rng,
                               LocalTrace* trace = nullptr);

struct ScaffoldResult {
  ParamVec theta;
  ParamVec ctrl_next;  // c_i^+
};

// SCAFFOLD client: theta <- theta - eta*(g - c_i + c); c_i^+ from the
// option-II rule with the round's received model.
ScaffoldResult local_update_scaffold(const TaskSpec& task, int client,
                                     ParamVec theta, const ParamVec& ctrl_i,
                                     const ParamVec& ctrl_global,
                                     const std::vector<double>& step_lrs,
                                     const BatchSpec& batch, CounterRng& rng,
                                     LocalTrace* trace = nullptr);

// Momentum-controlled client step: theta <- theta - eta_k*(g - c_i + sctl).
ParamVec local_update_fedmoswa(const TaskSpec& task, int client,
                               ParamVec theta, const ParamVec& ctrl_i,
                               const ParamVec& sctl,
                               const std::vector<double>& step_lrs,
                               const BatchSpec& batch, CounterRng& rng,
                               LocalTrace* trace = nullptr);

// Client control refresh. Option I: fresh full-batch gradient at the
// received model. Option II: c_i - sctl + (theta_received - theta_iK)/sum_eta.
ParamVec control_update(CtrlOption option, const TaskSpec& task, int client,
                        const ParamVec& theta_received,
                        const ParamVec& theta_end, const ParamVec& ctrl_i,
                        const ParamVec& sctl, double sum_eta);

// sctl <- sctl + gamma * mean(c_i^+ - sctl) over participating clients.
ParamVec server_control_update(const ParamVec& sctl,
                               const std::vector<ParamVec>& ctrl_deltas,
                               double gamma);

// theta_t = theta_{t-1} + alpha*(v_t - theta_{t-1}), v_t = mean of client
// models. alpha == 1 short-circuits to v_t so plain averaging is exact.
ParamVec server_aggregate(const ParamVec& theta_prev,
                          const std::vector<ParamVec>& client_models,
                          double alpha);

}  // namespace fedlab

#endif
