#include "fedlab/algorithms.hpp"

#include <cmath>

namespace fedlab {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedsam: return "fedsam";
    case Algorithm::mofedsam: return "mofedsam";
    case Algorithm::scaffold: return "scaffold";
    case Algorithm::fedswa: return "fedswa";
    case Algorithm::fedmoswa: return "fedmoswa";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "fedavg") return Algorithm::fedavg;
  if (s == "fedsam") return Algorithm::fedsam;
  if (s == "mofedsam") return Algorithm::mofedsam;
  if (s == "scaffold") return Algorithm::scaffold;
  if (s == "fedswa") return Algorithm::fedswa;
  if (s == "fedmoswa") return Algorithm::fedmoswa;
  fail("unknown algorithm: " + s);
}

bool uses_controls(Algorithm a) {
  return a == Algorithm::scaffold || a == Algorithm::fedmoswa;
}

bool uses_swa_schedule(Algorithm a) {
  return a == Algorithm::fedswa || a == Algorithm::fedmoswa;
}

std::vector<std::int64_t> draw_batch(const TaskSpec& task, int client,
                                     const BatchSpec& spec, CounterRng& rng) {
  const auto& samples = task.shards[static_cast<std::size_t>(client)].samples;
  const int n = static_cast<int>(samples.size());
  std::vector<std::int64_t> ids;

  if (spec.batch_size <= 0 || spec.batch_size >= n) {
    // full shard, index order, no RNG consumed
    ids.reserve(static_cast<std::size_t>(n));
    for (const Sample& z : samples) ids.push_back(z.id);
    return ids;
  }

  ids.reserve(static_cast<std::size_t>(spec.batch_size));
  int excl = -1;
  if (client == spec.exclude_client && spec.exclude_id >= 0)
    excl = task.sample_index(client, spec.exclude_id);
  for (int b = 0; b < spec.batch_size; ++b) {
    int idx;
    if (excl >= 0) {
      idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
      if (idx >= excl) ++idx;
    } else {
      idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    }
    ids.push_back(samples[static_cast<std::size_t>(idx)].id);
  }
  return ids;
}

namespace {

void record(LocalTrace* trace, const ParamVec& theta, const ParamVec& grad,
            double lr) {
  if (!trace) return;
  trace->thetas.push_back(theta);
  trace->grads.push_back(grad);
  trace->lrs.push_back(lr);
}

void record_final(LocalTrace* trace, const ParamVec& theta) {
  if (trace) trace->thetas.push_back(theta);
}

}  // namespace

ParamVec local_update_fedavg(const TaskSpec& task, int client, ParamVec theta,
                             const std::vector<double>& step_lrs,
                             const BatchSpec& batch, CounterRng& rng,
                             LocalTrace* trace) {
  for (double lr : step_lrs) {
    const auto ids = draw_batch(task, client, batch, rng);
    const GradResult g = task.loss_grad(client, theta, ids);
    record(trace, theta, g.grad, lr);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g.grad[i];
  }
  record_final(trace, theta);
  return theta;
}

ParamVec sam_perturb(const ParamVec& grad, double sam_radius) {
  const double norm = l2_norm(grad);
  // removable singularity at g = 0: no ascent direction, perturb nothing
  if (sam_radius == 0.0 || norm < 1e-12) return ParamVec(grad.size(), 0.0);
  return scaled(sam_radius / norm, grad);
}

ParamVec local_update_fedsam(const TaskSpec& task, int client, ParamVec theta,
                             const std::vector<double>& step_lrs,
                             const BatchSpec& batch, double sam_radius,
                             CounterRng& rng, LocalTrace* trace) {
  for (double lr : step_lrs) {
    const auto ids = draw_batch(task, client, batch, rng);
    const GradResult g1 = task.loss_grad(client, theta, ids);
    const ParamVec eps = sam_perturb(g1.grad, sam_radius);
    const GradResult g2 = task.loss_grad(client, axpy(1.0, eps, theta), ids);
    record(trace, theta, g2.grad, lr);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g2.grad[i];
  }
  record_final(trace, theta);
  return theta;
}

ParamVec local_update_mofedsam(const TaskSpec& task, int client,
                               ParamVec theta, const ParamVec& delta_prev,
                               double mom_beta, double sam_radius,
                               const std::vector<double>& step_lrs,
                               const BatchSpec& batch, CounterRng& rng,
                               LocalTrace* trace) {
  check_same_dim(theta, delta_prev, "local_update_mofedsam");
  for (double lr : step_lrs) {
    const auto ids = draw_batch(task, client, batch, rng);
    const GradResult g1 = task.loss_grad(client, theta, ids);
    const ParamVec eps = sam_perturb(g1.grad, sam_radius);
    const GradResult g2 = task.loss_grad(client, axpy(1.0, eps, theta), ids);
    record(trace, theta, g2.grad, lr);
    for (std::size_t i = 0; i < theta.size(); ++i)
      theta[i] -=
          lr * (mom_beta * g2.grad[i] + (1.0 - mom_beta) * delta_prev[i]);
  }
  record_final(trace, theta);
  return theta;
}

ScaffoldResult local_update_scaffold(const TaskSpec& task, int client,
                                     ParamVec theta, const ParamVec& ctrl_i,
                                     const ParamVec& ctrl_global,
                                     const std::vector<double>& step_lrs,
                                     const BatchSpec& batch, CounterRng& rng,
                                     LocalTrace* trace) {
  check_same_dim(ctrl_i, ctrl_global, "local_update_scaffold");
  const ParamVec theta_received = theta;
  double sum_eta = 0.0;
  for (double lr : step_lrs) {
    const auto ids = draw_batch(task, client, batch, rng);
    const GradResult g = task.loss_grad(client, theta, ids);
    record(trace, theta, g.grad, lr);
    for (std::size_t i = 0; i < theta.size(); ++i)
      theta[i] -= lr * (g.grad[i] - ctrl_i[i] + ctrl_global[i]);
    sum_eta += lr;
  }
  record_final(trace, theta);
  ScaffoldResult out;
  out.ctrl_next = control_update(CtrlOption::option2, task, client,
                                 theta_received, theta, ctrl_i, ctrl_global,
                                 sum_eta);
  out.theta = std::move(theta);
  return out;
}

ParamVec local_update_fedmoswa(const TaskSpec& task, int client,
                               ParamVec theta, const ParamVec& ctrl_i,
                               const ParamVec& sctl,
                               const std::vector<double>& step_lrs,
                               const BatchSpec& batch, CounterRng& rng,
                               LocalTrace* trace) {
  check_same_dim(ctrl_i, sctl, "local_update_fedmoswa");
  for (double lr : step_lrs) {
    const auto ids = draw_batch(task, client, batch, rng);
    const GradResult g = task.loss_grad(client, theta, ids);
    record(trace, theta, g.grad, lr);
    for (std::size_t i = 0; i < theta.size(); ++i)
      theta[i] -= lr * (g.grad[i] - ctrl_i[i] + sctl[i]);
  }
  record_final(trace, theta);
  return theta;
}

ParamVec control_update(CtrlOption option, const TaskSpec& task, int client,
                        const ParamVec& theta_received,
                        const ParamVec& theta_end, const ParamVec& ctrl_i,
                        const ParamVec& sctl, double sum_eta) {
  if (option == CtrlOption::option1) {
    return task.client_full(client, theta_received).grad;
  }
  if (sum_eta <= 0.0) fail("control_update: option II needs sum_eta > 0");
  // c_i - sctl + (theta_received - theta_end) / sum_eta
  ParamVec out(ctrl_i.size());
  const double inv = 1.0 / sum_eta;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = ctrl_i[i] - sctl[i] + inv * (theta_received[i] - theta_end[i]);
  return out;
}

ParamVec server_control_update(const ParamVec& sctl,
                               const std::vector<ParamVec>& ctrl_deltas,
                               double gamma) {
  if (ctrl_deltas.empty()) fail("server_control_update: empty participation");
  const ParamVec mean_delta = mean_vecs(ctrl_deltas);
  return axpy(gamma, mean_delta, sctl);
}

ParamVec server_aggregate(const ParamVec& theta_prev,
                          const std::vector<ParamVec>& client_models,
                          double alpha) {
  if (client_models.empty()) fail("server_aggregate: empty client list");
  if (alpha < 0.0) fail("server_aggregate: alpha must be >= 0");
  ParamVec v = mean_vecs(client_models);
  if (alpha == 1.0) return v;
  check_same_dim(v, theta_prev, "server_aggregate");
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = theta_prev[i] + alpha * (v[i] - theta_prev[i]);
  return v;
}

}  // namespace fedlab
