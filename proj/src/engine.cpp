#include "fedlab/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

namespace fedlab {

TaskSpec TaskConfig::build(std::uint64_t seed) const {
  switch (kind) {
    case TaskKind::quadratic:
      return make_quadratic(dim, clients, samples_per_client, hetero_knob,
                            noise_sigma, seed, mu, beta);
    case TaskKind::logreg:
      return make_logreg(dim, clients, samples_per_client, dirichlet_conc,
                         seed);
    case TaskKind::mlp:
      return make_mlp(dim, hidden, clients, samples_per_client, dirichlet_conc,
                      seed);
  }
  fail("unreachable");
}

int RunConfig::effective_participation() const {
  if (participation > 0) return participation;
  const int s = static_cast<int>(
      std::lround(participation_rate * static_cast<double>(task.clients)));
  return std::max(1, std::min(task.clients, s));
}

void RunConfig::validate() const {
  require(rounds >= 0, "run.rounds must be >= 0");
  require(task.clients >= 1, "task.clients must be >= 1");
  const int s = effective_participation();
  require(s >= 1 && s <= task.clients, "participation must be in [1, m]");
  require(batch_size >= 0, "run.batch_size must be >= 0");
  require(threads >= 1, "run.threads must be >= 1");
  sched.validate();
  algo.validate();
}

std::vector<int> sample_clients(int m, int s, CounterRng& rng) {
  require(s >= 1 && s <= m, "sample_clients: need 1 <= s <= m");
  std::vector<int> pool(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < s; ++i) {
    const int j =
        i + static_cast<int>(rng.below(static_cast<std::uint64_t>(m - i)));
    std::swap(pool[static_cast<std::size_t>(i)],
              pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(s));
  std::sort(pool.begin(), pool.end());
  return pool;
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, count);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::mutex err_mutex;
  std::exception_ptr first_error;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < count; i += workers) fn(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

double measure_client_drift(const std::vector<LocalTrace>& traces,
                            const ParamVec& theta_prev) {
  if (traces.empty()) fail("measure_client_drift: no trajectories retained");
  double acc = 0.0;
  std::size_t terms = 0;
  for (const LocalTrace& tr : traces) {
    // thetas holds k = 0..K; drift counts k = 1..K
    for (std::size_t k = 1; k < tr.thetas.size(); ++k) {
      acc += sq_dist(tr.thetas[k], theta_prev);
      ++terms;
    }
  }
  require(terms > 0, "measure_client_drift: empty trajectories");
  return acc / static_cast<double>(terms);
}

double measure_control_lag(const std::vector<ClientState>& clients,
                           const TaskSpec& task, const ParamVec& theta_star) {
  require(!clients.empty(), "measure_control_lag: no clients");
  double acc = 0.0;
  for (std::size_t j = 0; j < clients.size(); ++j) {
    const ParamVec g =
        task.client_full(static_cast<int>(j), theta_star).grad;
    const ParamVec& c = clients[j].ctrl;
    require(c.size() == g.size(), "measure_control_lag: missing controls");
    acc += sq_dist(c, g);
  }
  return acc / static_cast<double>(clients.size());
}

Simulation::Simulation(const RunConfig& cfg)
    : cfg_(cfg), task_(cfg.task.build(cfg.seed)) {
  init();
}

Simulation::Simulation(const RunConfig& cfg, TaskSpec task)
    : cfg_(cfg), task_(std::move(task)) {
  init();
}

void Simulation::init() {
  cfg_.validate();
  task_.validate();
  server_.alg = cfg_.algorithm;
  server_.theta = task_.initial_theta();
  server_.round = 0;
  clients_.assign(static_cast<std::size_t>(task_.clients), ClientState{});
  if (uses_controls(cfg_.algorithm)) {
    server_.sctl.assign(static_cast<std::size_t>(task_.dim), 0.0);
    for (int i = 0; i < task_.clients; ++i) {
      ClientState& c = clients_[static_cast<std::size_t>(i)];
      if (cfg_.algo.ctrl_init_grad)
        c.ctrl = task_.client_full(i, server_.theta).grad;
      else
        c.ctrl.assign(static_cast<std::size_t>(task_.dim), 0.0);
    }
  }
  if (cfg_.algo.swa_shadow) {
    server_.swa_running = server_.theta;
    server_.swa_count = 1;
  }
  delta_prev_.assign(static_cast<std::size_t>(task_.dim), 0.0);
}

void Simulation::run_round() {
  const int t = server_.round;
  const int m = task_.clients;
  const int s = cfg_.effective_participation();
  const Algorithm alg = cfg_.algorithm;

  // FedAvg, FedSAM, MoFedSAM and SCAFFOLD run a constant within-round LR and
  // plain model averaging; the SWA algorithms use the cyclical schedule and
  // the server EMA coefficient.
  const bool swa = uses_swa_schedule(alg);
  const double alpha = swa ? cfg_.algo.alpha : 1.0;
  const int K = cfg_.sched.local_iters;
  std::vector<double> step_lrs(static_cast<std::size_t>(K));
  if (swa) {
    const LrSchedule rs = for_round(cfg_.sched, t);
    for (int k = 0; k < K; ++k)
      step_lrs[static_cast<std::size_t>(k)] = local_lr(rs, k);
  } else {
    const double base = round_base_lr(cfg_.sched, t);
    for (int k = 0; k < K; ++k) step_lrs[static_cast<std::size_t>(k)] = base;
  }
  double sum_eta = 0.0;
  for (double lr : step_lrs) sum_eta += lr;

  CounterRng sampler =
      CounterRng::derive({cfg_.seed, stream::client_sampling,
                          static_cast<std::uint64_t>(t)});
  const std::vector<int> selected = sample_clients(m, s, sampler);

  const ParamVec theta_prev = server_.theta;
  BatchSpec batch;
  batch.batch_size = cfg_.batch_size;
  batch.exclude_client = cfg_.exclude_client;
  batch.exclude_id = cfg_.exclude_sample;

  std::vector<ParamVec> models(selected.size());
  std::vector<ParamVec> ctrl_next(uses_controls(alg) ? selected.size() : 0);
  std::vector<LocalTrace> traces(cfg_.diagnostics ? selected.size() : 0);

  parallel_for(
      static_cast<int>(selected.size()), cfg_.threads, [&](int idx) {
        const int client = selected[static_cast<std::size_t>(idx)];
        CounterRng rng = CounterRng::derive(
            {cfg_.seed, stream::client_batches,
             static_cast<std::uint64_t>(client),
             static_cast<std::uint64_t>(t)});
        LocalTrace* trace =
            cfg_.diagnostics ? &traces[static_cast<std::size_t>(idx)] : nullptr;
        switch (alg) {
          case Algorithm::fedavg:
          case Algorithm::fedswa:
            models[static_cast<std::size_t>(idx)] = local_update_fedavg(
                task_, client, theta_prev, step_lrs, batch, rng, trace);
            break;
          case Algorithm::fedsam:
            models[static_cast<std::size_t>(idx)] = local_update_fedsam(
                task_, client, theta_prev, step_lrs, batch,
                cfg_.algo.sam_radius, rng, trace);
            break;
          case Algorithm::mofedsam:
            models[static_cast<std::size_t>(idx)] = local_update_mofedsam(
                task_, client, theta_prev, delta_prev_, cfg_.algo.mom_beta,
                cfg_.algo.sam_radius, step_lrs, batch, rng, trace);
            break;
          case Algorithm::scaffold: {
            ScaffoldResult r = local_update_scaffold(
                task_, client, theta_prev,
                clients_[static_cast<std::size_t>(client)].ctrl, server_.sctl,
                step_lrs, batch, rng, trace);
            models[static_cast<std::size_t>(idx)] = std::move(r.theta);
            ctrl_next[static_cast<std::size_t>(idx)] = std::move(r.ctrl_next);
            break;
          }
          case Algorithm::fedmoswa: {
            models[static_cast<std::size_t>(idx)] = local_update_fedmoswa(
                task_, client, theta_prev,
                clients_[static_cast<std::size_t>(client)].ctrl, server_.sctl,
                step_lrs, batch, rng, trace);
            ctrl_next[static_cast<std::size_t>(idx)] = control_update(
                cfg_.algo.ctrl_option, task_, client, theta_prev,
                models[static_cast<std::size_t>(idx)],
                clients_[static_cast<std::size_t>(client)].ctrl, server_.sctl,
                sum_eta);
            break;
          }
        }
      });

  // Serial reductions, client index ascending (selected is sorted).
  if (uses_controls(alg) && !cfg_.algo.freeze_ctrl) {
    if (alg == Algorithm::scaffold) {
      // c <- c + (1/m) sum_{i in S} (c_i^+ - c_i)
      ParamVec shift(static_cast<std::size_t>(task_.dim), 0.0);
      for (std::size_t idx = 0; idx < selected.size(); ++idx) {
        const int client = selected[idx];
        const ParamVec& old_c = clients_[static_cast<std::size_t>(client)].ctrl;
        for (int j = 0; j < task_.dim; ++j)
          shift[static_cast<std::size_t>(j)] +=
              ctrl_next[idx][static_cast<std::size_t>(j)] -
              old_c[static_cast<std::size_t>(j)];
      }
      const double inv_m = 1.0 / static_cast<double>(m);
      for (int j = 0; j < task_.dim; ++j)
        server_.sctl[static_cast<std::size_t>(j)] +=
            inv_m * shift[static_cast<std::size_t>(j)];
    } else {
      // m <- m + gamma * mean_{i in S} (c_i^+ - m)
      std::vector<ParamVec> deltas(selected.size());
      for (std::size_t idx = 0; idx < selected.size(); ++idx)
        deltas[idx] = sub(ctrl_next[idx], server_.sctl);
      server_.sctl =
          server_control_update(server_.sctl, deltas, cfg_.algo.gamma);
    }
    for (std::size_t idx = 0; idx < selected.size(); ++idx)
      clients_[static_cast<std::size_t>(selected[idx])].ctrl =
          std::move(ctrl_next[idx]);
  }

  ParamVec theta_new = server_aggregate(theta_prev, models, alpha);

  if (alg == Algorithm::mofedsam) {
    // gradient-scale estimate of the server direction for the next round
    const double scale = 1.0 / (sum_eta * alpha);
    for (int j = 0; j < task_.dim; ++j)
      delta_prev_[static_cast<std::size_t>(j)] =
          scale * (theta_prev[static_cast<std::size_t>(j)] -
                   theta_new[static_cast<std::size_t>(j)]);
  }

  if (!all_finite(theta_new)) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "non-finite parameters after round %d (alg=%s, |S|=%zu)",
                  t + 1, to_string(alg).c_str(), selected.size());
    throw DivergenceError(buf);
  }

  server_.theta = std::move(theta_new);
  server_.round = t + 1;

  if (server_.swa_running) {
    // theta_swa <- (theta_swa * n_models + theta) / (n_models + 1)
    ParamVec& avg = *server_.swa_running;
    const double nm = static_cast<double>(server_.swa_count);
    for (std::size_t j = 0; j < avg.size(); ++j)
      avg[j] = (avg[j] * nm + server_.theta[j]) / (nm + 1.0);
    server_.swa_count += 1;
  }

  last_selected_ = selected;
  last_theta_received_ = theta_prev;
  last_sum_eta_ = sum_eta;
  if (cfg_.diagnostics) {
    last_traces_ = std::move(traces);
    last_drift_ = measure_client_drift(last_traces_, theta_prev);
    if (uses_controls(alg)) {
      last_ctrl_next_.resize(selected.size());
      for (std::size_t idx = 0; idx < selected.size(); ++idx)
        last_ctrl_next_[idx] =
            clients_[static_cast<std::size_t>(selected[idx])].ctrl;
    }
  } else {
    last_traces_.clear();
    last_ctrl_next_.clear();
    last_drift_ = std::nan("");
  }
}

RoundRecord Simulation::measure(double wall_ms) const {
  RoundRecord r;
  r.round = server_.round;
  const GradResult g = task_.global_full(server_.theta);
  r.train_loss = g.loss;
  r.grad_norm = l2_norm(g.grad);
  r.dist_to_opt = task_.optimum
                      ? l2_norm(sub(server_.theta, *task_.optimum))
                      : std::nan("");
  r.client_drift = (cfg_.diagnostics && server_.round > 0) ? last_drift_
                                                           : std::nan("");
  if (uses_controls(cfg_.algorithm) && task_.optimum)
    r.control_lag = measure_control_lag(clients_, task_, *task_.optimum);
  else
    r.control_lag = std::nan("");
  r.sigma_g = measure_sigma_g(task_, server_.theta);
  r.wall_ms = wall_ms;
  return r;
}

RunMetrics run_experiment(const RunConfig& cfg) {
  RunMetrics out;
  try {
    Simulation sim(cfg);
    out.records.reserve(static_cast<std::size_t>(cfg.rounds) + 1);
    out.records.push_back(sim.measure(0.0));
    for (int t = 0; t < cfg.rounds; ++t) {
      const auto t0 = std::chrono::steady_clock::now();
      sim.run_round();
      const auto t1 = std::chrono::steady_clock::now();
      const double ms =
          std::chrono::duration<double, std::milli>(t1 - t0).count();
      out.records.push_back(sim.measure(ms));
    }
    out.final_theta = sim.theta();
  } catch (const DivergenceError& e) {
    out.aborted = true;
    out.abort_reason = e.what();
  }
  return out;
}

namespace {

void append_field(std::string& s, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  s += buf;
}

}  // namespace

std::string metrics_to_csv(const RunMetrics& metrics) {
  std::string s =
      "round,train_loss,dist_to_opt,grad_norm,client_drift,control_lag,"
      "sigma_g,wall_ms\n";
  for (const RoundRecord& r : metrics.records) {
    s += std::to_string(r.round);
    s += ',';
    append_field(s, r.train_loss);
    s += ',';
    append_field(s, r.dist_to_opt);
    s += ',';
    append_field(s, r.grad_norm);
    s += ',';
    append_field(s, r.client_drift);
    s += ',';
    append_field(s, r.control_lag);
    s += ',';
    append_field(s, r.sigma_g);
    s += ',';
    append_field(s, r.wall_ms);
    s += '\n';
  }
  return s;
}

}  // namespace fedlab
