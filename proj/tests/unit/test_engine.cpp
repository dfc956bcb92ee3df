#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fedlab/engine.hpp"

using namespace fedlab;

namespace {

RunConfig small_quadratic_cfg() {
  RunConfig cfg;
  cfg.task.kind = TaskKind::quadratic;
  cfg.task.dim = 5;
  cfg.task.clients = 6;
  cfg.task.samples_per_client = 12;
  cfg.task.hetero_knob = 1.0;
  cfg.task.noise_sigma = 0.2;
  cfg.algorithm = Algorithm::fedswa;
  cfg.sched.eta_l = 0.05;
  cfg.sched.rho = 0.5;
  cfg.sched.local_iters = 6;
  cfg.rounds = 8;
  cfg.participation = 3;
  cfg.batch_size = 4;
  cfg.seed = 2024;
  return cfg;
}

std::string strip_wall(const std::string& csv) {
  std::string out;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t end = csv.find('\n', start);
    if (end == std::string::npos) end = csv.size();
    const std::string line = csv.substr(start, end - start);
    const std::size_t cut = line.rfind(',');
    out += line.substr(0, cut);
    out += '\n';
    start = end + 1;
  }
  return out;
}

}  // namespace

TEST_CASE("client sampling is uniform without replacement") {
  const int m = 10, s = 3, rounds = 10000;
  std::vector<int> hits(m, 0);
  for (int t = 0; t < rounds; ++t) {
    CounterRng rng =
        CounterRng::derive({5, stream::client_sampling,
                            static_cast<std::uint64_t>(t)});
    const std::vector<int> sel = sample_clients(m, s, rng);
    REQUIRE(static_cast<int>(sel.size()) == s);
    for (std::size_t i = 1; i < sel.size(); ++i) REQUIRE(sel[i] > sel[i - 1]);
    for (int c : sel) ++hits[c];
  }
  for (int c = 0; c < m; ++c) {
    const double freq = hits[c] / static_cast<double>(rounds);
    CHECK(freq > 0.28);
    CHECK(freq < 0.32);
  }
}

TEST_CASE("replay determinism: identical config gives identical metrics") {
  const RunConfig cfg = small_quadratic_cfg();
  const RunMetrics a = run_experiment(cfg);
  const RunMetrics b = run_experiment(cfg);
  REQUIRE(a.records.size() == b.records.size());
  CHECK(a.final_theta == b.final_theta);
  CHECK(strip_wall(metrics_to_csv(a)) == strip_wall(metrics_to_csv(b)));
}

TEST_CASE("thread count does not change results") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.algorithm = Algorithm::fedmoswa;
  cfg.diagnostics = true;
  std::string first;
  for (int threads : {1, 2, 8}) {
    cfg.threads = threads;
    const std::string csv = strip_wall(metrics_to_csv(run_experiment(cfg)));
    if (first.empty())
      first = csv;
    else
      CHECK(csv == first);
  }
}

TEST_CASE("T = 0 leaves only the initial record") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.rounds = 0;
  const RunMetrics m = run_experiment(cfg);
  REQUIRE(m.records.size() == 1);
  CHECK(m.records[0].round == 0);
  CHECK(std::isnan(m.records[0].client_drift));
}

TEST_CASE("record count is rounds + 1 and train_loss is reproducible") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.rounds = 5;
  const RunMetrics m = run_experiment(cfg);
  REQUIRE(m.records.size() == 6);
  // recompute the final loss from final_theta post hoc
  const TaskSpec task = cfg.task.build(cfg.seed);
  CHECK(std::fabs(task.global_loss(m.final_theta) -
                  m.records.back().train_loss) <= 1e-12);
}

TEST_CASE("full-participation fedavg round equals the mean of local runs") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.algorithm = Algorithm::fedavg;
  cfg.participation = cfg.task.clients;
  cfg.rounds = 1;
  Simulation sim(cfg);
  const TaskSpec& task = sim.task();
  const ParamVec theta0 = sim.theta();
  sim.run_round();

  // replicate by hand: every client runs K constant-LR steps from theta0
  const double base = round_base_lr(cfg.sched, 0);
  const std::vector<double> lrs(static_cast<std::size_t>(cfg.sched.local_iters),
                                base);
  BatchSpec batch;
  batch.batch_size = cfg.batch_size;
  std::vector<ParamVec> models;
  for (int c = 0; c < cfg.task.clients; ++c) {
    CounterRng rng = CounterRng::derive(
        {cfg.seed, stream::client_batches, static_cast<std::uint64_t>(c), 0});
    models.push_back(local_update_fedavg(task, c, theta0, lrs, batch, rng));
  }
  CHECK(sim.theta() == mean_vecs(models));
}

TEST_CASE("baseline algorithms ignore alpha and use plain averaging") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.algorithm = Algorithm::fedavg;
  cfg.rounds = 4;
  cfg.algo.alpha = 1.5;  // must have no effect on fedavg
  const RunMetrics a = run_experiment(cfg);
  cfg.algo.alpha = 1.0;
  const RunMetrics b = run_experiment(cfg);
  CHECK(a.final_theta == b.final_theta);
}

TEST_CASE("divergence aborts with diagnostics instead of clamping") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.sched.eta_l = 1e6;  // way past 2/beta: guaranteed blow-up
  cfg.sched.rho = 1.0;
  cfg.rounds = 400;
  const RunMetrics m = run_experiment(cfg);
  CHECK(m.aborted);
  CHECK(m.abort_reason.find("non-finite") != std::string::npos);
}

TEST_CASE("client drift measurement") {
  SUBCASE("zero steps give zero drift") {
    std::vector<LocalTrace> traces(2);
    const ParamVec start{1.0, 2.0};
    for (auto& tr : traces) tr.thetas = {start, start};  // K = 1, no movement
    CHECK(measure_client_drift(traces, start) == 0.0);
  }
  SUBCASE("homogeneous clients with exact gradients have equal terms") {
    RunConfig cfg = small_quadratic_cfg();
    cfg.task.hetero_knob = 0.0;
    cfg.task.noise_sigma = 0.0;
    cfg.participation = cfg.task.clients;
    cfg.diagnostics = true;
    cfg.rounds = 1;
    Simulation sim(cfg);
    sim.run_round();
    const auto& traces = sim.last_traces();
    REQUIRE(traces.size() == static_cast<std::size_t>(cfg.task.clients));
    const double first =
        measure_client_drift({traces[0]}, sim.last_theta_received());
    for (const LocalTrace& tr : traces)
      CHECK(measure_client_drift({tr}, sim.last_theta_received()) ==
            doctest::Approx(first).epsilon(1e-12));
  }
  SUBCASE("fedmoswa drifts less than fedavg on heterogeneous quadratics") {
    RunConfig cfg = small_quadratic_cfg();
    cfg.task.hetero_knob = 2.0;
    cfg.task.noise_sigma = 0.0;
    cfg.participation = cfg.task.clients;
    cfg.diagnostics = true;
    cfg.rounds = 12;
    cfg.sched.rho = 1.0;
    cfg.algo.alpha = 1.0;

    cfg.algorithm = Algorithm::fedavg;
    const RunMetrics avg = run_experiment(cfg);
    cfg.algorithm = Algorithm::fedmoswa;
    const RunMetrics mo = run_experiment(cfg);
    for (std::size_t t = 5; t < avg.records.size(); ++t)
      CHECK(mo.records[t].client_drift <= avg.records[t].client_drift);
  }
}

TEST_CASE("control lag measurement") {
  SUBCASE("zero when controls equal the gradients at the optimum") {
    const TaskSpec t = make_quadratic(3, 4, 8, 1.0, 0.0, 12);
    std::vector<ClientState> clients(4);
    for (int i = 0; i < 4; ++i)
      clients[i].ctrl = t.client_full(i, *t.optimum).grad;
    CHECK(measure_control_lag(clients, t, *t.optimum) < 1e-24);
  }
  SUBCASE("zero controls on identity curvature: mean squared center spread") {
    // A = I, theta* = mean(b); C = (1/m) sum ||b_j - bbar||^2
    const TaskSpec t =
        make_quadratic_explicit({{1.0}, {1.0}}, {{0.0}, {2.0}}, 3, 0.0, 4);
    std::vector<ClientState> clients(2);
    clients[0].ctrl = {0.0};
    clients[1].ctrl = {0.0};
    CHECK(measure_control_lag(clients, t, *t.optimum) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("full participation with gamma=1 lags less than 10% participation") {
    RunConfig cfg = small_quadratic_cfg();
    cfg.task.clients = 10;
    cfg.task.hetero_knob = 1.5;
    cfg.algorithm = Algorithm::fedmoswa;
    cfg.rounds = 15;

    cfg.participation = 10;
    cfg.algo.gamma = 1.0;
    const RunMetrics full = run_experiment(cfg);
    cfg.participation = 1;
    cfg.algo.gamma = 0.2;
    const RunMetrics partial = run_experiment(cfg);
    for (std::size_t t = 3; t < full.records.size(); ++t)
      CHECK(full.records[t].control_lag <= partial.records[t].control_lag);
  }
}

TEST_CASE("controls start at zero, or at the initial gradients when asked") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.algorithm = Algorithm::fedmoswa;

  Simulation zero_init(cfg);
  for (const ClientState& c : zero_init.clients())
    CHECK(c.ctrl == ParamVec(5, 0.0));

  cfg.algo.ctrl_init_grad = true;
  Simulation grad_init(cfg);
  for (int i = 0; i < cfg.task.clients; ++i) {
    const ParamVec expected =
        grad_init.task().client_full(i, grad_init.theta()).grad;
    CHECK(grad_init.clients()[static_cast<std::size_t>(i)].ctrl == expected);
  }
}

TEST_CASE("swa shadow tracker never touches the trained model") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.rounds = 6;
  const RunMetrics plain = run_experiment(cfg);
  cfg.algo.swa_shadow = true;
  const RunMetrics shadowed = run_experiment(cfg);
  CHECK(plain.final_theta == shadowed.final_theta);

  Simulation sim(cfg);
  for (int t = 0; t < 3; ++t) sim.run_round();
  REQUIRE(sim.server().swa_running.has_value());
  // running average of theta_0..theta_3 (4 models)
  CHECK(sim.server().swa_count == 4);
}

TEST_CASE("single-client fedmoswa with gamma=1 matches fedswa after round 1") {
  // option I, exact gradients: c_1 = sctl after the first update, so the
  // corrections cancel and the trajectories coincide from round 2 on
  RunConfig cfg;
  cfg.task.kind = TaskKind::quadratic;
  cfg.task.dim = 4;
  cfg.task.clients = 1;
  cfg.task.samples_per_client = 6;
  cfg.task.hetero_knob = 1.0;
  cfg.task.noise_sigma = 0.0;
  cfg.batch_size = 0;  // full batch
  cfg.participation = 1;
  cfg.sched.eta_l = 0.08;
  cfg.sched.rho = 0.3;
  cfg.sched.local_iters = 5;
  cfg.rounds = 6;
  cfg.algo.gamma = 1.0;
  cfg.algo.ctrl_option = CtrlOption::option1;

  cfg.algorithm = Algorithm::fedswa;
  const RunMetrics swa = run_experiment(cfg);
  cfg.algorithm = Algorithm::fedmoswa;
  const RunMetrics mo = run_experiment(cfg);
  for (std::size_t j = 0; j < swa.final_theta.size(); ++j)
    CHECK(mo.final_theta[j] ==
          doctest::Approx(swa.final_theta[j]).epsilon(1e-12));
}

TEST_CASE("frozen zero controls make fedmoswa match fedavg exactly") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.rounds = 6;
  cfg.sched.rho = 1.0;
  cfg.algo.alpha = 1.0;
  cfg.algo.freeze_ctrl = true;
  cfg.algorithm = Algorithm::fedmoswa;
  const RunMetrics frozen = run_experiment(cfg);
  cfg.algorithm = Algorithm::fedavg;
  cfg.algo.freeze_ctrl = false;
  const RunMetrics avg = run_experiment(cfg);
  CHECK(frozen.final_theta == avg.final_theta);
}

TEST_CASE("scaffold converges where fedavg stalls at the drift floor") {
  RunConfig cfg;
  cfg.task.dim = 8;
  cfg.task.clients = 8;
  cfg.task.samples_per_client = 5;
  cfg.task.hetero_knob = 2.0;
  cfg.task.noise_sigma = 0.0;
  cfg.batch_size = 0;
  cfg.participation = 8;
  cfg.rounds = 500;
  cfg.sched.eta_l = 1.0 / 30.0;
  cfg.sched.rho = 1.0;
  cfg.sched.round_decay = 1.0;
  cfg.sched.local_iters = 10;
  cfg.seed = 808;

  cfg.algorithm = Algorithm::scaffold;
  Simulation sc(cfg);
  for (int t = 0; t < cfg.rounds; ++t) sc.run_round();
  CHECK(l2_norm(sub(sc.theta(), *sc.task().optimum)) < 1e-8);

  cfg.algorithm = Algorithm::fedavg;
  Simulation avg(cfg);
  for (int t = 0; t < cfg.rounds; ++t) avg.run_round();
  CHECK(l2_norm(sub(avg.theta(), *avg.task().optimum)) > 1e-3);
}

TEST_CASE("final loss sits in a sigma^2-scaled band above the optimum") {
  // multi-seed: the steady-state excess loss is positive and scales with the
  // stochastic-gradient variance; 0.01 sigma^2 d holds with a 10x margin at
  // this step size
  for (double sigma : {0.2, 0.4}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      RunConfig cfg;
      cfg.task.dim = 6;
      cfg.task.clients = 6;
      cfg.task.samples_per_client = 50;
      cfg.task.hetero_knob = 1.0;
      cfg.task.noise_sigma = sigma;
      cfg.batch_size = 10;
      cfg.participation = 6;
      cfg.rounds = 150;
      cfg.sched.eta_l = 0.1;
      cfg.sched.rho = 0.1;
      cfg.sched.local_iters = 8;
      cfg.algorithm = Algorithm::fedmoswa;
      cfg.seed = seed * 17;
      const RunMetrics m = run_experiment(cfg);
      const TaskSpec task = cfg.task.build(cfg.seed);
      const double excess =
          m.records.back().train_loss - task.global_loss(*task.optimum);
      CHECK(excess >= -1e-12);
      CHECK(excess <= 0.01 * sigma * sigma * cfg.task.dim);
    }
  }
}

TEST_CASE("correction-sum identity under gamma=1 and full participation") {
  // mean over clients of (-c_i + sctl) equals sctl - mean(c_i); with gamma=1
  // and everyone participating it vanishes right after the first round's
  // control updates
  RunConfig cfg = small_quadratic_cfg();
  cfg.algorithm = Algorithm::fedmoswa;
  cfg.participation = cfg.task.clients;
  cfg.algo.gamma = 1.0;
  cfg.rounds = 5;
  Simulation sim(cfg);
  for (int t = 0; t < cfg.rounds; ++t) {
    sim.run_round();
    std::vector<ParamVec> ctrls;
    for (const ClientState& c : sim.clients()) ctrls.push_back(c.ctrl);
    const double residual =
        l2_norm(sub(sim.server().sctl, mean_vecs(ctrls)));
    CHECK(residual <= 1e-12);
  }
}

TEST_CASE("fedmoswa's limit is theta* regardless of heterogeneity; fedavg's "
          "floor grows with it") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.task.noise_sigma = 0.0;
  cfg.participation = cfg.task.clients;
  cfg.batch_size = 0;
  cfg.rounds = 400;
  cfg.sched.eta_l = 0.03;
  cfg.sched.rho = 0.1;
  cfg.sched.round_decay = 1.0;
  cfg.sched.local_iters = 10;

  double prev_floor = -1.0;
  for (double knob : {0.5, 2.0}) {
    cfg.task.hetero_knob = knob;
    cfg.algorithm = Algorithm::fedmoswa;
    Simulation mo(cfg);
    for (int t = 0; t < cfg.rounds; ++t) mo.run_round();
    CHECK(l2_norm(sub(mo.theta(), *mo.task().optimum)) < 1e-8);

    cfg.algorithm = Algorithm::fedavg;
    Simulation avg(cfg);
    for (int t = 0; t < cfg.rounds; ++t) avg.run_round();
    const double floor = l2_norm(sub(avg.theta(), *avg.task().optimum));
    CHECK(floor > prev_floor);  // ordering only, not magnitudes
    prev_floor = floor;
  }
  CHECK(prev_floor > 1e-4);
}

TEST_CASE("validation rejects malformed run configs") {
  RunConfig cfg = small_quadratic_cfg();
  cfg.participation = 99;  // > m
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_quadratic_cfg();
  cfg.rounds = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_quadratic_cfg();
  cfg.sched.rho = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
