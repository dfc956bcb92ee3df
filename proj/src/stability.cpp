#include "fedlab/stability.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fedlab {

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::n: return "n";
    case SweepAxis::m: return "m";
    case SweepAxis::sigma_g: return "sigma_g";
    case SweepAxis::K: return "K";
    case SweepAxis::T: return "T";
  }
  return "?";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "n") return SweepAxis::n;
  if (s == "m") return SweepAxis::m;
  if (s == "sigma_g") return SweepAxis::sigma_g;
  if (s == "K") return SweepAxis::K;
  if (s == "T") return SweepAxis::T;
  fail("unknown sweep axis: " + s);
}

TwinRunResult twin_run(const RunConfig& cfg, int perturb_client,
                       std::int64_t perturb_sample, std::uint64_t perturb_seed,
                       int heldout) {
  TwinRunResult out;

  TaskSpec task = cfg.task.build(cfg.seed);
  TaskSpec twin =
      perturb_one_sample(task, perturb_client, perturb_sample, perturb_seed);

  Simulation sim_a(cfg, task);
  Simulation sim_b(cfg, std::move(twin));

  out.sigma_g0 = measure_sigma_g(sim_a.task(), sim_a.theta());
  const ParamVec theta0 = sim_a.theta();

  out.gap_series.reserve(static_cast<std::size_t>(cfg.rounds) + 1);
  out.gap_series.push_back(l2_norm(sub(sim_a.theta(), sim_b.theta())));
  out.radius_visited = 0.0;
  for (int t = 0; t < cfg.rounds; ++t) {
    sim_a.run_round();
    sim_b.run_round();
    out.gap_series.push_back(l2_norm(sub(sim_a.theta(), sim_b.theta())));
    out.radius_visited =
        std::max({out.radius_visited, l2_norm(sub(sim_a.theta(), theta0)),
                  l2_norm(sub(sim_b.theta(), theta0))});
  }
  out.gap_param = out.gap_series.back();

  // sup_z surrogate: max loss difference over a fixed held-out pool drawn
  // from the task's own generators, clients round-robin.
  if (heldout > 0) {
    CounterRng pool_rng = CounterRng::derive({cfg.seed, stream::heldout});
    double worst = 0.0;
    double max_dist = 0.0;
    for (int i = 0; i < heldout; ++i) {
      const int client = i % sim_a.task().clients;
      const Sample z = sim_a.task().draw_sample(client, pool_rng);
      const double la = sim_a.task().sample_loss(sim_a.theta(), z, client);
      const double lb = sim_a.task().sample_loss(sim_b.theta(), z, client);
      worst = std::max(worst, std::fabs(la - lb));
      if (sim_a.task().kind == TaskKind::quadratic) {
        ParamVec x = z.x;
        max_dist = std::max(max_dist, l2_norm(sub(x, theta0)));
      }
    }
    out.gap_loss = worst;
    out.heldout_max_dist = max_dist;
  }
  return out;
}

namespace {

RunConfig apply_axis(const RunConfig& base, SweepAxis axis, double value) {
  RunConfig cfg = base;
  switch (axis) {
    case SweepAxis::n:
      cfg.task.samples_per_client = static_cast<int>(value);
      break;
    case SweepAxis::m:
      cfg.task.clients = static_cast<int>(value);
      if (base.participation > 0) cfg.participation = static_cast<int>(value);
      break;
    case SweepAxis::sigma_g:
      cfg.task.hetero_knob = value;
      break;
    case SweepAxis::K:
      cfg.sched.local_iters = static_cast<int>(value);
      break;
    case SweepAxis::T:
      cfg.rounds = static_cast<int>(value);
      break;
  }
  return cfg;
}

}  // namespace

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "fit_slope: need >= 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0.0, "fit_slope: degenerate x");
  return sxy / sxx;
}

namespace {

// Slope for a report: log-log against the axis value, except the sigma_g
// axis which is linear against measured sigma_g (the sweep includes 0).
// Single-value sweeps (level comparisons) have no slope.
double report_slope(SweepAxis axis, const std::vector<double>& values,
                    const std::vector<double>& mean_gap,
                    const std::vector<double>& mean_sigma) {
  if (values.size() < 2) return std::nan("");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (axis == SweepAxis::sigma_g) {
      x.push_back(mean_sigma[i]);
      y.push_back(mean_gap[i]);
    } else {
      x.push_back(std::log(values[i]));
      y.push_back(std::log(std::max(mean_gap[i], 1e-300)));
    }
  }
  return fit_slope(x, y);
}

}  // namespace

StabilityReport stability_sweep(const RunConfig& base_cfg, SweepAxis axis,
                                const std::vector<double>& values, int trials,
                                int jobs) {
  require(!values.empty(), "stability_sweep: empty values");
  require(std::is_sorted(values.begin(), values.end()),
          "stability_sweep: values must be sorted ascending");
  require(trials >= 10, "stability_sweep: trials must be >= 10");

  StabilityReport report;
  report.axis = axis;
  report.algorithm = base_cfg.algorithm;
  report.values = values;
  report.trials = trials;
  report.points.resize(values.size() * static_cast<std::size_t>(trials));

  const int total = static_cast<int>(report.points.size());
  parallel_for(total, jobs, [&](int p) {
    const std::size_t vi = static_cast<std::size_t>(p) /
                           static_cast<std::size_t>(trials);
    const int trial = p % trials;
    RunConfig cfg = apply_axis(base_cfg, axis, values[vi]);
    cfg.seed = CounterRng::derive({base_cfg.seed, stream::trial,
                                   static_cast<std::uint64_t>(vi),
                                   static_cast<std::uint64_t>(trial)})
                   .next_u64();

    // random perturbed-sample choice, same derivation for every algorithm
    CounterRng pick = CounterRng::derive({cfg.seed, stream::perturb});
    const TaskSpec probe_task = cfg.task.build(cfg.seed);
    const int client =
        static_cast<int>(pick.below(static_cast<std::uint64_t>(
            probe_task.clients)));
    const auto& shard_samples =
        probe_task.shards[static_cast<std::size_t>(client)].samples;
    const std::int64_t sid =
        shard_samples[pick.below(shard_samples.size())].id;

    TwinRunResult r = twin_run(cfg, client, sid, cfg.seed + 1, 512);

    SweepPoint& pt = report.points[static_cast<std::size_t>(p)];
    pt.value = values[vi];
    pt.trial = trial;
    pt.gap_param = r.gap_param;
    pt.gap_loss = r.gap_loss;
    pt.measured_sigma_g = r.sigma_g0;
    if (cfg.task.kind == TaskKind::quadratic) {
      const double L_eff = cfg.task.beta * (r.radius_visited + 1.0);
      pt.theory = theory_bound(
          uses_swa_schedule(cfg.algorithm) ? cfg.algorithm : Algorithm::fedswa,
          Regime::nonconvex, L_eff, cfg.task.beta, cfg.task.mu,
          cfg.task.noise_sigma *
              std::sqrt(static_cast<double>(probe_task.dim)),
          r.sigma_g0, cfg.task.clients, cfg.task.samples_per_client,
          cfg.sched.local_iters, std::max(cfg.rounds, 1));
    }
  });

  report.mean_gap_per_value.assign(values.size(), 0.0);
  report.mean_loss_gap_per_value.assign(values.size(), 0.0);
  report.mean_sigma_g_per_value.assign(values.size(), 0.0);
  for (std::size_t p = 0; p < report.points.size(); ++p) {
    const std::size_t vi = p / static_cast<std::size_t>(trials);
    report.mean_gap_per_value[vi] += report.points[p].gap_param;
    report.mean_loss_gap_per_value[vi] += report.points[p].gap_loss;
    report.mean_sigma_g_per_value[vi] += report.points[p].measured_sigma_g;
  }
  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    report.mean_gap_per_value[vi] /= static_cast<double>(trials);
    report.mean_loss_gap_per_value[vi] /= static_cast<double>(trials);
    report.mean_sigma_g_per_value[vi] /= static_cast<double>(trials);
  }
  report.slope = report_slope(axis, values, report.mean_gap_per_value,
                              report.mean_sigma_g_per_value);
  report.slope_loss =
      report_slope(axis, values, report.mean_loss_gap_per_value,
                   report.mean_sigma_g_per_value);
  return report;
}

double theory_bound(Algorithm alg, Regime regime, double L, double beta,
                    double mu, double sigma, double sigma_g, int m, int n,
                    int K, int T) {
  require(L > 0.0 && beta > 0.0 && sigma >= 0.0 && sigma_g >= 0.0,
          "theory_bound: parameters must be positive");
  require(m >= 1 && n >= 1 && K >= 1 && T >= 1,
          "theory_bound: m, n, K, T must be >= 1");
  const double dK = static_cast<double>(K);
  const double dT = static_cast<double>(T);
  const double lead =
      2.0 * L / (static_cast<double>(m) * static_cast<double>(n) * beta);

  if (regime == Regime::nonconvex) {
    const double c_tilde =
        1.0 + std::pow(2.0 + 1.0 / (dK * dT), dK - 1.0) / dT;
    const double e_factor = std::exp(1.0 / dT + 1.0);
    switch (alg) {
      case Algorithm::fedswa:
        return lead * e_factor * (c_tilde * L + c_tilde * sigma_g + c_tilde * sigma);
      case Algorithm::fedmoswa:
        return lead * e_factor * (c_tilde * L + sigma_g + c_tilde * sigma);
      case Algorithm::fedsam: {
        // one extra factor of the base keeps c_bar > c_tilde for all K, T
        const double c_bar = 1.0 + std::pow(2.0 + 1.0 / (dK * dT), dK) / dT;
        return lead * e_factor * (c_bar * L + c_bar * sigma_g + c_bar * sigma);
      }
      default:
        fail("theory_bound: no bound for " + to_string(alg));
    }
  }

  require(mu > 0.0, "theory_bound: strongly convex regime needs mu > 0");
  const double b_tilde =
      1.0 + std::pow(mu / ((beta + mu) * dK), dK - 1.0) / dT;
  const double e_factor = std::exp(1.0 - mu / ((beta + mu) * dT));
  switch (alg) {
    case Algorithm::fedswa:
      return lead * e_factor * (b_tilde * L + b_tilde * sigma_g + b_tilde * sigma);
    case Algorithm::fedmoswa:
      return lead * e_factor * (b_tilde * L + sigma_g + b_tilde * sigma);
    default:
      fail("theory_bound: no strongly convex bound for " + to_string(alg));
  }
}

double bootstrap_slope_diff_quantile(const StabilityReport& a,
                                     const StabilityReport& b,
                                     double quantile, int resamples,
                                     std::uint64_t seed, bool use_loss_gap) {
  require(a.axis == b.axis && a.values == b.values && a.trials == b.trials,
          "bootstrap: reports must share axis, values and trials");
  require(resamples >= 100, "bootstrap: need >= 100 resamples");
  const std::size_t nv = a.values.size();
  const int trials = a.trials;

  auto point_at = [&](const StabilityReport& r, std::size_t vi, int t)
      -> const SweepPoint& {
    return r.points[vi * static_cast<std::size_t>(trials) +
                    static_cast<std::size_t>(t)];
  };
  auto slope_for = [&](const StabilityReport& rep,
                       const std::vector<int>& pick) {
    std::vector<double> mean_gap(nv, 0.0), mean_sig(nv, 0.0);
    for (std::size_t vi = 0; vi < nv; ++vi) {
      for (int t : pick) {
        const SweepPoint& pt = point_at(rep, vi, t);
        mean_gap[vi] += use_loss_gap ? pt.gap_loss : pt.gap_param;
        mean_sig[vi] += pt.measured_sigma_g;
      }
      mean_gap[vi] /= static_cast<double>(pick.size());
      mean_sig[vi] /= static_cast<double>(pick.size());
    }
    return report_slope(rep.axis, rep.values, mean_gap, mean_sig);
  };

  CounterRng rng = CounterRng::derive({seed, 0xb007});
  std::vector<double> diffs(static_cast<std::size_t>(resamples));
  std::vector<int> pick(static_cast<std::size_t>(trials));
  for (int r = 0; r < resamples; ++r) {
    for (int& t : pick)
      t = static_cast<int>(rng.below(static_cast<std::uint64_t>(trials)));
    diffs[static_cast<std::size_t>(r)] =
        slope_for(a, pick) - slope_for(b, pick);
  }
  std::sort(diffs.begin(), diffs.end());
  const double pos = quantile * static_cast<double>(resamples - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, diffs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return diffs[lo] * (1.0 - frac) + diffs[hi] * frac;
}

std::string stability_to_csv(const StabilityReport& report) {
  std::string s = "axis,value,trial,gap_param,gap_loss,theory_bound\n";
  char buf[160];
  for (const SweepPoint& pt : report.points) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%d,%.17g,%.17g,%.17g\n",
                  to_string(report.axis).c_str(), pt.value, pt.trial,
                  pt.gap_param, pt.gap_loss, pt.theory);
    s += buf;
  }
  return s;
}

}  // namespace fedlab
