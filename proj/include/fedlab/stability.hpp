#ifndef FEDLAB_STABILITY_HPP
#define FEDLAB_STABILITY_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "fedlab/engine.hpp"

namespace fedlab {

// One coupled pair of runs on S and S^(j): identical seeds, identical client
// sampling, identical batch index draws; only the content of one sample
// differs between the twins.
struct TwinRunResult {
  std::vector<double> gap_series;  // ||theta_t - theta'_t||, t = 0..T
  double gap_param = 0.0;          // final-round parameter gap
  double gap_loss = 0.0;           // max |l(z;theta_T) - l(z;theta'_T)| over pool
  double radius_visited = 0.0;     // max ||theta_t - theta_0|| across both runs
  double heldout_max_dist = 0.0;   // max ||x_z - theta_0|| over the pool
  double sigma_g0 = 0.0;           // heterogeneity measured at theta_0
};

// The sup_z surrogate for the loss gap uses `heldout` samples
// drawn from the task's own generators.
TwinRunResult twin_run(const RunConfig& cfg, int perturb_client,
                       std::int64_t perturb_sample, std::uint64_t perturb_seed,
                       int heldout = 1000);

enum class SweepAxis { n, m, sigma_g, K, T };

std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

struct SweepPoint {
  double value = 0.0;       // swept raw value (hetero_knob for the sigma_g axis)
  int trial = 0;
  double gap_param = 0.0;
  double gap_loss = 0.0;
  double theory = 0.0;      // closed-form bound at the same parameters
  double measured_sigma_g = 0.0;
};

struct StabilityReport {
  SweepAxis axis = SweepAxis::n;
  Algorithm algorithm = Algorithm::fedswa;
  std::vector<double> values;
  int trials = 0;
  std::vector<SweepPoint> points;  // values.size() * trials entries
  // Slopes of the mean gaps: log-log vs the axis value for n, m, K, T;
  // linear vs measured sigma_g for the sigma_g axis (the sweep includes 0).
  // `slope` tracks the parameter gap, `slope_loss` the held-out loss gap
  // (the quantity uniform stability bounds).
  double slope = 0.0;
  double slope_loss = 0.0;
  std::vector<double> mean_gap_per_value;
  std::vector<double> mean_loss_gap_per_value;
  std::vector<double> mean_sigma_g_per_value;
};

// Runs `trials` twin pairs per axis value; trial seeds and the perturbed
// (client, sample) choice derive from base_cfg.seed. Values must be sorted
// ascending. Trials run in `jobs` threads; output is order-independent.
StabilityReport stability_sweep(const RunConfig& base_cfg, SweepAxis axis,
                                const std::vector<double>& values, int trials,
                                int jobs = 1);

enum class Regime { strongly_convex, nonconvex };

// Closed-form generalization bounds:
//   nonconvex        (2L/(m n beta)) e^{1/T + 1} * (c~ L + {c~} sigma_g + c~ sigma)
//   strongly convex  (2L/(m n beta)) e^{1 - mu/((beta+mu)T)} * (b~ L + {b~} sigma_g + b~ sigma)
// with c~ = 1 + (2 + 1/(KT))^{K-1}/T and b~ = 1 + (mu/((beta+mu)K))^{K-1}/T.
// fedmoswa drops the sigma_g amplification; fedsam (nonconvex only) uses a
// strictly larger coefficient.
double theory_bound(Algorithm alg, Regime regime, double L, double beta,
                    double mu, double sigma, double sigma_g, int m, int n,
                    int K, int T);

// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

// Bootstrap the slope difference slope(a) - slope(b) by resampling trial
// indices within each value, the same indices for both reports (a paired
// design: matching trials share tasks and perturbed samples when both
// sweeps were run from the same base seed). Returns the requested quantile
// of the difference distribution. use_loss_gap selects which gap the slopes
// are fitted on.
double bootstrap_slope_diff_quantile(const StabilityReport& a,
                                     const StabilityReport& b,
                                     double quantile, int resamples,
                                     std::uint64_t seed,
                                     bool use_loss_gap = false);

std::string stability_to_csv(const StabilityReport& report);

}  // namespace fedlab

#endif
