#ifndef FEDLAB_ENGINE_HPP
#define FEDLAB_ENGINE_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/algorithms.hpp"
#include "fedlab/schedules.hpp"
#include "fedlab/tasks.hpp"

namespace fedlab {

struct TaskConfig {
  TaskKind kind = TaskKind::quadratic;
  int dim = 20;               // parameter dim (quadratic) / input dim (logreg, mlp)
  int clients = 10;           // m
  int samples_per_client = 100;  // n
  double hetero_knob = 1.0;   // quadratic spread
  double noise_sigma = 0.1;   // quadratic stochastic-gradient scale
  double dirichlet_conc = 0.3;  // logreg/mlp label skew
  int hidden = 16;            // mlp width
  double mu = 0.5;            // quadratic eigenvalue range
  double beta = 2.0;

  TaskSpec build(std::uint64_t seed) const;
};

struct RunConfig {
  TaskConfig task;
  Algorithm algorithm = Algorithm::fedswa;
  AlgoConfig algo;
  LrSchedule sched;
  int rounds = 100;              // T
  int participation = 0;         // s; 0 derives from participation_rate
  double participation_rate = 0.5;  // C = s/m
  int batch_size = 50;           // >= n means full batch
  std::uint64_t seed = 1;
  int threads = 1;
  bool diagnostics = false;      // retain per-step local traces, measure drift

  // probe knob: keep one sample out of every minibatch (stability tests)
  int exclude_client = -1;
  std::int64_t exclude_sample = -1;

  int effective_participation() const;
  void validate() const;
};

struct ServerState {
  ParamVec theta;
  ParamVec sctl;   // server control (m); zero-sized when unused
  int round = 0;
  Algorithm alg = Algorithm::fedswa;
  std::optional<ParamVec> swa_running;  // off-by-default shadow average
  int swa_count = 0;
};

// Per-round record; quantities that do not apply hold NaN ("absent").
struct RoundRecord {
  int round = 0;
  double train_loss = 0.0;
  double dist_to_opt = 0.0;
  double grad_norm = 0.0;
  double client_drift = 0.0;
  double control_lag = 0.0;
  double sigma_g = 0.0;
  double wall_ms = 0.0;
};

struct RunMetrics {
  std::vector<RoundRecord> records;  // T+1 entries, t = 0..T
  ParamVec final_theta;
  bool aborted = false;
  std::string abort_reason;
};

// E_t = (1/(K*|participants|)) sum_{i,k>=1} ||theta_{i,k} - theta_prev||^2.
double measure_client_drift(const std::vector<LocalTrace>& traces,
                            const ParamVec& theta_prev);

// C_t = (1/m) sum_j ||c_j - grad F_j(theta*)||^2 (quadratic tasks).
double measure_control_lag(const std::vector<ClientState>& clients,
                           const TaskSpec& task, const ParamVec& theta_star);

// Uniform sample of s distinct clients from [0, m), ascending.
std::vector<int> sample_clients(int m, int s, CounterRng& rng);

// One full simulation: owns the task, server, and client states, and runs
// Algorithm rounds one at a time. Client work within a round may run on
// several threads; results are buffered and reduced serially in client-index
// order, so output is independent of thread count.
class Simulation {
 public:
  explicit Simulation(const RunConfig& cfg);
  Simulation(const RunConfig& cfg, TaskSpec task);

  void run_round();
  RoundRecord measure(double wall_ms) const;

  const RunConfig& config() const { return cfg_; }
  const TaskSpec& task() const { return task_; }
  const ServerState& server() const { return server_; }
  const ParamVec& theta() const { return server_.theta; }
  int round() const { return server_.round; }
  const std::vector<ClientState>& clients() const { return clients_; }

  // Diagnostics from the most recent round (empty unless cfg.diagnostics).
  const std::vector<int>& last_selected() const { return last_selected_; }
  const std::vector<LocalTrace>& last_traces() const { return last_traces_; }
  const std::vector<ParamVec>& last_ctrl_next() const { return last_ctrl_next_; }
  double last_drift() const { return last_drift_; }
  double last_sum_eta() const { return last_sum_eta_; }
  const ParamVec& last_theta_received() const { return last_theta_received_; }

 private:
  void init();

  RunConfig cfg_;
  TaskSpec task_;
  ServerState server_;
  std::vector<ClientState> clients_;
  ParamVec delta_prev_;  // mofedsam server direction estimate

  std::vector<int> last_selected_;
  std::vector<LocalTrace> last_traces_;
  std::vector<ParamVec> last_ctrl_next_;
  ParamVec last_theta_received_;
  double last_drift_ = 0.0;
  double last_sum_eta_ = 0.0;
};

RunMetrics run_experiment(const RunConfig& cfg);

// CSV with the fixed column set; NaN fields print as "nan".
std::string metrics_to_csv(const RunMetrics& metrics);

// Round-robin helper used for client work and stability trials.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

}  // namespace fedlab

#endif
