#ifndef FEDLAB_TASKS_HPP
#define FEDLAB_TASKS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/numkit.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

enum class TaskKind { quadratic, logreg, mlp };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

// One labeled example. The id is stable under single-sample replacement so
// neighboring datasets S and S^(j) stay aligned sample-for-sample.
struct Sample {
  std::vector<double> x;
  double y = 0.0;  // real target for quadratic (unused) / mlp, class for logreg
  std::int64_t id = 0;
};

struct ClientShard {
  std::vector<Sample> samples;          // exactly n per client
  ParamVec curvature;                   // quadratic: diag(A_i)
  ParamVec gen_center;                  // quadratic: generator mean of x draws
  std::vector<double> class_probs;      // logreg/mlp: label law of D_i
};

struct GradResult {
  double loss = 0.0;
  ParamVec grad;
};

// A differentiable objective F_S = (1/m) sum_i F_{S_i} with per-client data.
// Immutable after construction; all evaluation methods are const and
// thread-safe.
class TaskSpec {
 public:
  TaskKind kind = TaskKind::quadratic;
  int dim = 0;                 // parameter dimension d
  int clients = 0;             // m
  int samples_per_client = 0;  // n
  double hetero_knob = 0.0;
  double noise_sigma = 0.0;
  double mu = 0.0;             // min eigenvalue over all A_i (quadratic)
  double beta = 0.0;           // max eigenvalue over all A_i (quadratic)
  std::uint64_t seed = 0;
  int feature_dim = 0;         // input size (logreg/mlp); == dim for quadratic
  int hidden = 0;              // mlp hidden width
  double dirichlet_conc = 0.0;
  std::vector<std::vector<double>> class_means;  // logreg/mlp generators
  std::vector<ClientShard> shards;
  std::optional<ParamVec> optimum;  // present for quadratic

  // Mean loss/gradient over the given sample ids of one client's shard.
  GradResult loss_grad(int client, const ParamVec& theta,
                       const std::vector<std::int64_t>& sample_ids) const;

  // Full-shard loss/gradient of F_{S_i}.
  GradResult client_full(int client, const ParamVec& theta) const;

  // Global empirical risk F_S and its gradient.
  GradResult global_full(const ParamVec& theta) const;
  double global_loss(const ParamVec& theta) const;

  // Per-sample loss (used by the held-out stability surrogate).
  double sample_loss(const ParamVec& theta, const Sample& z, int client) const;

  // Fresh example from client i's generating distribution D_i.
  Sample draw_sample(int client, CounterRng& rng) const;

  // Deep copy with exactly one sample's content swapped for new_content
  // (same id, same slot).
  TaskSpec replace_sample(int client, std::int64_t sample_id,
                          Sample new_content) const;

  // Default parameter vector the engine starts from.
  ParamVec initial_theta() const;

  int sample_index(int client, std::int64_t sample_id) const;

  void validate() const;

 private:
  GradResult eval_batch(int client, const ParamVec& theta,
                        const std::int64_t* ids, std::size_t count) const;
  void recompute_optimum();

  friend TaskSpec make_quadratic(int, int, int, double, double, std::uint64_t,
                                 double, double);
  friend TaskSpec make_quadratic_explicit(const std::vector<ParamVec>&,
                                          const std::vector<ParamVec>&, int,
                                          double, std::uint64_t);
  friend TaskSpec make_logreg(int, int, int, double, std::uint64_t);
  friend TaskSpec make_mlp(int, int, int, int, double, std::uint64_t);
};

// Heterogeneous quadratic: client i carries F_{S_i}(theta) =
// mean_j 0.5*(theta - x_{i,j})' A_i (theta - x_{i,j}) with diagonal SPD A_i,
// eigenvalues in [mu, beta]. Client centers spread with hetero_knob; sample
// noise realizes per-coordinate stochastic-gradient std of noise_sigma.
TaskSpec make_quadratic(int dim, int m, int n, double hetero_knob,
                        double noise_sigma, std::uint64_t seed,
                        double mu = 0.5, double beta = 2.0);

// Fixed curvatures/centers for hand-checked cases.
TaskSpec make_quadratic_explicit(const std::vector<ParamVec>& curvatures,
                                 const std::vector<ParamVec>& centers, int n,
                                 double noise_sigma, std::uint64_t seed);

// Binary logistic regression on class-conditional Gaussians with per-client
// label skew drawn from Dirichlet(concentration).
TaskSpec make_logreg(int dim, int m, int n, double concentration,
                     std::uint64_t seed);

// One-hidden-layer tanh MLP (binary, logistic loss on a scalar logit), same
// data generator as logreg.
TaskSpec make_mlp(int input_dim, int hidden, int m, int n,
                  double concentration, std::uint64_t seed);

// Assumption-5 heterogeneity at theta: (1/m) sum_i ||grad F_{S_i} - grad F_S||.
double measure_sigma_g(const TaskSpec& task, const ParamVec& theta);

// Neighbor dataset S^(j): the named sample is replaced by a fresh draw from
// the same D_i; all randomness comes from `seed`.
TaskSpec perturb_one_sample(const TaskSpec& task, int client,
                            std::int64_t sample_id, std::uint64_t seed);

struct DirichletPartition {
  double concentration = 0.0;
  std::vector<int> assignment;  // sample index -> client
};

// Label-skewed partition: for each class, client shares are drawn from
// Dirichlet(concentration) and the class's samples are split accordingly.
// Resamples until every client owns at least one sample.
DirichletPartition dirichlet_partition(const std::vector<int>& labels, int m,
                                       double concentration,
                                       std::uint64_t seed);

// JSON snapshot (schema: kind, dim, m, n, seeds, per-client shard arrays).
std::string task_to_json(const TaskSpec& task);

}  // namespace fedlab

#endif
