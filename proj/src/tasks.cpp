#include "fedlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace fedlab {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::quadratic: return "quadratic";
    case TaskKind::logreg: return "logreg";
    case TaskKind::mlp: return "mlp";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "quadratic") return TaskKind::quadratic;
  if (s == "logreg") return TaskKind::logreg;
  if (s == "mlp") return TaskKind::mlp;
  fail("unknown task kind: " + s);
}

namespace {

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t))
                  : std::exp(t) / (1.0 + std::exp(t));
}

// log(1 + exp(-t)) without overflow.
double log1pexp_neg(double t) {
  return t >= 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

// MLP parameter layout: [W1 (h x in, row-major) | b1 (h) | w2 (h) | b2].
struct MlpView {
  const double* w1;
  const double* b1;
  const double* w2;
  const double* b2;
  int in, h;
  MlpView(const ParamVec& theta, int in_, int h_) : in(in_), h(h_) {
    w1 = theta.data();
    b1 = w1 + static_cast<std::size_t>(h) * in;
    w2 = b1 + h;
    b2 = w2 + h;
  }
};

int mlp_dim(int input_dim, int hidden) {
  return hidden * (input_dim + 2) + 1;
}

}  // namespace

void TaskSpec::validate() const {
  require(dim >= 1, "task dim must be >= 1");
  require(clients >= 1, "task clients must be >= 1");
  require(samples_per_client >= 1, "task samples_per_client must be >= 1");
  require(static_cast<int>(shards.size()) == clients, "shard count != m");
  for (const ClientShard& s : shards)
    require(static_cast<int>(s.samples.size()) == samples_per_client,
            "every client shard must have exactly n samples");
}

int TaskSpec::sample_index(int client, std::int64_t sample_id) const {
  if (client < 0 || client >= clients) fail("bad client index");
  const auto& ss = shards[client].samples;
  // construction assigns id = client*n + j and replacement keeps ids, so the
  // direct guess almost always hits; the scan is a fallback
  const std::int64_t guess =
      sample_id - static_cast<std::int64_t>(client) * samples_per_client;
  if (guess >= 0 && guess < static_cast<std::int64_t>(ss.size()) &&
      ss[static_cast<std::size_t>(guess)].id == sample_id)
    return static_cast<int>(guess);
  for (std::size_t j = 0; j < ss.size(); ++j)
    if (ss[j].id == sample_id) return static_cast<int>(j);
  fail("unknown sample id " + std::to_string(sample_id) + " for client " +
       std::to_string(client));
}

GradResult TaskSpec::eval_batch(int client, const ParamVec& theta,
                                const std::int64_t* ids,
                                std::size_t count) const {
  if (client < 0 || client >= clients) fail("bad client index");
  if (count == 0) fail("loss_grad: empty batch");
  if (static_cast<int>(theta.size()) != dim) fail("loss_grad: bad theta dim");
  const ClientShard& shard = shards[client];

  GradResult out;
  out.grad.assign(dim, 0.0);
  double loss = 0.0;

  switch (kind) {
    case TaskKind::quadratic: {
      const ParamVec& a = shard.curvature;
      for (std::size_t b = 0; b < count; ++b) {
        const Sample& z =
            shard.samples[static_cast<std::size_t>(sample_index(client, ids[b]))];
        for (int i = 0; i < dim; ++i) {
          const double r = theta[i] - z.x[i];
          loss += 0.5 * a[i] * r * r;
          out.grad[i] += a[i] * r;
        }
      }
      break;
    }
    case TaskKind::logreg: {
      for (std::size_t b = 0; b < count; ++b) {
        const Sample& z =
            shard.samples[static_cast<std::size_t>(sample_index(client, ids[b]))];
        double t = 0.0;
        for (int i = 0; i < dim; ++i) t += theta[i] * z.x[i];
        const double s = z.y > 0.5 ? 1.0 : -1.0;
        loss += log1pexp_neg(s * t);
        const double coef = -s * sigmoid(-s * t);
        for (int i = 0; i < dim; ++i) out.grad[i] += coef * z.x[i];
      }
      break;
    }
    case TaskKind::mlp: {
      const MlpView net(theta, feature_dim, hidden);
      std::vector<double> act(static_cast<std::size_t>(hidden));
      for (std::size_t b = 0; b < count; ++b) {
        const Sample& z =
            shard.samples[static_cast<std::size_t>(sample_index(client, ids[b]))];
        double logit = net.b2[0];
        for (int hh = 0; hh < net.h; ++hh) {
          double p = net.b1[hh];
          const double* row = net.w1 + static_cast<std::size_t>(hh) * net.in;
          for (int i = 0; i < net.in; ++i) p += row[i] * z.x[i];
          act[static_cast<std::size_t>(hh)] = std::tanh(p);
          logit += net.w2[hh] * act[static_cast<std::size_t>(hh)];
        }
        const double s = z.y > 0.5 ? 1.0 : -1.0;
        loss += log1pexp_neg(s * logit);
        const double dlogit = -s * sigmoid(-s * logit);
        double* gw1 = out.grad.data();
        double* gb1 = gw1 + static_cast<std::size_t>(net.h) * net.in;
        double* gw2 = gb1 + net.h;
        double* gb2 = gw2 + net.h;
        gb2[0] += dlogit;
        for (int hh = 0; hh < net.h; ++hh) {
          const double a = act[static_cast<std::size_t>(hh)];
          gw2[hh] += dlogit * a;
          const double dpre = dlogit * net.w2[hh] * (1.0 - a * a);
          gb1[hh] += dpre;
          double* grow = gw1 + static_cast<std::size_t>(hh) * net.in;
          for (int i = 0; i < net.in; ++i) grow[i] += dpre * z.x[i];
        }
      }
      break;
    }
  }

  const double inv = 1.0 / static_cast<double>(count);
  out.loss = loss * inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

GradResult TaskSpec::loss_grad(int client, const ParamVec& theta,
                               const std::vector<std::int64_t>& ids) const {
  return eval_batch(client, theta, ids.data(), ids.size());
}

GradResult TaskSpec::client_full(int client, const ParamVec& theta) const {
  if (client < 0 || client >= clients) fail("bad client index");
  std::vector<std::int64_t> ids;
  ids.reserve(shards[client].samples.size());
  for (const Sample& z : shards[client].samples) ids.push_back(z.id);
  return eval_batch(client, theta, ids.data(), ids.size());
}

GradResult TaskSpec::global_full(const ParamVec& theta) const {
  GradResult out;
  out.grad.assign(dim, 0.0);
  for (int i = 0; i < clients; ++i) {
    GradResult r = client_full(i, theta);
    out.loss += r.loss;
    for (int j = 0; j < dim; ++j) out.grad[j] += r.grad[j];
  }
  const double inv = 1.0 / static_cast<double>(clients);
  out.loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

double TaskSpec::global_loss(const ParamVec& theta) const {
  return global_full(theta).loss;
}

double TaskSpec::sample_loss(const ParamVec& theta, const Sample& z,
                             int client) const {
  switch (kind) {
    case TaskKind::quadratic: {
      const ParamVec& a = shards[client].curvature;
      double loss = 0.0;
      for (int i = 0; i < dim; ++i) {
        const double r = theta[i] - z.x[i];
        loss += 0.5 * a[i] * r * r;
      }
      return loss;
    }
    case TaskKind::logreg: {
      double t = 0.0;
      for (int i = 0; i < dim; ++i) t += theta[i] * z.x[i];
      const double s = z.y > 0.5 ? 1.0 : -1.0;
      return log1pexp_neg(s * t);
    }
    case TaskKind::mlp: {
      const MlpView net(theta, feature_dim, hidden);
      double logit = net.b2[0];
      for (int hh = 0; hh < net.h; ++hh) {
        double p = net.b1[hh];
        const double* row = net.w1 + static_cast<std::size_t>(hh) * net.in;
        for (int i = 0; i < net.in; ++i) p += row[i] * z.x[i];
        logit += net.w2[hh] * std::tanh(p);
      }
      const double s = z.y > 0.5 ? 1.0 : -1.0;
      return log1pexp_neg(s * logit);
    }
  }
  fail("unreachable");
}

Sample TaskSpec::draw_sample(int client, CounterRng& rng) const {
  if (client < 0 || client >= clients) fail("bad client index");
  const ClientShard& shard = shards[client];
  Sample z;
  switch (kind) {
    case TaskKind::quadratic: {
      // x = center + A^{-1} eps, eps ~ N(0, noise_sigma^2 I), so the
      // per-sample gradient A(theta - x) equals A(theta - center) - eps.
      z.x.resize(dim);
      for (int i = 0; i < dim; ++i)
        z.x[i] = shard.gen_center[i] +
                 noise_sigma * rng.normal() / shard.curvature[i];
      z.y = 0.0;
      break;
    }
    case TaskKind::logreg:
    case TaskKind::mlp: {
      const double u = rng.uniform();
      double acc = 0.0;
      std::size_t cls = shard.class_probs.size() - 1;
      for (std::size_t c = 0; c < shard.class_probs.size(); ++c) {
        acc += shard.class_probs[c];
        if (u < acc) {
          cls = c;
          break;
        }
      }
      z.x.resize(feature_dim);
      for (int i = 0; i < feature_dim; ++i)
        z.x[i] = class_means[cls][i] + rng.normal();
      z.y = static_cast<double>(cls);
      break;
    }
  }
  return z;
}

TaskSpec TaskSpec::replace_sample(int client, std::int64_t sample_id,
                                  Sample new_content) const {
  const int idx = sample_index(client, sample_id);
  TaskSpec copy = *this;
  new_content.id = sample_id;
  copy.shards[client].samples[static_cast<std::size_t>(idx)] =
      std::move(new_content);
  copy.recompute_optimum();
  return copy;
}

void TaskSpec::recompute_optimum() {
  if (kind != TaskKind::quadratic) {
    optimum.reset();
    return;
  }
  // grad F_S(theta) = mean_i A_i (theta - mean_j x_{i,j}); solve for zero.
  ParamVec num(dim, 0.0), den(dim, 0.0);
  for (int i = 0; i < clients; ++i) {
    const ClientShard& s = shards[i];
    ParamVec xbar(dim, 0.0);
    for (const Sample& z : s.samples)
      for (int j = 0; j < dim; ++j) xbar[j] += z.x[j];
    const double inv = 1.0 / static_cast<double>(s.samples.size());
    for (int j = 0; j < dim; ++j) {
      xbar[j] *= inv;
      num[j] += s.curvature[j] * xbar[j];
      den[j] += s.curvature[j];
    }
  }
  ParamVec opt(dim);
  for (int j = 0; j < dim; ++j) opt[j] = num[j] / den[j];
  optimum = std::move(opt);
}

ParamVec TaskSpec::initial_theta() const {
  if (kind != TaskKind::mlp) return ParamVec(dim, 0.0);
  // tanh nets need symmetry breaking; deterministic small init.
  CounterRng rng = CounterRng::derive({seed, stream::init});
  ParamVec theta(dim);
  const double scale = 0.5 / std::sqrt(static_cast<double>(hidden));
  for (double& w : theta) w = scale * (2.0 * rng.uniform() - 1.0);
  return theta;
}

TaskSpec make_quadratic(int dim, int m, int n, double hetero_knob,
                        double noise_sigma, std::uint64_t seed, double mu,
                        double beta) {
  require(dim >= 1 && m >= 1 && n >= 1, "make_quadratic: dim, m, n must be >= 1");
  require(hetero_knob >= 0.0 && noise_sigma >= 0.0,
          "make_quadratic: hetero_knob and noise_sigma must be >= 0");
  require(0.0 < mu && mu <= beta, "make_quadratic: need 0 < mu <= beta");

  TaskSpec t;
  t.kind = TaskKind::quadratic;
  t.dim = dim;
  t.feature_dim = dim;
  t.clients = m;
  t.samples_per_client = n;
  t.hetero_knob = hetero_knob;
  t.noise_sigma = noise_sigma;
  t.mu = mu;
  t.beta = beta;
  t.seed = seed;
  t.shards.resize(m);

  CounterRng gen = CounterRng::derive({seed, stream::task});

  // Shared base curvature; per-client jitter scales with the knob and is
  // clamped back into [mu, beta] so the recorded range always holds.
  ParamVec base(dim);
  for (int j = 0; j < dim; ++j) base[j] = mu + (beta - mu) * gen.uniform();

  for (int i = 0; i < m; ++i) {
    ClientShard& s = t.shards[i];
    s.curvature.resize(dim);
    s.gen_center.resize(dim);
    CounterRng crng = CounterRng::derive({seed, stream::task, 1000 + static_cast<std::uint64_t>(i)});
    for (int j = 0; j < dim; ++j) {
      const double jitter =
          hetero_knob * 0.5 * (beta - mu) * (2.0 * crng.uniform() - 1.0);
      s.curvature[j] = std::clamp(base[j] + jitter, mu, beta);
    }
    for (int j = 0; j < dim; ++j)
      s.gen_center[j] = hetero_knob * crng.normal();
    s.samples.resize(n);
    for (int j = 0; j < n; ++j) {
      Sample z = t.draw_sample(i, crng);
      z.id = static_cast<std::int64_t>(i) * n + j;
      s.samples[static_cast<std::size_t>(j)] = std::move(z);
    }
  }
  t.recompute_optimum();
  return t;
}

TaskSpec make_quadratic_explicit(const std::vector<ParamVec>& curvatures,
                                 const std::vector<ParamVec>& centers, int n,
                                 double noise_sigma, std::uint64_t seed) {
  require(!curvatures.empty() && curvatures.size() == centers.size(),
          "make_quadratic_explicit: need matching nonempty curvatures/centers");
  const int m = static_cast<int>(curvatures.size());
  const int dim = static_cast<int>(curvatures.front().size());
  TaskSpec t;
  t.kind = TaskKind::quadratic;
  t.dim = dim;
  t.feature_dim = dim;
  t.clients = m;
  t.samples_per_client = n;
  t.noise_sigma = noise_sigma;
  t.seed = seed;
  t.mu = curvatures.front().front();
  t.beta = t.mu;
  t.shards.resize(m);
  for (int i = 0; i < m; ++i) {
    require(static_cast<int>(curvatures[i].size()) == dim &&
                static_cast<int>(centers[i].size()) == dim,
            "make_quadratic_explicit: inconsistent dims");
    for (double a : curvatures[i]) {
      require(a > 0.0, "make_quadratic_explicit: curvatures must be positive");
      t.mu = std::min(t.mu, a);
      t.beta = std::max(t.beta, a);
    }
    ClientShard& s = t.shards[i];
    s.curvature = curvatures[i];
    s.gen_center = centers[i];
    CounterRng crng = CounterRng::derive({seed, stream::task, 1000 + static_cast<std::uint64_t>(i)});
    s.samples.resize(n);
    for (int j = 0; j < n; ++j) {
      Sample z = t.draw_sample(i, crng);
      z.id = static_cast<std::int64_t>(i) * n + j;
      s.samples[static_cast<std::size_t>(j)] = std::move(z);
    }
  }
  t.recompute_optimum();
  return t;
}

namespace {

// Shared generator for the classification tasks: class-conditional Gaussian
// features, per-client label law drawn from Dirichlet(concentration).
void fill_classification(TaskSpec& t, int classes, double concentration,
                         std::uint64_t seed) {
  CounterRng gen = CounterRng::derive({seed, stream::task});
  t.class_means.assign(static_cast<std::size_t>(classes),
                       std::vector<double>(t.feature_dim));
  for (int c = 0; c < classes; ++c) {
    double norm2 = 0.0;
    for (int j = 0; j < t.feature_dim; ++j) {
      t.class_means[c][j] = gen.normal();
      norm2 += t.class_means[c][j] * t.class_means[c][j];
    }
    // fixed separation so the problem is learnable at any dim
    const double scale = 2.0 / std::sqrt(std::max(norm2, 1e-12));
    for (double& v : t.class_means[c]) v *= scale;
  }
  for (int i = 0; i < t.clients; ++i) {
    ClientShard& s = t.shards[i];
    CounterRng crng = CounterRng::derive({seed, stream::task, 1000 + static_cast<std::uint64_t>(i)});
    s.class_probs.resize(classes);
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
      s.class_probs[c] = crng.gamma(concentration);
      sum += s.class_probs[c];
    }
    for (double& p : s.class_probs) p /= sum;
    s.samples.resize(t.samples_per_client);
    for (int j = 0; j < t.samples_per_client; ++j) {
      Sample z = t.draw_sample(i, crng);
      z.id = static_cast<std::int64_t>(i) * t.samples_per_client + j;
      s.samples[static_cast<std::size_t>(j)] = std::move(z);
    }
  }
}

}  // namespace

TaskSpec make_logreg(int dim, int m, int n, double concentration,
                     std::uint64_t seed) {
  require(dim >= 1 && m >= 1 && n >= 1, "make_logreg: dim, m, n must be >= 1");
  require(concentration > 0.0, "make_logreg: concentration must be > 0");
  TaskSpec t;
  t.kind = TaskKind::logreg;
  t.dim = dim;
  t.feature_dim = dim;
  t.clients = m;
  t.samples_per_client = n;
  t.dirichlet_conc = concentration;
  t.seed = seed;
  t.shards.resize(m);
  fill_classification(t, 2, concentration, seed);
  return t;
}

TaskSpec make_mlp(int input_dim, int hidden, int m, int n,
                  double concentration, std::uint64_t seed) {
  require(input_dim >= 1 && m >= 1 && n >= 1, "make_mlp: dims must be >= 1");
  require(hidden >= 1 && hidden <= 64, "make_mlp: hidden must be in [1, 64]");
  require(concentration > 0.0, "make_mlp: concentration must be > 0");
  TaskSpec t;
  t.kind = TaskKind::mlp;
  t.feature_dim = input_dim;
  t.hidden = hidden;
  t.dim = mlp_dim(input_dim, hidden);
  t.clients = m;
  t.samples_per_client = n;
  t.dirichlet_conc = concentration;
  t.seed = seed;
  t.shards.resize(m);
  fill_classification(t, 2, concentration, seed);
  return t;
}

double measure_sigma_g(const TaskSpec& task, const ParamVec& theta) {
  const GradResult global = task.global_full(theta);
  double acc = 0.0;
  for (int i = 0; i < task.clients; ++i) {
    const GradResult local = task.client_full(i, theta);
    acc += l2_norm(sub(local.grad, global.grad));
  }
  return acc / static_cast<double>(task.clients);
}

TaskSpec perturb_one_sample(const TaskSpec& task, int client,
                            std::int64_t sample_id, std::uint64_t seed) {
  task.sample_index(client, sample_id);  // validates
  CounterRng rng = CounterRng::derive({seed, stream::perturb,
                                       static_cast<std::uint64_t>(client),
                                       static_cast<std::uint64_t>(sample_id)});
  Sample fresh = task.draw_sample(client, rng);
  return task.replace_sample(client, sample_id, std::move(fresh));
}

DirichletPartition dirichlet_partition(const std::vector<int>& labels, int m,
                                       double concentration,
                                       std::uint64_t seed) {
  require(concentration > 0.0, "dirichlet_partition: concentration must be > 0");
  require(m >= 1, "dirichlet_partition: m must be >= 1");
  require(static_cast<int>(labels.size()) >= m,
          "dirichlet_partition: fewer samples than clients");

  int classes = 0;
  for (int l : labels) {
    require(l >= 0, "dirichlet_partition: labels must be >= 0");
    classes = std::max(classes, l + 1);
  }
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[static_cast<std::size_t>(labels[i])].push_back(
        static_cast<int>(i));

  DirichletPartition out;
  out.concentration = concentration;
  out.assignment.assign(labels.size(), -1);

  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    CounterRng rng = CounterRng::derive({seed, stream::task, attempt});
    std::vector<int> counts(static_cast<std::size_t>(m), 0);
    for (auto& a : out.assignment) a = -1;
    for (int c = 0; c < classes; ++c) {
      const auto& ids = by_class[static_cast<std::size_t>(c)];
      if (ids.empty()) continue;
      std::vector<double> w(static_cast<std::size_t>(m));
      double sum = 0.0;
      for (int i = 0; i < m; ++i) {
        w[static_cast<std::size_t>(i)] = rng.gamma(concentration);
        sum += w[static_cast<std::size_t>(i)];
      }
      // cumulative shares split this class's samples by position
      std::vector<double> cum(static_cast<std::size_t>(m));
      double acc = 0.0;
      for (int i = 0; i < m; ++i) {
        acc += w[static_cast<std::size_t>(i)] / sum;
        cum[static_cast<std::size_t>(i)] = acc;
      }
      cum.back() = 1.0;
      int client = 0;
      for (std::size_t j = 0; j < ids.size(); ++j) {
        const double frac =
            (static_cast<double>(j) + 0.5) / static_cast<double>(ids.size());
        while (client < m - 1 && frac > cum[static_cast<std::size_t>(client)])
          ++client;
        out.assignment[static_cast<std::size_t>(ids[j])] = client;
        ++counts[static_cast<std::size_t>(client)];
      }
    }
    bool ok = true;
    for (int i = 0; i < m; ++i)
      if (counts[static_cast<std::size_t>(i)] == 0) ok = false;
    if (ok) return out;
  }
  fail("dirichlet_partition: could not satisfy per-client counts >= 1");
}

std::string task_to_json(const TaskSpec& task) {
  nlohmann::json j;
  j["kind"] = to_string(task.kind);
  j["dim"] = task.dim;
  j["m"] = task.clients;
  j["n"] = task.samples_per_client;
  j["seeds"] = {{"task", task.seed}};
  j["hetero_knob"] = task.hetero_knob;
  j["noise_sigma"] = task.noise_sigma;
  if (task.kind == TaskKind::quadratic) {
    j["mu"] = task.mu;
    j["beta"] = task.beta;
    if (task.optimum) j["optimum"] = *task.optimum;
  }
  if (task.kind == TaskKind::mlp) j["hidden"] = task.hidden;
  if (task.kind != TaskKind::quadratic) {
    j["dirichlet_conc"] = task.dirichlet_conc;
    j["class_means"] = task.class_means;
  }
  nlohmann::json shards = nlohmann::json::array();
  for (const ClientShard& s : task.shards) {
    nlohmann::json js;
    if (!s.curvature.empty()) js["curvature"] = s.curvature;
    if (!s.gen_center.empty()) js["gen_center"] = s.gen_center;
    if (!s.class_probs.empty()) js["class_probs"] = s.class_probs;
    nlohmann::json samples = nlohmann::json::array();
    for (const Sample& z : s.samples)
      samples.push_back({{"id", z.id}, {"x", z.x}, {"y", z.y}});
    js["samples"] = std::move(samples);
    shards.push_back(std::move(js));
  }
  j["shards"] = std::move(shards);
  return j.dump(2);
}

}  // namespace fedlab
