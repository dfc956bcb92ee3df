#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedlab/tasks.hpp"

using namespace fedlab;

namespace {

std::vector<std::int64_t> shard_ids(const TaskSpec& t, int client) {
  std::vector<std::int64_t> ids;
  for (const Sample& z : t.shards[client].samples) ids.push_back(z.id);
  return ids;
}

// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    const double fa = static_cast<double>(i) / na;
    const double fb = static_cast<double>(j) / nb;
    d = std::max(d, std::fabs(fa - fb));
  }
  const double en = std::sqrt(na * nb / (na + nb));
  const double lambda = (en + 0.12 + 0.11 / en) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) *
         std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TEST_CASE("quadratic with identity curvature: optimum is the mean center") {
  // A_i = I, b_i arbitrary, no sample noise
  const TaskSpec t = make_quadratic_explicit(
      {{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}},
      {{0.0, 3.0}, {6.0, 0.0}, {0.0, 0.0}}, 4, 0.0, 11);
  REQUIRE(t.optimum.has_value());
  CHECK((*t.optimum)[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK((*t.optimum)[1] == doctest::Approx(1.0).epsilon(1e-14));
  // grad at the optimum vanishes
  CHECK(l2_norm(t.global_full(*t.optimum).grad) < 1e-12);
}

TEST_CASE("two-client hand case: optimum, global loss, sigma_g") {
  // m=2, A=I, b1=[0], b2=[2]
  const TaskSpec t =
      make_quadratic_explicit({{1.0}, {1.0}}, {{0.0}, {2.0}}, 3, 0.0, 5);
  REQUIRE(t.optimum.has_value());
  CHECK((*t.optimum)[0] == doctest::Approx(1.0).epsilon(1e-14));
  // F_S(opt) = (1/2)(0.5*1^2 + 0.5*1^2) = 0.5 under the per-client average
  CHECK(t.global_loss(*t.optimum) == doctest::Approx(0.5).epsilon(1e-14));
  // grad F_1(1) = [1], grad F_2(1) = [-1], grad F(1) = 0 => sigma_g = 1
  CHECK(measure_sigma_g(t, {1.0}) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("make_quadratic construction contracts") {
  const TaskSpec t = make_quadratic(6, 5, 20, 1.0, 0.2, 42);
  t.validate();
  REQUIRE(t.optimum.has_value());
  CHECK(l2_norm(t.global_full(*t.optimum).grad) < 1e-10);
  for (const ClientShard& s : t.shards)
    for (double a : s.curvature) {
      CHECK(a >= t.mu);
      CHECK(a <= t.beta);
    }
  CHECK_THROWS_AS(make_quadratic(0, 5, 20, 1.0, 0.2, 42), Error);

  SUBCASE("gradient is linear in theta: grad F_S = Abar (theta - theta*)") {
    ParamVec abar(6, 0.0);
    for (const ClientShard& s : t.shards)
      for (int j = 0; j < 6; ++j) abar[j] += s.curvature[j] / 5.0;
    CounterRng rng = CounterRng::derive({1234});
    for (int trial = 0; trial < 10; ++trial) {
      ParamVec theta(6);
      for (double& e : theta) e = 3.0 * rng.normal();
      const ParamVec g = t.global_full(theta).grad;
      for (int j = 0; j < 6; ++j)
        CHECK(g[j] == doctest::Approx(abar[j] * (theta[j] - (*t.optimum)[j]))
                          .epsilon(1e-9));
    }
  }
}

TEST_CASE("hetero_knob = 0 means identical clients and zero sigma_g") {
  const TaskSpec t = make_quadratic(4, 6, 10, 0.0, 0.0, 9);
  CHECK(measure_sigma_g(t, ParamVec{1.0, -2.0, 0.5, 3.0}) < 1e-12);
}

TEST_CASE("sigma_g grows monotonically with hetero_knob") {
  const ParamVec theta(5, 0.0);
  double prev = -1.0;
  for (double knob : {0.0, 0.5, 1.0, 2.0}) {
    const TaskSpec t = make_quadratic(5, 8, 10, knob, 0.0, 31);
    const double sg = measure_sigma_g(t, theta);
    CHECK(sg > prev);
    prev = sg;
  }
}

TEST_CASE("loss_grad basics") {
  const TaskSpec t = make_quadratic(3, 2, 8, 1.0, 0.3, 77);

  SUBCASE("full batch equals mean of single-sample calls") {
    const ParamVec theta{0.3, -0.7, 1.1};
    const auto ids = shard_ids(t, 1);
    const GradResult full = t.loss_grad(1, theta, ids);
    double loss = 0.0;
    ParamVec grad(3, 0.0);
    for (std::int64_t id : ids) {
      const GradResult one = t.loss_grad(1, theta, {id});
      loss += one.loss / static_cast<double>(ids.size());
      axpy_into(1.0 / static_cast<double>(ids.size()), one.grad, grad);
    }
    CHECK(full.loss == doctest::Approx(loss).epsilon(1e-12));
    for (int j = 0; j < 3; ++j)
      CHECK(full.grad[j] == doctest::Approx(grad[j]).epsilon(1e-12));
  }
  SUBCASE("unknown sample id is fatal") {
    CHECK_THROWS_AS(t.loss_grad(0, ParamVec(3, 0.0), {999999}), Error);
    CHECK_THROWS_AS(t.loss_grad(0, ParamVec(3, 0.0), {}), Error);
  }
  SUBCASE("zero gradient at the client optimum") {
    const TaskSpec e =
        make_quadratic_explicit({{1.0, 1.0}}, {{0.4, -0.2}}, 6, 0.0, 3);
    const GradResult g = e.client_full(0, ParamVec{0.4, -0.2});
    CHECK(l2_norm(g.grad) < 1e-14);
  }
}

TEST_CASE("stochastic gradient noise realizes the configured sigma") {
  const double sigma = 0.25;
  const TaskSpec t = make_quadratic(4, 3, 2000, 1.0, sigma, 13);
  const ParamVec theta(4, 0.0);
  const GradResult full = t.client_full(0, theta);
  // variance per coordinate of single-sample gradients around the shard mean
  ParamVec var(4, 0.0);
  const auto ids = shard_ids(t, 0);
  for (std::int64_t id : ids) {
    const GradResult one = t.loss_grad(0, theta, {id});
    for (int j = 0; j < 4; ++j) {
      const double d = one.grad[j] - full.grad[j];
      var[j] += d * d / static_cast<double>(ids.size());
    }
  }
  for (int j = 0; j < 4; ++j) {
    CHECK(var[j] <= sigma * sigma * 1.2);
    CHECK(var[j] >= sigma * sigma * 0.8);
  }
}

TEST_CASE("logreg at theta = 0 has loss ln 2") {
  const TaskSpec t = make_logreg(5, 4, 30, 0.5, 21);
  const ParamVec zero(5, 0.0);
  CHECK(t.global_loss(zero) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (int i = 0; i < t.clients; ++i)
    CHECK(t.client_full(i, zero).loss ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("gradients match central finite differences") {
  auto fd_check = [](const TaskSpec& t, const ParamVec& theta, int coords) {
    const GradResult g = t.client_full(0, theta);
    CounterRng rng = CounterRng::derive({404});
    const double h = 1e-5;
    for (int c = 0; c < coords; ++c) {
      const int j = static_cast<int>(rng.below(theta.size()));
      ParamVec tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      const double fd =
          (t.client_full(0, tp).loss - t.client_full(0, tm).loss) / (2 * h);
      CHECK(std::fabs(g.grad[j] - fd) <=
            1e-5 * std::max(1.0, std::fabs(fd)));
    }
  };

  SUBCASE("logreg") {
    const TaskSpec t = make_logreg(6, 2, 25, 0.5, 8);
    CounterRng rng = CounterRng::derive({17});
    ParamVec theta(6);
    for (double& e : theta) e = 0.5 * rng.normal();
    fd_check(t, theta, 6);
  }
  SUBCASE("mlp, 20 random coordinates") {
    const TaskSpec t = make_mlp(5, 8, 2, 20, 0.5, 8);
    ParamVec theta = t.initial_theta();
    fd_check(t, theta, 20);
  }
}

TEST_CASE("dirichlet partition") {
  SUBCASE("m = 1 sends everything to client 0") {
    const std::vector<int> labels{0, 1, 2, 0, 1, 2};
    const DirichletPartition p = dirichlet_partition(labels, 1, 0.5, 1);
    for (int a : p.assignment) CHECK(a == 0);
  }
  SUBCASE("fewer samples than clients is an error") {
    CHECK_THROWS_AS(dirichlet_partition({0, 1}, 3, 0.5, 1), Error);
  }
  SUBCASE("huge concentration approximates the global label mix") {
    // 10 seeds, 4 classes uniform; per-client class share within 5% of 0.25
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::vector<int> labels;
      for (int i = 0; i < 2000; ++i) labels.push_back(i % 4);
      const DirichletPartition p = dirichlet_partition(labels, 5, 1e6, seed);
      std::vector<std::vector<int>> counts(5, std::vector<int>(4, 0));
      std::vector<int> totals(5, 0);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        ++counts[p.assignment[i]][labels[i]];
        ++totals[p.assignment[i]];
      }
      for (int c = 0; c < 5; ++c) {
        REQUIRE(totals[c] > 0);
        for (int k = 0; k < 4; ++k)
          CHECK(std::fabs(counts[c][k] / double(totals[c]) - 0.25) < 0.05);
      }
    }
  }
  SUBCASE("low concentration concentrates labels per client") {
    // conc = 0.1, 10 classes: median dominant-class share should exceed 0.5
    std::vector<double> dominants;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::vector<int> labels;
      for (int i = 0; i < 3000; ++i) labels.push_back(i % 10);
      const DirichletPartition p = dirichlet_partition(labels, 10, 0.1, seed);
      std::vector<std::vector<int>> counts(10, std::vector<int>(10, 0));
      std::vector<int> totals(10, 0);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        ++counts[p.assignment[i]][labels[i]];
        ++totals[p.assignment[i]];
      }
      for (int c = 0; c < 10; ++c) {
        if (totals[c] == 0) continue;
        const int top = *std::max_element(counts[c].begin(), counts[c].end());
        dominants.push_back(top / double(totals[c]));
      }
    }
    std::sort(dominants.begin(), dominants.end());
    CHECK(dominants[dominants.size() / 2] > 0.5);
  }
  SUBCASE("every sample assigned exactly once with nonempty clients") {
    std::vector<int> labels;
    for (int i = 0; i < 300; ++i) labels.push_back(i % 3);
    const DirichletPartition p = dirichlet_partition(labels, 7, 0.3, 99);
    std::vector<int> totals(7, 0);
    for (int a : p.assignment) {
      REQUIRE(a >= 0);
      REQUIRE(a < 7);
      ++totals[a];
    }
    for (int c = 0; c < 7; ++c) CHECK(totals[c] >= 1);
  }
}

TEST_CASE("perturb_one_sample") {
  const TaskSpec t = make_quadratic(3, 4, 12, 1.0, 0.4, 55);

  SUBCASE("exactly one row differs, ids and shapes preserved") {
    const std::int64_t target = t.shards[2].samples[5].id;
    const TaskSpec p = perturb_one_sample(t, 2, target, 1000);
    p.validate();
    int diffs = 0;
    for (int i = 0; i < t.clients; ++i)
      for (int j = 0; j < t.samples_per_client; ++j) {
        const Sample& a = t.shards[i].samples[j];
        const Sample& b = p.shards[i].samples[j];
        REQUIRE(a.id == b.id);
        if (a.x != b.x || a.y != b.y) ++diffs;
      }
    CHECK(diffs == 1);
    // optimum refreshed for the neighbor dataset
    CHECK(l2_norm(p.global_full(*p.optimum).grad) < 1e-10);
  }
  SUBCASE("replacement with identical content is a no-op") {
    const std::int64_t target = t.shards[1].samples[0].id;
    const TaskSpec p = t.replace_sample(1, target, t.shards[1].samples[0]);
    CHECK(p.shards[1].samples[0].x == t.shards[1].samples[0].x);
    CHECK(*p.optimum == *t.optimum);
  }
  SUBCASE("bad id is fatal") {
    CHECK_THROWS_AS(perturb_one_sample(t, 0, 424242, 1), Error);
  }
  SUBCASE("replacements are drawn from the shard's own distribution (KS)") {
    // 100 replacement draws vs the original shard's first coordinates
    std::vector<double> original, replaced;
    const TaskSpec big = make_quadratic(2, 2, 400, 1.0, 0.5, 66);
    for (const Sample& z : big.shards[0].samples) original.push_back(z.x[0]);
    const std::int64_t target = big.shards[0].samples[3].id;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const TaskSpec p = perturb_one_sample(big, 0, target, seed);
      replaced.push_back(p.shards[0].samples[3].x[0]);
    }
    CHECK(ks_two_sample_p(original, replaced) > 0.01);
  }
}

TEST_CASE("task JSON snapshot carries the schema fields") {
  const TaskSpec t = make_quadratic(2, 2, 3, 0.5, 0.1, 7);
  const std::string js = task_to_json(t);
  for (const char* key :
       {"\"kind\"", "\"dim\"", "\"m\"", "\"n\"", "\"seeds\"", "\"shards\"",
        "\"samples\"", "\"optimum\""})
    CHECK(js.find(key) != std::string::npos);
}
