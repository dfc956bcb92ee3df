#include <doctest.h>

#include <cstring>

#include "fedlab/numkit.hpp"
#include "fedlab/rng.hpp"

using namespace fedlab;

TEST_CASE("axpy basics") {
  const ParamVec v{1.5, -2.0, 3.25};

  SUBCASE("zero scaling returns y") {
    CHECK(axpy(0.0, ParamVec{9.0, 9.0, 9.0}, v) == v);
  }
  SUBCASE("componentwise add") {
    CHECK(axpy(1.0, ParamVec{1, 2}, ParamVec{3, 4}) == ParamVec{4, 6});
  }
  SUBCASE("self cancellation") {
    CHECK(axpy(-1.0, v, v) == ParamVec{0, 0, 0});
  }
  SUBCASE("dimension mismatch is fatal") {
    CHECK_THROWS_AS(axpy(1.0, ParamVec{1}, ParamVec{1, 2}), Error);
  }
}

TEST_CASE("mean_vecs") {
  SUBCASE("single element") {
    const ParamVec v{1, 2, 3};
    CHECK(mean_vecs({v}) == v);
  }
  SUBCASE("midpoint") {
    CHECK(mean_vecs({{0, 0}, {2, 4}}) == ParamVec{1, 2});
  }
  SUBCASE("idempotent on k copies") {
    const ParamVec v{0.1, -7.3, 2.5e-9};
    CHECK(mean_vecs({v, v, v, v}) == v);  // power-of-two count: exact
    const ParamVec m3 = mean_vecs({v, v, v});
    for (std::size_t i = 0; i < v.size(); ++i)
      CHECK(m3[i] == doctest::Approx(v[i]).epsilon(1e-15));
  }
  SUBCASE("empty list is fatal") {
    CHECK_THROWS_AS(mean_vecs({}), Error);
  }
}

TEST_CASE("mean minimizes sum of squared distances (perturbation test)") {
  CounterRng rng = CounterRng::derive({5});
  std::vector<ParamVec> vs;
  for (int i = 0; i < 7; ++i) {
    ParamVec v(4);
    for (double& e : v) e = rng.normal();
    vs.push_back(v);
  }
  const ParamVec mean = mean_vecs(vs);
  auto objective = [&](const ParamVec& c) {
    double s = 0.0;
    for (const ParamVec& v : vs) s += sq_dist(c, v);
    return s;
  };
  const double at_mean = objective(mean);
  for (int trial = 0; trial < 50; ++trial) {
    ParamVec c = mean;
    for (double& e : c) e += 0.1 * rng.normal();
    CHECK(objective(c) >= at_mean);
  }
}

TEST_CASE("norm and dot") {
  CHECK(l2_norm(ParamVec{3, 4}) == 5.0);
  CHECK(dot(ParamVec{1, 2, 3}, ParamVec{0, 0, 0}) == 0.0);
  CHECK(dot(ParamVec{1, 0}, ParamVec{0, 1}) == 0.0);
  CHECK_THROWS_AS(dot(ParamVec{1}, ParamVec{1, 2}), Error);
}

TEST_CASE("reductions are bit-reproducible across repeats") {
  CounterRng rng = CounterRng::derive({77});
  std::vector<ParamVec> vs;
  for (int i = 0; i < 13; ++i) {
    ParamVec v(8);
    for (double& e : v) e = rng.normal() * 1e3;
    vs.push_back(v);
  }
  const ParamVec m1 = mean_vecs(vs);
  const ParamVec m2 = mean_vecs(vs);
  CHECK(std::memcmp(m1.data(), m2.data(), m1.size() * sizeof(double)) == 0);
  CHECK(dot(m1, vs[0]) == dot(m1, vs[0]));
}

TEST_CASE("all_finite flags NaN and Inf") {
  CHECK(all_finite(ParamVec{0.0, -1e308}));
  CHECK_FALSE(all_finite(ParamVec{0.0, std::nan("")}));
  CHECK_FALSE(all_finite(ParamVec{1.0 / 0.0}));
}
