#ifndef FEDLAB_NUMKIT_HPP
#define FEDLAB_NUMKIT_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "fedlab/common.hpp"

namespace fedlab {

// All model parameters live in one flat vector of doubles. Every reduction
// below runs in a fixed left-to-right order so results are bit-reproducible
// regardless of how callers parallelize around them.
using ParamVec = std::vector<double>;

inline void check_same_dim(const ParamVec& x, const ParamVec& y,
                           const char* op) {
  if (x.size() != y.size())
    fail(std::string(op) + ": dimension mismatch (" +
         std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
}

// result[i] = a*x[i] + y[i]
inline ParamVec axpy(double a, const ParamVec& x, const ParamVec& y) {
  check_same_dim(x, y, "axpy");
  ParamVec r(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r[i] = a * x[i] + y[i];
  return r;
}

// y[i] += a*x[i]
inline void axpy_into(double a, const ParamVec& x, ParamVec& y) {
  check_same_dim(x, y, "axpy_into");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline ParamVec sub(const ParamVec& x, const ParamVec& y) {
  check_same_dim(x, y, "sub");
  ParamVec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
  return r;
}

inline ParamVec scaled(double a, const ParamVec& x) {
  ParamVec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = a * x[i];
  return r;
}

// Componentwise arithmetic mean, summed in list order.
inline ParamVec mean_vecs(const std::vector<ParamVec>& vs) {
  if (vs.empty()) fail("mean_vecs: empty list");
  const std::size_t d = vs.front().size();
  ParamVec r(d, 0.0);
  for (const ParamVec& v : vs) {
    check_same_dim(v, r, "mean_vecs");
    for (std::size_t i = 0; i < d; ++i) r[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(vs.size());
  for (double& e : r) e *= inv;
  return r;
}

inline double dot(const ParamVec& x, const ParamVec& y) {
  check_same_dim(x, y, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double l2_norm(const ParamVec& x) { return std::sqrt(dot(x, x)); }

inline double sq_dist(const ParamVec& x, const ParamVec& y) {
  check_same_dim(x, y, "sq_dist");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

inline bool all_finite(const ParamVec& x) {
  for (double e : x)
    if (!std::isfinite(e)) return false;
  return true;
}

}  // namespace fedlab

#endif
