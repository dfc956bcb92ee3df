#ifndef FEDLAB_COMMON_HPP
#define FEDLAB_COMMON_HPP

#include <stdexcept>
#include <string>

namespace fedlab {

// Contract violations (dimension mismatches, bad ids, invalid config).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a simulation produces non-finite parameters; divergence is
// signal, not noise, so we abort with context instead of clamping.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace fedlab

#endif
