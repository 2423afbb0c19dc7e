#ifndef POLYMER_NUMERIC_HPP
#define POLYMER_NUMERIC_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace polymer {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Errors raised by the library. The category lets the CLI map failures to
// exit codes and machine-readable reports without string matching.
enum class ErrorKind {
  input,           // malformed or non-finite argument
  parameter,       // argument outside its admissible range
  invalid_kernel,  // step law violates its own contract
  capacity,        // window or grid exceeds the memory budget
  truncation,      // grid boundary absorbed too much mass
  degenerate,      // measure with no mass / all weights -inf
  unsupported,     // operation not defined for this backend or marginal
  divergent,       // infinite exponential moment
  mismatch,        // incompatible supports
  fit              // not enough points for a regression
};

class PolymerError : public std::runtime_error {
 public:
  PolymerError(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

// log(exp(a) + exp(b)) without overflow; -inf is the additive identity.
inline double log_add_exp(double a, double b) noexcept {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

// Max-shifted log-sum-exp. Returns -inf for an empty span or all -inf input.
inline double log_sum_exp(std::span<const double> xs) noexcept {
  double mx = kNegInf;
  for (double x : xs) mx = std::max(mx, x);
  if (mx == kNegInf) return kNegInf;
  if (mx == kInf) return kInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;
};

// Sample mean and standard error of the mean. The input order is the
// caller's responsibility; reducers sort by seed before calling this.
MeanSE mean_se(std::span<const double> xs);

// Least-squares slope and intercept of y on x.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};
LinearFit least_squares(std::span<const double> x, std::span<const double> y);

}  // namespace polymer

#endif  // POLYMER_NUMERIC_HPP
