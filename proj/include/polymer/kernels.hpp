#ifndef POLYMER_KERNELS_HPP
#define POLYMER_KERNELS_HPP

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymer/numeric.hpp"

namespace polymer {

enum class KernelFamily { ssrw, gaussian, laplace, uniform, tabulated };

const char* to_string(KernelFamily f) noexcept;

// Closed interval; either end may be infinite.
struct Interval {
  double lo = kNegInf;
  double hi = kInf;
  double width() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return lo <= x && x <= hi; }
};

// Pointwise density and energy V = -log p.
struct DensityEnergy {
  double p = 0.0;
  double V = kInf;
  bool infinite_energy() const noexcept { return V == kInf; }
};

// One-step law of the reference walk. Either the simple symmetric walk on
// the integers or an absolutely continuous law on the line. Instances are
// immutable after construction.
class StepKernel {
 public:
  static StepKernel ssrw();
  static StepKernel gaussian(double sigma, double location = 0.0);
  static StepKernel laplace(double scale, double location = 0.0);
  static StepKernel uniform(double lo, double hi);
  // Piecewise-linear density through (origin + i*spacing, values[i]); zero
  // outside the tabulated range. Values are renormalized to unit mass; the
  // mass before renormalization is kept in input_mass().
  static StepKernel tabulated(double origin, double spacing, std::vector<double> values);

  KernelFamily family() const noexcept { return family_; }
  bool is_lattice() const noexcept { return family_ == KernelFamily::ssrw; }

  // Density for continuous families, point mass for the lattice walk.
  double density(double x) const noexcept;
  double energy(double x) const noexcept;

  Interval support() const noexcept;
  double mean() const noexcept { return mean_; }
  double variance() const noexcept { return variance_; }
  double sd() const noexcept { return std::sqrt(variance_); }
  double sup_density() const noexcept { return sup_p_; }
  double mode() const noexcept { return mode_; }
  // Largest verified finite moment order; +inf for closed-form families.
  double moment_order() const noexcept { return moment_order_; }
  bool log_concave() const noexcept { return log_concave_; }
  // [L, R] outside which p is monotone, when the construction found one.
  const std::optional<Interval>& monotone_tails() const noexcept { return monotone_tails_; }
  double input_mass() const noexcept { return input_mass_; }

  // Maximal interval containing the mode on which p >= 0.5 * sup p,
  // clipped to the support.
  Interval half_max_interval() const;

  // Interval outside which the law has at most `tail_mass` (split evenly
  // between the two tails). Exact support for compactly supported families.
  Interval effective_support(double tail_mass) const;

  // Same law translated so that its mean is zero.
  StepKernel recentered() const;

  // Tabulated data (empty for closed-form families).
  double grid_origin() const noexcept { return origin_; }
  double grid_spacing() const noexcept { return spacing_; }
  const std::vector<double>& grid_values() const noexcept { return values_; }

  double param_sigma() const noexcept { return a_; }
  double param_location() const noexcept { return b_; }

  nlohmann::json to_json() const;
  static StepKernel from_json(const nlohmann::json& j);

  bool operator==(const StepKernel& other) const;

 private:
  StepKernel() = default;
  void finish_closed_form();

  KernelFamily family_ = KernelFamily::ssrw;
  // gaussian: a = sigma, b = location; laplace: a = scale, b = location;
  // uniform: a = lo, b = hi.
  double a_ = 0.0;
  double b_ = 0.0;
  double origin_ = 0.0;
  double spacing_ = 0.0;
  std::vector<double> values_;
  double input_mass_ = 1.0;

  double mean_ = 0.0;
  double variance_ = 0.0;
  double sup_p_ = 0.0;
  double mode_ = 0.0;
  double moment_order_ = kInf;
  bool log_concave_ = false;
  std::optional<Interval> monotone_tails_;
};

DensityEnergy density_energy(const StepKernel& kernel, double x);

struct DensityAssumptionReport {
  bool passes_A3 = false;
  bool log_concave = false;
  bool moments_ok = false;      // some nu > 2 with a convergent moment integral
  double moment_order = 0.0;    // largest verified nu, 0 if none
  bool bounded = false;         // sup p < inf
  bool monotone_tails = false;  // monotone outside [L, R], p > 0 on [L, R]
  Interval tails;               // the [L, R] used
  double inf_on_tails = 0.0;    // inf of p over [L, R]
  double worst_second_difference = 0.0;
  std::vector<std::string> details;
};

// Numerical checks of the moment, boundedness and tail-monotonicity
// requirements on a density, plus a second-difference scan of V.
DensityAssumptionReport validate_density_assumptions(const StepKernel& kernel);

// 2 * sup p / inf_{[L,R]} p. Uses the half-max interval when none is given.
double density_ratio_r0(const StepKernel& kernel, std::optional<Interval> tails = std::nullopt);

// lambda(E_t) with E_t = { y : p(y) >= r0 * p(y + t) }.
double shift_exceptional_measure(const StepKernel& kernel, double r0, double t);

// The step law restricted to a grid of spacing h: weights[j] is the
// probability of a displacement of (first_offset + j) cells. Midpoint rule
// h * p(j h), truncated where the tails carry less than tail_mass, then
// renormalized to sum to one.
struct DiscreteStep {
  long first_offset = 0;
  std::vector<double> weights;
  double raw_mass = 1.0;     // sum before renormalization
  double tail_mass = 0.0;    // mass dropped by truncation
  long last_offset() const noexcept {
    return first_offset + static_cast<long>(weights.size()) - 1;
  }
};

DiscreteStep discretize(const StepKernel& kernel, double h, double tail_mass = 1e-14);

}  // namespace polymer

#endif  // POLYMER_KERNELS_HPP
