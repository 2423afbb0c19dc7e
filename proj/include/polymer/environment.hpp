#ifndef POLYMER_ENVIRONMENT_HPP
#define POLYMER_ENVIRONMENT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

#include "polymer/numeric.hpp"

namespace polymer {

// Spatial coordinates. Index i sits at origin + i * spacing; the lattice is
// origin 0, spacing 1.
struct Space {
  bool lattice = true;
  double origin = 0.0;
  double spacing = 1.0;

  static Space integers() { return {}; }
  static Space grid(double origin, double spacing) { return {false, origin, spacing}; }
  double position(long i) const noexcept { return origin + spacing * static_cast<double>(i); }
  bool operator==(const Space&) const = default;
};

enum class MarginalKind { gaussian, bernoulli, exponentialized };

// One-site law of an i.i.d. field.
//   gaussian:        F ~ N(mu, sigma^2), sigma >= 0 (sigma = 0 gives F = mu)
//   bernoulli:       F = high with probability p_hit, low otherwise
//   exponentialized: F = shift + X, X ~ Exp(rate), rate > 2
struct IidMarginal {
  MarginalKind kind = MarginalKind::gaussian;
  double a = 0.0;  // mu | p_hit | rate
  double b = 0.0;  // sigma | low | shift
  double c = 0.0;  // - | high | -
};

// Poisson points of the given intensity on the line, independently for each
// time, each carrying the bump phi(x - point) supported on [0, width].
struct MollifiedPoisson {
  double intensity = 1.0;
  double width = 1.0;
  double height = 1.0;
  // c (1 - (2u/M - 1)^2)^2 on [0, M], zero elsewhere.
  double bump(double u) const noexcept;
};

struct EnvironmentSpec {
  std::variant<IidMarginal, MollifiedPoisson> kind;
  std::uint64_t seed = 0;

  static EnvironmentSpec zero(std::uint64_t seed = 0);
  static EnvironmentSpec gaussian(double mu, double sigma, std::uint64_t seed);
  static EnvironmentSpec bernoulli(double p_hit, double low, double high, std::uint64_t seed);
  static EnvironmentSpec exponentialized(double rate, double shift, std::uint64_t seed);
  static EnvironmentSpec mollified_poisson(double intensity, double width, double height,
                                           std::uint64_t seed);

  bool is_iid() const noexcept { return std::holds_alternative<IidMarginal>(kind); }
  bool is_poisson() const noexcept { return std::holds_alternative<MollifiedPoisson>(kind); }
  // True when F is a.s. constant.
  bool deterministic() const noexcept;
  // Finite support of a discrete marginal, else empty.
  std::vector<std::pair<double, double>> atoms() const;  // (value, probability)

  EnvironmentSpec with_seed(std::uint64_t s) const {
    EnvironmentSpec out = *this;
    out.seed = s;
    return out;
  }
  // Validates parameters; throws PolymerError.
  void validate() const;

  nlohmann::json to_json() const;
  static EnvironmentSpec from_json(const nlohmann::json& j);
};

// Seed of replica r derived from a base seed; replicas never share streams.
std::uint64_t replica_seed(std::uint64_t base, std::uint64_t replica) noexcept;

// Pointwise value F_k(x). On the lattice x must be an integer.
double field_value(const EnvironmentSpec& spec, long k, double x);

// Read access to a realization of F in index coordinates.
class FieldSource {
 public:
  virtual ~FieldSource() = default;
  virtual const Space& space() const noexcept = 0;
  // out[j] = F_k(first + j * stride). Throws if any index is outside the window.
  virtual void fill(long k, long first, long stride, std::span<double> out) const = 0;
  // Inclusive index range available at time k; nullopt means unbounded.
  virtual std::optional<std::pair<long, long>> index_bounds(long k) const = 0;
  virtual bool is_zero() const noexcept { return false; }
};

// Unbounded realization generated on demand.
class LazyField final : public FieldSource {
 public:
  LazyField(EnvironmentSpec spec, Space space);
  const Space& space() const noexcept override { return space_; }
  void fill(long k, long first, long stride, std::span<double> out) const override;
  std::optional<std::pair<long, long>> index_bounds(long) const override { return std::nullopt; }
  bool is_zero() const noexcept override { return zero_; }
  const EnvironmentSpec& spec() const noexcept { return spec_; }

 private:
  EnvironmentSpec spec_;
  Space space_;
  bool zero_ = false;
};

struct SlabWindow {
  long m = 0;            // first time
  long n = 1;            // one past the last time
  Space space;
  long first = 0;        // first spatial index
  std::size_t count = 1; // number of spatial indices
  bool operator==(const SlabWindow&) const = default;
};

// Materialized F over [m, n) x [first, first + count).
class EnvironmentSlab final : public FieldSource {
 public:
  EnvironmentSlab(EnvironmentSpec spec, SlabWindow window, std::vector<double> values);

  const Space& space() const noexcept override { return window_.space; }
  void fill(long k, long first, long stride, std::span<double> out) const override;
  std::optional<std::pair<long, long>> index_bounds(long k) const override;
  bool is_zero() const noexcept override { return zero_; }

  const EnvironmentSpec& spec() const noexcept { return spec_; }
  const SlabWindow& window() const noexcept { return window_; }
  double at(long k, long i) const;
  std::span<const double> row(long k) const;
  const std::vector<double>& values() const noexcept { return values_; }
  bool operator==(const EnvironmentSlab& o) const {
    return window_ == o.window_ && values_ == o.values_;
  }

 private:
  EnvironmentSpec spec_;
  SlabWindow window_;
  std::vector<double> values_;
  bool zero_ = false;
};

inline constexpr std::size_t kDefaultSlabBudgetBytes = std::size_t{1} << 31;

// Deterministic in (spec, window). Rows are keyed by (seed, k) and sites or
// Poisson unit cells by their absolute index, so overlapping windows agree.
EnvironmentSlab generate_slab(const EnvironmentSpec& spec, const SlabWindow& window,
                              std::size_t budget_bytes = kDefaultSlabBudgetBytes);

struct AnnealedExponent {
  double value = 0.0;
  double se = 0.0;  // zero for closed forms and deterministic quadrature
};

// log E[exp(-alpha F_0(0))]; alpha = 1 gives the annealed exponent.
AnnealedExponent annealed_log_mgf(const EnvironmentSpec& spec, double alpha);
AnnealedExponent annealed_exponent(const EnvironmentSpec& spec);

struct CorrelationPoint {
  double lag = 0.0;
  double cov = 0.0;
  double se = 0.0;
};

// Monte Carlo estimate of E[(e^{-F_0(0)} - e^theta)(e^{-F_0(x)} - e^theta)].
std::vector<CorrelationPoint> correlation_probe(const EnvironmentSpec& spec,
                                                std::span<const double> lags,
                                                std::size_t replicas);

// Shot-noise covariance of the Poisson field, intensity * int phi(u) phi(u+x) du.
double poisson_field_covariance(const MollifiedPoisson& field, double lag);
// Exact covariance of e^{-F} for the Poisson field (Campbell formula).
double poisson_boltzmann_covariance(const MollifiedPoisson& field, double lag);

// CSV (k, x, F) plus a JSON header carrying spec, seed and window.
void write_slab(const EnvironmentSlab& slab, const std::filesystem::path& csv_path,
                const std::filesystem::path& header_path);
EnvironmentSlab read_slab(const std::filesystem::path& csv_path,
                          const std::filesystem::path& header_path);

nlohmann::json to_json(const SlabWindow& w);
SlabWindow window_from_json(const nlohmann::json& j);

}  // namespace polymer

#endif  // POLYMER_ENVIRONMENT_HPP
