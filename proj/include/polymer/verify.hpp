#ifndef POLYMER_VERIFY_HPP
#define POLYMER_VERIFY_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymer/transfer.hpp"

namespace polymer {

struct CheckOutcome {
  std::string name;
  std::size_t instances = 0;
  std::size_t violations = 0;
  // Smallest signed margin seen; negative beyond the tolerance is a violation.
  double worst_margin = kInf;
  double tolerance = 0.0;
  std::uint64_t seed_base = 0;  // trial t used replica_seed(seed_base, t)
  std::size_t seed_count = 0;
  std::vector<std::string> notes;  // archived offending instances, capped
  nlohmann::json details = nlohmann::json::object();

  bool passed() const noexcept { return violations == 0; }
  // Counts one instance; returns true when margin < -tolerance (or NaN).
  bool record(double margin);
  // Keeps the first 20 notes.
  void archive(std::string note);
  nlohmann::json to_json() const;
};

enum class Backend { lattice, grid };
const char* to_string(Backend b) noexcept;

inline constexpr double kLatticeTolerance = 1e-9;
inline constexpr double kGridTolerance = 1e-7;

struct VerifyOptions {
  Backend backend = Backend::lattice;
  std::size_t trials = 0;  // 0 picks the check's default count
  std::uint64_t seed_base = 1;
  long n = 0;              // 0 picks the check's default horizon
  StepKernel kernel = StepKernel::gaussian(1.0);  // grid backend
  double h = 0.05;                                // grid backend
};

// Random environment for trial t. Lattice: Gaussian or Bernoulli with random
// parameters, alternating with t. Grid: a smooth mollified Poisson field.
EnvironmentSpec random_environment(Backend backend, std::uint64_t seed_base, std::size_t trial);

// log Z_{a,u}^{m,n} for u = a - (n - m), ..., a + (n - m) (step 2) by summing
// over all 2^{n-m} nearest-neighbour paths. Shares no code with the engine.
std::vector<double> enumerate_point_to_point(const FieldSource& field, long a, long m, long n);

// log Z_{a,u} + log Z_{b,v} >= log Z_{a,v} + log Z_{b,u} for a <= b, u <= v.
// Lattice: n in 1..10 cycled over trials (default 1000), starts -4..4.
// Grid: default n = 3, 200 trials, starts {-1, 0, 1}.
CheckOutcome check_path_crossing(const VerifyOptions& opts = {});

// rho_a^n below rho_b^n for a <= b, and pinned time marginals mu_{a,u}
// below mu_{a,v} for u <= v at every intermediate time.
CheckOutcome check_endpoint_monotonicity(const VerifyOptions& opts = {});

// rho_0^{m,n}(A) = sum_x rho_x^{k,n}(A) mu_k(x) for random sets A, all m < k < n.
CheckOutcome check_disintegration(const VerifyOptions& opts = {});

// Both one-step ratio inequalities under their cone conditions and the
// telescoped two-start consequence; exact lattice, default n = 4, 300 slabs.
CheckOutcome check_ratio_lemmas(const VerifyOptions& opts = {});

struct RatioBandOptions {
  long a = 0;
  long b = 2;
  long n_max = 2000;
  std::size_t replicas = 20;
  std::uint64_t seed_base = 1;
  double band_factor = 1.0;  // B = band_factor * max |log ratio| over the first quartile
  double max_excursion_fraction = 0.05;
};

// Tracks log(Z_a^n / Z_b^n); excursions beyond the per-seed band after the
// first quartile are counted. A violation is a seed whose excursion fraction
// exceeds max_excursion_fraction.
CheckOutcome check_ratio_band(const EnvironmentSpec& env, const RatioBandOptions& opts = {});

struct PositiveMassOptions {
  Backend backend = Backend::lattice;
  double r = 1.0;
  std::vector<long> ms{-4};
  long n_max = 500;
  std::size_t replicas = 20;
  std::uint64_t seed_base = 1;
  double floor = 0.0;  // the second-half minimum must exceed this
  StepKernel kernel = StepKernel::gaussian(1.0);  // grid backend
  double h = 0.1;
};

// Time-0 marginal mass of the polymer started at 0 at time m < 0, on (r, inf)
// and on (-inf, -r), minimized over the second half of the horizon.
CheckOutcome check_positive_mass(const EnvironmentSpec& env, const PositiveMassOptions& opts = {});

// Random discrete measures: I(r) <= I(Kr) <= 9 K I(r), I(r) <= 9 sup nu(B(x, r)),
// sup nu(B(x, r))^2 <= I(2r); plus two-spike measures around separation r.
CheckOutcome check_overlap_comparison(const VerifyOptions& opts = {});

// Normalized convolution CDFs of random positive measures on 128-point grids:
// CDF at z dominates CDF at z' for z <= z'. Default 500 measures.
CheckOutcome check_convolution_dominance(const StepKernel& kernel, const VerifyOptions& opts = {});

// All exact lattice checks with their default counts.
std::vector<CheckOutcome> run_lattice_suite(std::uint64_t seed_base = 1);

void write_outcomes_json(std::span<const CheckOutcome> outcomes, const std::filesystem::path& path);
void write_junit_xml(std::span<const CheckOutcome> outcomes, const std::filesystem::path& path,
                     const std::string& suite = "polymerlab.verify");

}  // namespace polymer

#endif  // POLYMER_VERIFY_HPP
