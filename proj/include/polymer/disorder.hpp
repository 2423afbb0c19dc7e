#ifndef POLYMER_DISORDER_HPP
#define POLYMER_DISORDER_HPP

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymer/transfer.hpp"

namespace polymer {

// Kernel, environment law and spatial discretization of one experiment.
// Replica r uses the environment spec with seed seeds[r].
struct Model {
  StepKernel kernel = StepKernel::ssrw();
  EnvironmentSpec env = EnvironmentSpec::zero();
  Space space = Space::integers();
  TransferOptions transfer;
  double start = 0.0;  // starting point a
  unsigned jobs = 1;
};

// Kernel, environment, space and start; echoed into every report.
nlohmann::json model_json(const Model& model);

// n_max, ceil(n_max / 2), ceil(n_max / 4), ..., 1 in increasing order.
std::vector<long> geometric_checkpoints(long n_max);

// Seeds base, base + 1, ... mapped through replica_seed.
std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count);

struct TraceRecord {
  long n = 0;
  double mean_log_z = 0.0;  // mean of (1/n) log Z^n
  double se = 0.0;
  double mean_log_w = 0.0;  // mean of (1/n) log W^n
};

struct DisorderTrace {
  std::vector<TraceRecord> records;
  double theta = 0.0;
  std::size_t replicas = 0;   // replicas that completed
  std::size_t failures = 0;   // replicas excluded after a transfer error
  std::vector<std::string> failure_messages;
  std::vector<std::uint64_t> seeds;
  nlohmann::json spec;

  const TraceRecord& at(long n) const;
  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

DisorderTrace free_energy_trace(const Model& model, long n_max, std::span<const std::uint64_t> seeds,
                                std::optional<std::vector<long>> checkpoints = std::nullopt);

struct MomentPoint {
  long n = 0;
  double mean = 0.0;  // mean of (W^n)^theta
  double se = 0.0;
};

struct FractionalMoment {
  double theta_exp = 0.0;
  std::vector<MomentPoint> points;
  double slope = 0.0;      // log mean against log n
  double slope_se = 0.0;
  std::vector<long> fit_ns;
  nlohmann::json to_json() const;
};

// Fits over n >= n_max / 10 when that leaves three points, else over all.
FractionalMoment fractional_moment(const Model& model, double theta_exp, std::span<const long> ns,
                                   std::span<const std::uint64_t> seeds);

enum class MartingaleMode { exhaustive, monte_carlo };

struct WindowCheck {
  std::vector<long> window;  // endpoint sites U
  double mean = 0.0;         // E[W_{x,U}]
  double se = 0.0;
  double exact = 0.0;        // P{S_n in U}
};

struct MartingaleResult {
  double mean_w = 0.0;
  double se = 0.0;
  double error_bound = 0.0;  // 1e-12 exhaustive, 4 SE Monte Carlo
  std::size_t samples = 0;   // configurations or replicas
  std::vector<WindowCheck> windows;
  bool passes() const;
};

// W_{x,U} = Z_{x,U} e^{-theta n} with Z_{x,U} the point-to-point sum over U.
MartingaleResult martingale_check(const Model& model, long n, MartingaleMode mode,
                                  std::span<const std::vector<long>> windows = {},
                                  std::span<const std::uint64_t> seeds = {});

struct ShapePoint {
  double v = 0.0;
  long x = 0;
  double lambda = 0.0;
  double se = 0.0;
};

struct ShapeResult {
  long n = 0;
  std::vector<ShapePoint> points;
  double max_evenness_z = 0.0;      // max |L(v) - L(-v)| / SE of the paired difference
  std::size_t concavity_violations = 0;  // second differences above 4 SE
  double max_concavity_z = 0.0;
  nlohmann::json to_json() const;
};

// Lattice only; |v| <= 1. x = sign(v) floor(|v| n), moved one step toward
// zero when its parity differs from n.
ShapeResult shape_function(const Model& model, long n, std::span<const double> vs,
                           std::span<const std::uint64_t> seeds);
long shape_site(double v, long n);

struct ChaosResult {
  double lhs = 0.0;  // mean U^2 over fresh time-n slices
  double lhs_se = 0.0;
  double rhs = 0.0;  // Var(e^{-F - theta}) * I_n(rho^n)
  double ratio = 0.0;
  double ratio_se = 0.0;
  double overlap = 0.0;
  double variance = 0.0;
};

// rho^n comes from the environment with seed past_seed; the time-n slice is
// redrawn from seeds[r] for each replica.
ChaosResult chaos_identity_check(const Model& model, long n, std::uint64_t past_seed,
                                 std::span<const std::uint64_t> seeds);

struct DensityBoundRow {
  long n = 0;
  double sup_ratio = 0.0;
  double argmax_z = 0.0;
};

struct DensityBoundResult {
  std::vector<DensityBoundRow> rows;
  double worst = 0.0;
  bool skipped = false;  // delta covers the whole line
  bool recentered = false;
};

// sup over (n, z) of P^n{S_n in [z, z + delta)} sqrt(n) (1 + z^2 / n) / delta,
// computed by the grid transfer with F = 0 and spacing h.
DensityBoundResult density_bound_check(const StepKernel& kernel, std::span<const long> ns, double delta,
                                       std::span<const double> zs, double h);

}  // namespace polymer

#endif  // POLYMER_DISORDER_HPP
