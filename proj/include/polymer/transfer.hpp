#ifndef POLYMER_TRANSFER_HPP
#define POLYMER_TRANSFER_HPP

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "polymer/environment.hpp"
#include "polymer/kernels.hpp"

namespace polymer {

// Log-domain values on the sites first, first + stride, ... of a Space at
// time k. On the lattice stride is 2 (one parity class); on grids it is 1.
struct LogWeightField {
  long k = 0;
  Space space;
  long first = 0;
  long stride = 1;
  std::vector<double> logw;

  std::size_t size() const noexcept { return logw.size(); }
  long index(std::size_t j) const noexcept { return first + static_cast<long>(j) * stride; }
  double position(std::size_t j) const noexcept { return space.position(index(j)); }
  // -inf for indices not stored.
  double at_index(long i) const noexcept;
  double log_total() const;
};

// Probability masses on sites of a Space. On grids mass[j] is the mass of
// the cell around the grid point, so density(j) = mass[j] / spacing.
struct EndpointMeasure {
  long time = 0;
  Space space;
  long first = 0;
  long stride = 1;
  std::vector<double> mass;
  double log_normalizer = 0.0;  // log of the partition function normalized away

  std::size_t size() const noexcept { return mass.size(); }
  long index(std::size_t j) const noexcept { return first + static_cast<long>(j) * stride; }
  double position(std::size_t j) const noexcept { return space.position(index(j)); }
  double density(std::size_t j) const noexcept {
    return space.lattice ? mass[j] : mass[j] / space.spacing;
  }
  double total() const;

  static EndpointMeasure point_mass(Space space, long index, long time = 0);
  // Normalizes nonnegative weights; throws degenerate when they sum to zero.
  static EndpointMeasure from_weights(Space space, long first, long stride,
                                      std::vector<double> weights, long time = 0);
  // Normalizes exp(logw); throws degenerate when every entry is -inf.
  static EndpointMeasure from_log_field(const LogWeightField& field);
};

struct TransferOptions {
  double tail_mass = 1e-14;             // kernel truncation per step (grids)
  double truncation_tolerance = 1e-9;   // boundary loss allowed per step
  double max_halfwidth = kInf;          // grid domain cap around the start
};

struct SweepStats {
  double kernel_tail_mass = 0.0;  // mass dropped when discretizing the kernel
  double boundary_loss = 0.0;     // largest per-step fraction lost at a cap
  std::size_t max_sites = 0;
};

// Forward sweep from delta_a at time m. The visitor sees, for k = m..n, the
// normalized log endpoint masses log rho_a^{m,k} and log Z_a^{m,k}.
using SweepVisitor = std::function<void(const LogWeightField& log_rho, double log_z)>;
SweepStats forward_sweep(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                         const SweepVisitor& visit, const TransferOptions& opts = {});

// The same sweep one step at a time, so several starts can advance together.
class ForwardStepper {
 public:
  ForwardStepper(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                 const TransferOptions& opts = {});
  ForwardStepper(ForwardStepper&&) noexcept;
  ForwardStepper& operator=(ForwardStepper&&) noexcept;
  ~ForwardStepper();

  const LogWeightField& log_rho() const noexcept;
  double log_z() const noexcept;
  long time() const noexcept;
  bool done() const noexcept;
  void step();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

double point_to_line_logZ(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                          const TransferOptions& opts = {});

// log Z_{a,u}^{m,n} for every reachable u: a log mass on the lattice, a log
// density with respect to Lebesgue measure on grids.
LogWeightField point_to_point_field(const StepKernel& kernel, const FieldSource& field, double a, long m,
                                    long n, const TransferOptions& opts = {});

// -inf when u is unreachable. On grids u must be a grid point.
double point_to_point_logZ(const StepKernel& kernel, const FieldSource& field, double a, double u, long m,
                           long n, const TransferOptions& opts = {});

EndpointMeasure endpoint_distribution(const StepKernel& kernel, const FieldSource& field, double a, long m,
                                      long n, const TransferOptions& opts = {});

// Law of the polymer position at time k (m <= k <= n). With `pinned`, the
// polymer is the point-to-point one ending at that point.
EndpointMeasure time_marginal(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                              long k, std::optional<double> pinned = std::nullopt,
                              const TransferOptions& opts = {});

// log W = log Z - theta * (n - m).
double normalized_logW(const StepKernel& kernel, const FieldSource& field, const EnvironmentSpec& spec,
                       double a, long m, long n, const TransferOptions& opts = {});

// Site index of a start point; throws input when a is off the lattice/grid.
long site_index(const Space& space, double x);

struct TraceRow {
  long n = 0;
  double log_z = 0.0;
  double log_w = 0.0;
};

void write_endpoint_csv(const EndpointMeasure& measure, const std::filesystem::path& path);
void write_trace_csv(std::span<const TraceRow> rows, const std::filesystem::path& path);

}  // namespace polymer

#endif  // POLYMER_TRANSFER_HPP
