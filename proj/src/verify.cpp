#include "polymer/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "polymer/localization.hpp"
#include "polymer/random.hpp"

namespace polymer {

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

constexpr std::size_t kMaxNotes = 20;
// Engine and enumeration must agree to this in log Z.
constexpr double kDoubleImplementationTol = 1e-12;

CheckOutcome make_outcome(const char* name, double tol, std::uint64_t seed_base, std::size_t count) {
  CheckOutcome out;
  out.name = name;
  out.tolerance = tol;
  out.seed_base = seed_base;
  out.seed_count = count;
  return out;
}

std::size_t trials_or(const VerifyOptions& o, std::size_t def) { return o.trials ? o.trials : def; }
long horizon_or(const VerifyOptions& o, long def) { return o.n ? o.n : def; }

SplitMixStream trial_stream(std::uint64_t seed_base, std::size_t trial) {
  return SplitMixStream(splitmix64(replica_seed(seed_base, trial) ^ 0x5bd1e995ULL));
}

// F(y) - G(y) minimized over the union of both supports.
double cdf_margin(const EndpointMeasure& mu, const EndpointMeasure& nu) {
  std::size_t i = 0, j = 0;
  CompensatedSum fm, fn;
  double worst = kInf;
  while (i < mu.size() || j < nu.size()) {
    const double xm = i < mu.size() ? mu.position(i) : kInf;
    const double xn = j < nu.size() ? nu.position(j) : kInf;
    const double y = std::min(xm, xn);
    while (i < mu.size() && mu.position(i) <= y) fm.add(mu.mass[i++]);
    while (j < nu.size() && nu.position(j) <= y) fn.add(nu.mass[j++]);
    worst = std::min(worst, fm.value() - fn.value());
  }
  return worst;
}

double max_cdf_gap(const EndpointMeasure& mu, const EndpointMeasure& nu) {
  return std::max(std::abs(cdf_margin(mu, nu)), std::abs(cdf_margin(nu, mu)));
}

const StepKernel& lattice_kernel() {
  static const StepKernel k = StepKernel::ssrw();
  return k;
}

void require_log_concave(const StepKernel& k, const char* what) {
  if (k.is_lattice()) return;
  if (!k.log_concave())
    throw PolymerError(ErrorKind::parameter, std::string(what) + " on grids needs a log-concave kernel");
}

// Engine log Z_{a,.}^{m,n} compared against enumeration; returns the engine field.
LogWeightField checked_lattice_p2p(const FieldSource& field, long a, long m, long n, CheckOutcome& out,
                                   double& max_mismatch) {
  auto f = point_to_point_field(lattice_kernel(), field, static_cast<double>(a), m, n);
  const auto ref = enumerate_point_to_point(field, a, m, n);
  const long len = n - m;
  for (std::size_t j = 0; j < ref.size(); ++j) {
    const long u = a - len + 2 * static_cast<long>(j);
    const double e = f.at_index(u);
    const double d = std::abs(e - ref[j]);
    max_mismatch = std::max(max_mismatch, d);
    if (!(d <= kDoubleImplementationTol)) {
      ++out.violations;
      out.archive("engine/enumeration mismatch a=" + std::to_string(a) + " u=" + std::to_string(u) +
                  " diff=" + fmt(d));
    }
  }
  return f;
}

struct Atoms {
  std::vector<double> x;  // sorted
  std::vector<double> m;
};

double direct_overlap(const Atoms& a, double r) {
  CompensatedSum s;
  for (std::size_t i = 0; i < a.x.size(); ++i)
    for (std::size_t j = 0; j < a.x.size(); ++j)
      if (std::abs(a.x[i] - a.x[j]) < r) s.add(a.m[i] * a.m[j]);
  return s.value();
}

// Largest mass of a run of atoms with span < 2r (an open ball of radius r fits).
double direct_sup_ball(const Atoms& a, double r) {
  double best = 0.0;
  for (std::size_t i = 0; i < a.x.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < a.x.size() && a.x[j] - a.x[i] < 2.0 * r; ++j) s += a.m[j];
    best = std::max(best, s);
  }
  return best;
}

// (rhs - lhs) / max(lhs, rhs) for an inequality lhs <= rhs.
double rel_margin(double lhs, double rhs) {
  const double scale = std::max({std::abs(lhs), std::abs(rhs), 1e-300});
  return (rhs - lhs) / scale;
}

}  // namespace

bool CheckOutcome::record(double margin) {
  ++instances;
  if (!(margin >= worst_margin)) worst_margin = std::isnan(margin) ? -kInf : margin;
  if (margin < -tolerance || std::isnan(margin)) {
    ++violations;
    return true;
  }
  return false;
}

void CheckOutcome::archive(std::string note) {
  if (notes.size() < kMaxNotes) notes.push_back(std::move(note));
}

nlohmann::json CheckOutcome::to_json() const {
  return {{"name", name},
          {"instances", instances},
          {"violations", violations},
          {"worst_margin", std::isfinite(worst_margin) ? nlohmann::json(worst_margin) : nlohmann::json(nullptr)},
          {"tolerance", tolerance},
          {"seed_base", seed_base},
          {"seed_count", seed_count},
          {"passed", passed()},
          {"notes", notes},
          {"details", details}};
}

const char* to_string(Backend b) noexcept { return b == Backend::lattice ? "lattice" : "grid"; }

EnvironmentSpec random_environment(Backend backend, std::uint64_t seed_base, std::size_t trial) {
  const std::uint64_t seed = replica_seed(seed_base, trial);
  SplitMixStream rng = trial_stream(seed_base, trial);
  const double u1 = rng.uniform(), u2 = rng.uniform();
  if (backend == Backend::grid) return EnvironmentSpec::mollified_poisson(0.5 + 1.5 * u1, 1.0, 0.5 + 2.5 * u2, seed);
  if (trial % 2 == 0) return EnvironmentSpec::gaussian(0.0, 0.5 + 2.5 * u1, seed);
  return EnvironmentSpec::bernoulli(0.1 + 0.8 * u1, 0.0, 0.5 + 2.5 * u2, seed);
}

std::vector<double> enumerate_point_to_point(const FieldSource& field, long a, long m, long n) {
  if (n < m) throw PolymerError(ErrorKind::parameter, "enumeration needs m <= n");
  const long len = n - m;
  if (len > 24) throw PolymerError(ErrorKind::capacity, "enumeration is limited to 24 steps");
  // rows[s][i] = F_{m+s}(a - s + 2i)
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(len));
  for (long s = 0; s < len; ++s) {
    rows[s].resize(static_cast<std::size_t>(s + 1));
    field.fill(m + s, a - s, 2, rows[s]);
  }
  std::vector<CompensatedSum> sums(static_cast<std::size_t>(len + 1));
  const double step = std::ldexp(1.0, -static_cast<int>(len));
  for (unsigned long bits = 0; bits < (1UL << len); ++bits) {
    double energy = 0.0;
    long ups = 0;
    for (long s = 0; s < len; ++s) {
      energy += rows[s][static_cast<std::size_t>(ups)];
      ups += static_cast<long>((bits >> s) & 1UL);
    }
    sums[static_cast<std::size_t>(ups)].add(std::exp(-energy) * step);
  }
  std::vector<double> out;
  for (auto& s : sums) out.push_back(s.value() > 0.0 ? std::log(s.value()) : kNegInf);
  return out;
}

// ---------------------------------------------------------------- path crossing

CheckOutcome check_path_crossing(const VerifyOptions& opts) {
  const bool lattice = opts.backend == Backend::lattice;
  const std::size_t trials = trials_or(opts, lattice ? 1000 : 200);
  CheckOutcome out = make_outcome("path_crossing", lattice ? kLatticeTolerance : kGridTolerance, opts.seed_base, trials);
  if (!lattice) require_log_concave(opts.kernel, "path crossing");
  double mismatch = 0.0;
  std::size_t degenerate = 0;

  for (std::size_t t = 0; t < trials; ++t) {
    const EnvironmentSpec env = random_environment(opts.backend, opts.seed_base, t);
    const Space space = lattice ? Space::integers() : Space::grid(0.0, opts.h);
    LazyField field(env, space);
    const long n = lattice ? horizon_or(opts, 1 + static_cast<long>(t % 10)) : horizon_or(opts, 3);
    std::vector<long> starts, sites;
    std::vector<LogWeightField> z;
    if (lattice) {
      starts = {-4, -2, 0, 2, 4};
      for (long u = -4 - n; u <= 4 + n; u += 2) sites.push_back(u);
      for (long a : starts) z.push_back(checked_lattice_p2p(field, a, 0, n, out, mismatch));
    } else {
      const long unit = std::lround(1.0 / opts.h);
      starts = {-unit, 0, unit};
      for (long u = -6; u <= 6; ++u) sites.push_back(u * unit);
      for (long a : starts)
        z.push_back(point_to_point_field(opts.kernel, field, space.position(a), 0, n));
    }
    for (std::size_t ia = 0; ia < starts.size(); ++ia)
      for (std::size_t ib = ia; ib < starts.size(); ++ib)
        for (std::size_t iu = 0; iu < sites.size(); ++iu)
          for (std::size_t iv = iu; iv < sites.size(); ++iv) {
            const long u = sites[iu], v = sites[iv];
            const double lau = z[ia].at_index(u), lbv = z[ib].at_index(v);
            const double lav = z[ia].at_index(v), lbu = z[ib].at_index(u);
            const double lhs = lau + lbv, rhs = lav + lbu;
            double margin;
            if (ia == ib || iu == iv) {
              margin = lhs == rhs ? 0.0 : -std::abs(lhs - rhs);
            } else if (lhs == kNegInf) {
              ++degenerate;
              margin = rhs == kNegInf ? 0.0 : -kInf;
            } else if (rhs == kNegInf) {
              ++degenerate;
              margin = kInf;
            } else {
              margin = lhs - rhs;
            }
            if (out.record(margin))
              out.archive("trial=" + std::to_string(t) + " n=" + std::to_string(n) + " a=" +
                          std::to_string(starts[ia]) + " b=" + std::to_string(starts[ib]) + " u=" +
                          std::to_string(u) + " v=" + std::to_string(v) + " margin=" + fmt(margin));
          }
  }
  out.details = {{"backend", to_string(opts.backend)}, {"degenerate_instances", degenerate}};
  if (lattice) out.details["max_engine_enumeration_diff"] = mismatch;
  return out;
}

// ----------------------------------------------------------- endpoint monotonicity

CheckOutcome check_endpoint_monotonicity(const VerifyOptions& opts) {
  const bool lattice = opts.backend == Backend::lattice;
  const std::size_t trials = trials_or(opts, lattice ? 500 : 100);
  CheckOutcome out =
      make_outcome("endpoint_monotonicity", lattice ? kLatticeTolerance : kGridTolerance, opts.seed_base, trials);
  if (!lattice) require_log_concave(opts.kernel, "endpoint monotonicity");
  const StepKernel& kernel = lattice ? lattice_kernel() : opts.kernel;
  const long n = horizon_or(opts, lattice ? 6 : 4);
  std::size_t endpoint_pairs = 0, pinned_pairs = 0;

  for (std::size_t t = 0; t < trials; ++t) {
    const EnvironmentSpec env = random_environment(opts.backend, opts.seed_base, t);
    const Space space = lattice ? Space::integers() : Space::grid(0.0, opts.h);
    LazyField field(env, space);
    const long unit = lattice ? 1 : std::lround(1.0 / opts.h);
    const std::vector<long> starts = lattice ? std::vector<long>{-2, 0, 2} : std::vector<long>{0, unit};
    std::vector<EndpointMeasure> rho;
    for (long a : starts) rho.push_back(endpoint_distribution(kernel, field, space.position(a), 0, n));
    for (std::size_t i = 0; i < starts.size(); ++i)
      for (std::size_t j = i; j < starts.size(); ++j) {
        const double margin = i == j ? -max_cdf_gap(rho[i], rho[j]) : cdf_margin(rho[i], rho[j]);
        ++endpoint_pairs;
        if (out.record(margin))
          out.archive("trial=" + std::to_string(t) + " endpoint a=" + std::to_string(starts[i]) +
                      " b=" + std::to_string(starts[j]) + " margin=" + fmt(margin));
      }

    // Pinned time marginals from 0.
    std::vector<long> pins;
    if (lattice)
      for (long u = -n; u <= n; u += 2) pins.push_back(u);
    else
      pins = {-unit, 0, unit};
    for (long k = 1; k < n; ++k) {
      std::vector<EndpointMeasure> mu;
      for (long u : pins) mu.push_back(time_marginal(kernel, field, 0.0, 0, n, k, space.position(u)));
      for (std::size_t i = 0; i < pins.size(); ++i)
        for (std::size_t j = i + 1; j < pins.size(); ++j) {
          const double margin = cdf_margin(mu[i], mu[j]);
          ++pinned_pairs;
          if (out.record(margin))
            out.archive("trial=" + std::to_string(t) + " pinned k=" + std::to_string(k) + " u=" +
                        std::to_string(pins[i]) + " v=" + std::to_string(pins[j]) + " margin=" + fmt(margin));
        }
    }
  }
  out.details = {{"backend", to_string(opts.backend)},
                 {"n", n},
                 {"endpoint_pairs", endpoint_pairs},
                 {"pinned_pairs", pinned_pairs}};
  return out;
}

// ------------------------------------------------------------------ disintegration

CheckOutcome check_disintegration(const VerifyOptions& opts) {
  const bool lattice = opts.backend == Backend::lattice;
  const std::size_t trials = trials_or(opts, lattice ? 200 : 5);
  CheckOutcome out =
      make_outcome("disintegration", lattice ? kLatticeTolerance : kGridTolerance, opts.seed_base, trials);
  const StepKernel& kernel = lattice ? lattice_kernel() : opts.kernel;
  const long len = horizon_or(opts, lattice ? 6 : 3);
  if (len < 2) throw PolymerError(ErrorKind::parameter, "disintegration needs n - m >= 2");
  // Grid time marginals carry long tails of negligible mass; starts below this are skipped.
  const double skip = lattice ? 0.0 : 1e-16;
  double max_dev = 0.0;

  for (std::size_t t = 0; t < trials; ++t) {
    const EnvironmentSpec env = random_environment(opts.backend, opts.seed_base, t);
    const Space space = lattice ? Space::integers() : Space::grid(0.0, opts.h);
    LazyField field(env, space);
    const long m = -static_cast<long>(t % 3);
    const long n = m + len;
    // A: cells of width 1 (lattice sites) or 0.5 (grid) kept with probability 1/2.
    const std::uint64_t key = replica_seed(opts.seed_base ^ 0xa5a5a5a5ULL, t);
    const double cell = lattice ? 1.0 : 0.5;
    auto in_a = [&](double x) {
      const auto c = static_cast<std::int64_t>(std::floor(x / cell + 0.5));
      return (splitmix64(mix_key(key, 0, c)) & 1ULL) != 0;
    };
    auto measure_of_a = [&](const EndpointMeasure& nu) {
      CompensatedSum s;
      for (std::size_t j = 0; j < nu.size(); ++j)
        if (in_a(nu.position(j))) s.add(nu.mass[j]);
      return s.value();
    };
    const double lhs = measure_of_a(endpoint_distribution(kernel, field, 0.0, m, n));
    for (long k = m + 1; k < n; ++k) {
      const EndpointMeasure mu = time_marginal(kernel, field, 0.0, m, n, k);
      CompensatedSum rhs;
      for (std::size_t j = 0; j < mu.size(); ++j) {
        if (!(mu.mass[j] > skip)) continue;
        rhs.add(mu.mass[j] * measure_of_a(endpoint_distribution(kernel, field, mu.position(j), k, n)));
      }
      const double dev = std::abs(lhs - rhs.value());
      max_dev = std::max(max_dev, dev);
      if (out.record(-dev))
        out.archive("trial=" + std::to_string(t) + " m=" + std::to_string(m) + " k=" + std::to_string(k) +
                    " n=" + std::to_string(n) + " deviation=" + fmt(dev));
    }
  }
  out.details = {{"backend", to_string(opts.backend)}, {"length", len}, {"max_deviation", max_dev}};
  return out;
}

// -------------------------------------------------------------------- ratio lemmas

CheckOutcome check_ratio_lemmas(const VerifyOptions& opts) {
  if (opts.backend != Backend::lattice)
    throw PolymerError(ErrorKind::unsupported, "the ratio lemmas are lattice statements");
  const std::size_t trials = trials_or(opts, 300);
  CheckOutcome out = make_outcome("ratio_lemmas", kLatticeTolerance, opts.seed_base, trials);
  const long n = horizon_or(opts, 4);
  if (n < 1) throw PolymerError(ErrorKind::parameter, "ratio lemmas need n >= 1");
  double mismatch = 0.0;
  std::size_t first = 0, second = 0, telescoped = 0;
  const std::vector<long> starts{-2, 0, 2};

  for (std::size_t t = 0; t < trials; ++t) {
    LazyField field(random_environment(Backend::lattice, opts.seed_base, t), Space::integers());
    auto note = [&](const std::string& what, double margin) {
      out.archive("trial=" + std::to_string(t) + " " + what + " margin=" + fmt(margin));
    };
    std::vector<LogWeightField> z0;
    for (long a : starts) z0.push_back(checked_lattice_p2p(field, a, 0, n, out, mismatch));

    for (std::size_t ia = 0; ia < starts.size(); ++ia) {
      const long a = starts[ia];
      const auto up = checked_lattice_p2p(field, a + 1, 1, n, out, mismatch);
      const auto down = checked_lattice_p2p(field, a - 1, 1, n, out, mismatch);
      // Cones a +- 1 + V_{n-1}.
      for (int side : {+1, -1}) {
        const auto& z1 = side > 0 ? up : down;
        const long c = a + side;
        for (long u = c - (n - 1); u <= c + (n - 1); u += 2)
          for (long v = u; v <= c + (n - 1); v += 2) {
            const double ru = z1.at_index(u) - z0[ia].at_index(u);
            const double rv = z1.at_index(v) - z0[ia].at_index(v);
            const double margin = side > 0 ? rv - ru : ru - rv;
            (side > 0 ? first : second)++;
            if (out.record(margin))
              note((side > 0 ? "first a=" : "second a=") + std::to_string(a) + " u=" + std::to_string(u) +
                       " v=" + std::to_string(v),
                   margin);
          }
      }
    }
    // Z_{a,u} / Z_{a,v} >= Z_{b,u} / Z_{b,v} for a < b, u < v, Z_{a,v}, Z_{b,u} > 0.
    for (std::size_t ia = 0; ia < starts.size(); ++ia)
      for (std::size_t ib = ia + 1; ib < starts.size(); ++ib)
        for (long u = -2 - n; u <= 2 + n; u += 2)
          for (long v = u + 2; v <= 2 + n; v += 2) {
            const double lav = z0[ia].at_index(v), lbu = z0[ib].at_index(u);
            if (lav == kNegInf || lbu == kNegInf) continue;
            const double margin = (z0[ia].at_index(u) - lav) - (lbu - z0[ib].at_index(v));
            ++telescoped;
            if (out.record(margin))
              note("telescoped a=" + std::to_string(starts[ia]) + " b=" + std::to_string(starts[ib]) +
                       " u=" + std::to_string(u) + " v=" + std::to_string(v),
                   margin);
          }
  }
  out.details = {{"n", n},
                 {"first_inequality", first},
                 {"second_inequality", second},
                 {"telescoped", telescoped},
                 {"max_engine_enumeration_diff", mismatch}};
  return out;
}

// ---------------------------------------------------------------------- ratio band

CheckOutcome check_ratio_band(const EnvironmentSpec& env, const RatioBandOptions& opts) {
  if (opts.n_max < 4) throw PolymerError(ErrorKind::parameter, "ratio band needs n_max >= 4");
  if ((opts.a - opts.b) % 2 != 0) throw PolymerError(ErrorKind::parameter, "starts must share parity");
  if (opts.replicas < 1) throw PolymerError(ErrorKind::parameter, "ratio band needs a replica");
  CheckOutcome out = make_outcome("ratio_band", 0.0, opts.seed_base, opts.replicas);
  const long q = opts.n_max / 4;
  std::size_t excursions = 0, steps = 0;
  nlohmann::json per_seed = nlohmann::json::array();

  for (std::size_t r = 0; r < opts.replicas; ++r) {
    LazyField field(env.with_seed(replica_seed(opts.seed_base, r)), Space::integers());
    auto trace = [&](long a) {
      std::vector<double> lz(static_cast<std::size_t>(opts.n_max + 1));
      forward_sweep(lattice_kernel(), field, static_cast<double>(a), 0, opts.n_max,
                    [&](const LogWeightField& rho, double log_z) { lz[static_cast<std::size_t>(rho.k)] = log_z; });
      return lz;
    };
    const auto za = trace(opts.a);
    const auto zb = opts.a == opts.b ? za : trace(opts.b);
    double band = 0.0;
    for (long n = 1; n <= q; ++n) band = std::max(band, std::abs(za[n] - zb[n]));
    band *= opts.band_factor;
    std::size_t exc = 0;
    double worst = 0.0;
    for (long n = q + 1; n <= opts.n_max; ++n) {
      const double l = std::abs(za[n] - zb[n]);
      worst = std::max(worst, l);
      exc += l > band;
    }
    const auto tail = static_cast<std::size_t>(opts.n_max - q);
    const double frac = static_cast<double>(exc) / static_cast<double>(tail);
    excursions += exc;
    steps += tail;
    const double margin = opts.max_excursion_fraction - frac;
    if (out.record(margin))
      out.archive("replica=" + std::to_string(r) + " band=" + fmt(band) + " excursion_fraction=" + fmt(frac));
    per_seed.push_back({{"replica", r},
                        {"band", band},
                        {"excursion_fraction", frac},
                        {"max_abs_log_ratio", worst},
                        {"final_log_ratio", za.back() - zb.back()}});
  }
  out.details = {{"a", opts.a},
                 {"b", opts.b},
                 {"n_max", opts.n_max},
                 {"band_factor", opts.band_factor},
                 {"max_excursion_fraction", opts.max_excursion_fraction},
                 {"excursion_fraction", steps ? static_cast<double>(excursions) / static_cast<double>(steps) : 0.0},
                 {"replicas", per_seed},
                 {"environment", env.to_json()}};
  return out;
}

// -------------------------------------------------------------------- positive mass

CheckOutcome check_positive_mass(const EnvironmentSpec& env, const PositiveMassOptions& opts) {
  const bool lattice = opts.backend == Backend::lattice;
  if (!(opts.r > 0.0)) throw PolymerError(ErrorKind::parameter, "r must be positive");
  if (opts.n_max < 2) throw PolymerError(ErrorKind::parameter, "positive mass needs n_max >= 2");
  for (long m : opts.ms) {
    if (m >= 0) throw PolymerError(ErrorKind::parameter, "m must be negative");
    if (lattice && !(static_cast<double>(-m) > opts.r))
      throw PolymerError(ErrorKind::parameter, "V_{-m} must reach beyond r (need -m > r)");
  }
  CheckOutcome out = make_outcome("positive_mass", 0.0, opts.seed_base, opts.replicas);
  const long half = (opts.n_max + 1) / 2;
  nlohmann::json rows = nlohmann::json::array();
  double mismatch = 0.0;

  for (std::size_t rep = 0; rep < opts.replicas; ++rep) {
    const Space space = lattice ? Space::integers() : Space::grid(0.0, opts.h);
    LazyField field(env.with_seed(replica_seed(opts.seed_base, rep)), space);
    for (long m : opts.ms) {
      double min_above = kInf, min_below = kInf;
      auto sides = [&](const EndpointMeasure& mu) {
        CompensatedSum above, below;
        for (std::size_t j = 0; j < mu.size(); ++j) {
          const double x = mu.position(j);
          if (x > opts.r) above.add(mu.mass[j]);
          if (x < -opts.r) below.add(mu.mass[j]);
        }
        return std::pair{above.value(), below.value()};
      };
      if (lattice) {
        // mu(y) proportional to Z_{0,y}^{m,0} Z_y^{0,n} over the finitely many y in V_{-m}.
        const auto head = point_to_point_field(lattice_kernel(), field, 0.0, m, 0);
        std::vector<long> ys;
        std::vector<std::vector<double>> tails;
        for (long y = m; y <= -m; y += 2) {
          ys.push_back(y);
          std::vector<double> lz(static_cast<std::size_t>(opts.n_max + 1));
          forward_sweep(lattice_kernel(), field, static_cast<double>(y), 0, opts.n_max,
                        [&](const LogWeightField& rho, double log_z) { lz[static_cast<std::size_t>(rho.k)] = log_z; });
          tails.push_back(std::move(lz));
        }
        for (long n = half; n <= opts.n_max; ++n) {
          std::vector<double> w;
          for (std::size_t i = 0; i < ys.size(); ++i) w.push_back(head.at_index(ys[i]) + tails[i][n]);
          const double lse = log_sum_exp(w);
          CompensatedSum above, below;
          for (std::size_t i = 0; i < ys.size(); ++i) {
            const double p = std::exp(w[i] - lse);
            if (static_cast<double>(ys[i]) > opts.r) above.add(p);
            if (static_cast<double>(ys[i]) < -opts.r) below.add(p);
          }
          min_above = std::min(min_above, above.value());
          min_below = std::min(min_below, below.value());
          if (n == opts.n_max) {
            const auto [a2, b2] = sides(time_marginal(lattice_kernel(), field, 0.0, m, n, 0));
            mismatch = std::max({mismatch, std::abs(a2 - above.value()), std::abs(b2 - below.value())});
          }
        }
      } else {
        const long stride = std::max(1L, (opts.n_max - half) / 20);
        for (long n = half; n <= opts.n_max; n += stride) {
          const auto [a2, b2] = sides(time_marginal(opts.kernel, field, 0.0, m, n, 0));
          min_above = std::min(min_above, a2);
          min_below = std::min(min_below, b2);
        }
      }
      for (auto [label, v] : {std::pair{"above", min_above}, std::pair{"below", min_below}}) {
        const double margin = v > opts.floor ? v - opts.floor : -std::numeric_limits<double>::min();
        if (out.record(margin))
          out.archive("replica=" + std::to_string(rep) + " m=" + std::to_string(m) + " side=" + label +
                      " min=" + fmt(v));
      }
      rows.push_back({{"replica", rep}, {"m", m}, {"min_above", min_above}, {"min_below", min_below}});
    }
  }
  if (lattice && mismatch > 1e-9) {
    ++out.violations;
    out.archive("time_marginal disagrees with the two-sweep formula by " + fmt(mismatch));
  }
  out.details = {{"backend", to_string(opts.backend)},
                 {"r", opts.r},
                 {"n_max", opts.n_max},
                 {"floor", opts.floor},
                 {"rows", rows},
                 {"time_marginal_mismatch", mismatch},
                 {"environment", env.to_json()}};
  return out;
}

// ---------------------------------------------------------------- overlap comparison

CheckOutcome check_overlap_comparison(const VerifyOptions& opts) {
  const std::size_t trials = trials_or(opts, 10000);
  CheckOutcome out = make_outcome("overlap_comparison", kLatticeTolerance, opts.seed_base, trials);
  const double rs[] = {1.0, 1.5, 2.5, 0.7};
  std::size_t two_spike = 0, library_checks = 0;

  auto check_all = [&](const Atoms& atoms, double r, const std::string& tag) {
    const double ir = direct_overlap(atoms, r);
    const double sup = direct_sup_ball(atoms, r);
    auto rec = [&](double margin, const char* which) {
      if (out.record(margin)) out.archive(tag + " " + which + " r=" + fmt(r) + " margin=" + fmt(margin));
    };
    for (int K = 2; K <= 4; ++K) {
      const double ikr = direct_overlap(atoms, K * r);
      rec(rel_margin(ir, ikr), "monotone");
      rec(rel_margin(ikr, 9.0 * K * ir), "scaling");
    }
    rec(rel_margin(ir, 9.0 * sup), "sup_upper");
    rec(rel_margin(sup * sup, direct_overlap(atoms, 2.0 * r)), "sup_lower");
    return std::pair{ir, sup};
  };

  for (std::size_t t = 0; t < trials; ++t) {
    SplitMixStream rng = trial_stream(opts.seed_base, t);
    const double r = rs[t % 4];
    // 64 lattice sites with exponential weights; every third measure is sparse.
    const double keep = t % 3 == 0 ? 0.1 : 0.6;
    std::vector<double> w(64, 0.0);
    for (double& x : w)
      if (rng.uniform() < keep) x = -std::log(rng.uniform());
    if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; }))
      w[static_cast<std::size_t>(rng.uniform() * 64.0)] = 1.0;
    const EndpointMeasure nu = EndpointMeasure::from_weights(Space::integers(), 0, 1, w);
    Atoms atoms;
    for (std::size_t j = 0; j < nu.size(); ++j)
      if (nu.mass[j] > 0.0) {
        atoms.x.push_back(nu.position(j));
        atoms.m.push_back(nu.mass[j]);
      }
    const auto [ir, sup] = check_all(atoms, r, "trial=" + std::to_string(t));
    // The library implementation must agree with the direct sums.
    const double lib_i = overlap(nu, r), lib_s = sup_open_ball_mass(nu, r);
    library_checks += 2;
    for (auto [direct, lib] : {std::pair{ir, lib_i}, std::pair{sup, lib_s}}) {
      const double d = std::abs(direct - lib);
      if (!(d <= 1e-12 * std::max(1.0, direct))) {
        ++out.violations;
        out.archive("trial=" + std::to_string(t) + " library/direct mismatch " + fmt(d));
      }
    }

    if (t % 10 == 0) {
      // Two atoms at separation just under or over r; closed-form overlap.
      const double p = 0.05 + 0.9 * rng.uniform();
      for (double f : {1.0 - 1e-6, 1.0 + 1e-6}) {
        const double s = r * f;
        const Atoms spikes{{0.0, s}, {p, 1.0 - p}};
        const auto [i2, sup2] = check_all(spikes, r, "two-spike trial=" + std::to_string(t));
        const double exact = p * p + (1 - p) * (1 - p) + (s < r ? 2.0 * p * (1 - p) : 0.0);
        const double exact_sup = s < 2.0 * r ? 1.0 : std::max(p, 1.0 - p);
        if (out.record(-std::abs(i2 - exact)) | out.record(-std::abs(sup2 - exact_sup)))
          out.archive("two-spike closed form mismatch trial=" + std::to_string(t));
        ++two_spike;
      }
    }
  }
  out.details = {{"two_spike_cases", two_spike}, {"library_cross_checks", library_checks}, {"constant", 9}};
  return out;
}

// ------------------------------------------------------------- convolution dominance

CheckOutcome check_convolution_dominance(const StepKernel& kernel, const VerifyOptions& opts) {
  if (kernel.is_lattice()) throw PolymerError(ErrorKind::unsupported, "convolution dominance needs a density kernel");
  const std::size_t trials = trials_or(opts, 500);
  CheckOutcome out = make_outcome("convolution_dominance", kLatticeTolerance, opts.seed_base, trials);
  constexpr std::size_t kPoints = 128, kZ = 16;
  const double sd = kernel.sd();
  const double hx = 0.25 * sd;
  std::size_t skipped_z = 0;

  for (std::size_t t = 0; t < trials; ++t) {
    SplitMixStream rng = trial_stream(opts.seed_base, t);
    std::vector<double> x(kPoints), lognu(kPoints, kNegInf);
    for (std::size_t i = 0; i < kPoints; ++i) {
      x[i] = kernel.mean() + hx * (static_cast<double>(i) - 0.5 * kPoints);
      if (rng.uniform() < 0.7) lognu[i] = std::log(-std::log(rng.uniform()));
    }
    lognu[static_cast<std::size_t>(rng.uniform() * kPoints)] = 0.0;
    std::vector<double> zs(kZ);
    for (double& z : zs) z = x.front() - 3.0 * sd + rng.uniform() * (x.back() - x.front() + 6.0 * sd);
    std::sort(zs.begin(), zs.end());

    // cdf[iz][i] = normalized mass of x_0..x_i under p(z - x) nu(dx).
    std::vector<std::vector<double>> cdf;
    std::vector<double> zkept;
    for (double z : zs) {
      std::vector<double> lw(kPoints);
      for (std::size_t i = 0; i < kPoints; ++i) lw[i] = lognu[i] - kernel.energy(z - x[i]);
      const double total = log_sum_exp(lw);
      if (!std::isfinite(total)) {
        ++skipped_z;  // z outside the set where the convolution is positive
        continue;
      }
      std::vector<double> c(kPoints);
      CompensatedSum s;
      for (std::size_t i = 0; i < kPoints; ++i) {
        s.add(std::exp(lw[i] - total));
        c[i] = s.value();
      }
      cdf.push_back(std::move(c));
      zkept.push_back(z);
    }
    for (std::size_t a = 0; a < cdf.size(); ++a)
      for (std::size_t b = a + 1; b < cdf.size(); ++b) {
        double margin = kInf;
        for (std::size_t i = 0; i < kPoints; ++i) margin = std::min(margin, cdf[a][i] - cdf[b][i]);
        if (out.record(margin))
          out.archive("trial=" + std::to_string(t) + " z=" + fmt(zkept[a]) + " z'=" + fmt(zkept[b]) +
                      " margin=" + fmt(margin));
      }
  }
  out.details = {{"kernel", kernel.to_json()}, {"log_concave", kernel.log_concave()}, {"skipped_z", skipped_z}};
  return out;
}

// -------------------------------------------------------------------------- suite

std::vector<CheckOutcome> run_lattice_suite(std::uint64_t seed_base) {
  VerifyOptions o;
  o.seed_base = seed_base;
  return {check_path_crossing(o),   check_endpoint_monotonicity(o), check_disintegration(o),
          check_ratio_lemmas(o),    check_overlap_comparison(o),
          check_convolution_dominance(StepKernel::gaussian(1.0), o)};
}

void write_outcomes_json(std::span<const CheckOutcome> outcomes, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& o : outcomes) j.push_back(o.to_json());
  std::ofstream out(path);
  if (!out) throw PolymerError(ErrorKind::input, "cannot open " + path.string());
  out << j.dump(2) << '\n';
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_junit_xml(std::span<const CheckOutcome> outcomes, const std::filesystem::path& path,
                     const std::string& suite) {
  std::size_t failures = 0;
  for (const auto& o : outcomes) failures += !o.passed();
  std::ofstream out(path);
  if (!out) throw PolymerError(ErrorKind::input, "cannot open " + path.string());
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<testsuite name=\"" << xml_escape(suite) << "\" tests=\"" << outcomes.size() << "\" failures=\""
      << failures << "\">\n";
  for (const auto& o : outcomes) {
    out << "  <testcase classname=\"" << xml_escape(suite) << "\" name=\"" << xml_escape(o.name) << "\">\n";
    out << "    <system-out>instances=" << o.instances << " violations=" << o.violations
        << " worst_margin=" << fmt(o.worst_margin) << "</system-out>\n";
    if (!o.passed()) {
      std::string msg = std::to_string(o.violations) + " violations";
      std::string body;
      for (const auto& n : o.notes) body += n + "\n";
      out << "    <failure message=\"" << xml_escape(msg) << "\">" << xml_escape(body) << "</failure>\n";
    }
    out << "  </testcase>\n";
  }
  out << "</testsuite>\n";
}

}  // namespace polymer
