#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "oracles.hpp"
#include "polymer/transfer.hpp"

using namespace polymer;

namespace {

oracle::Potential potential_of(const EnvironmentSpec& spec) {
  return [spec](long k, long x) { return field_value(spec, k, static_cast<double>(x)); };
}

double lse_all(const LogWeightField& f) { return log_sum_exp(f.logw); }

// Slab over [m, n) x [lo, hi] with values given by a function.
template <class Fn>
EnvironmentSlab slab_from(long m, long n, long lo, long hi, Fn fn) {
  std::vector<double> v;
  for (long k = m; k < n; ++k)
    for (long x = lo; x <= hi; ++x) v.push_back(fn(k, x));
  return EnvironmentSlab(EnvironmentSpec::zero(), {m, n, Space::integers(), lo, static_cast<std::size_t>(hi - lo + 1)},
                         std::move(v));
}

}  // namespace

TEST_CASE("zero potential gives Z = 1 exactly") {
  const LazyField zero_lat(EnvironmentSpec::zero(), Space::integers());
  for (long n : {0L, 1L, 5L, 64L, 300L}) CHECK(point_to_line_logZ(StepKernel::ssrw(), zero_lat, 0, 0, n) == 0.0);
  const LazyField zero_grid(EnvironmentSpec::zero(), Space::grid(0.0, 0.05));
  CHECK(point_to_line_logZ(StepKernel::gaussian(1.0), zero_grid, 0.0, 0, 10) == 0.0);
  CHECK(point_to_line_logZ(StepKernel::laplace(0.5), zero_grid, 1.0, 3, 9) == 0.0);
}

TEST_CASE("single step") {
  const auto spec = EnvironmentSpec::gaussian(0, 1, 3);
  const LazyField f(spec, Space::integers());
  CHECK(point_to_line_logZ(StepKernel::ssrw(), f, 0, 4, 5) == doctest::Approx(-field_value(spec, 4, 0.0)).epsilon(1e-15));
  const auto e = endpoint_distribution(StepKernel::ssrw(), f, 6, 2, 3);
  REQUIRE(e.size() == 2);
  CHECK(e.index(0) == 5);
  CHECK(e.index(1) == 7);
  CHECK(e.mass[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(e.mass[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("empty horizon") {
  const LazyField f(EnvironmentSpec::gaussian(0, 1, 3), Space::integers());
  CHECK(point_to_line_logZ(StepKernel::ssrw(), f, 2, 5, 5) == 0.0);
  const auto e = endpoint_distribution(StepKernel::ssrw(), f, 2, 5, 5);
  CHECK(e.size() == 1);
  CHECK(e.index(0) == 2);
  CHECK(e.mass[0] == 1.0);
  CHECK_THROWS_AS(point_to_line_logZ(StepKernel::ssrw(), f, 2, 5, 4), PolymerError);
}

TEST_CASE("free walk point-to-point and endpoint laws") {
  const LazyField zero(EnvironmentSpec::zero(), Space::integers());
  const auto k = StepKernel::ssrw();
  CHECK(std::exp(point_to_point_logZ(k, zero, 0, 0, 0, 2)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(point_to_point_logZ(k, zero, 0, 1, 0, 2) == kNegInf);
  CHECK(point_to_point_logZ(k, zero, 0, 4, 0, 2) == kNegInf);

  const auto e = endpoint_distribution(k, zero, 0, 0, 2);
  REQUIRE(e.size() == 3);
  CHECK(e.mass[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(e.mass[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(e.mass[2] == doctest::Approx(0.25).epsilon(1e-15));

  const auto e100 = endpoint_distribution(k, zero, 0, 0, 100);
  for (std::size_t j = 0; j < e100.size(); ++j)
    CHECK(oracle::relative_error(e100.mass[j], oracle::ssrw_pmf(100, e100.index(j))) < 1e-12);

  const auto mid = time_marginal(k, zero, 0, 0, 2, 1);
  REQUIRE(mid.size() == 2);
  CHECK(mid.index(0) == -1);
  CHECK(mid.mass[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(mid.mass[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("all-up path") {
  const auto spec = EnvironmentSpec::gaussian(0, 1, 8);
  const LazyField f(spec, Space::integers());
  const long n = 9;
  double want = -n * std::log(2.0);
  for (long k = 0; k < n; ++k) want -= field_value(spec, k, static_cast<double>(k));
  CHECK(point_to_point_logZ(StepKernel::ssrw(), f, 0, n, 0, n) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("lattice results match path enumeration") {
  const auto k = StepKernel::ssrw();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto spec = seed % 2 ? EnvironmentSpec::gaussian(0.2, 1.3, seed) : EnvironmentSpec::bernoulli(0.4, -0.5, 1.5, seed);
    const long m = static_cast<long>(seed % 3) - 1;
    const long n = m + 1 + static_cast<long>(seed % 12);
    const long a = static_cast<long>(seed % 5) - 2;
    const LazyField f(spec, Space::integers());
    const auto paths = oracle::enumerate_paths(a, m, n, potential_of(spec));
    const double z = oracle::partition(paths);

    worst = std::max(worst, oracle::relative_error(point_to_line_logZ(k, f, a, m, n), std::log(z)));

    const auto p2p = point_to_point_field(k, f, a, m, n);
    const auto ends = oracle::marginal(paths, static_cast<std::size_t>(n - m));
    for (const auto& [u, zu] : ends) worst = std::max(worst, oracle::relative_error(std::exp(p2p.at_index(u)), zu));
    CHECK(p2p.size() == ends.size());

    const auto rho = endpoint_distribution(k, f, a, m, n);
    for (std::size_t j = 0; j < rho.size(); ++j)
      worst = std::max(worst, oracle::relative_error(rho.mass[j], ends.at(rho.index(j)) / z));

    for (long t = m; t <= n; ++t) {
      const auto tm = time_marginal(k, f, a, m, n, t);
      const auto want = oracle::marginal(paths, static_cast<std::size_t>(t - m));
      CHECK(tm.size() == want.size());
      for (std::size_t j = 0; j < tm.size(); ++j)
        worst = std::max(worst, oracle::relative_error(tm.mass[j], want.at(tm.index(j)) / z));
    }
    const long u = a + (n - m) - 2;
    const auto pinned = oracle::marginal(paths, static_cast<std::size_t>((n - m) / 2), &u);
    double pz = 0;
    for (const auto& [x, w] : pinned) pz += w;
    if (pz > 0) {
      const auto tm = time_marginal(k, f, a, m, n, m + (n - m) / 2, static_cast<double>(u));
      for (std::size_t j = 0; j < tm.size(); ++j) {
        const auto it = pinned.find(tm.index(j));
        const double want = it == pinned.end() ? 0.0 : it->second / pz;
        if (want > 0) worst = std::max(worst, oracle::relative_error(tm.mass[j], want));
        else CHECK(tm.mass[j] == 0.0);
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("point-to-point sums to point-to-line") {
  const auto spec = EnvironmentSpec::gaussian(0, 1, 77);
  const LazyField lat(spec, Space::integers());
  CHECK(lse_all(point_to_point_field(StepKernel::ssrw(), lat, 0, 0, 200)) ==
        doctest::Approx(point_to_line_logZ(StepKernel::ssrw(), lat, 0, 0, 200)).epsilon(1e-12));

  const auto pspec = EnvironmentSpec::mollified_poisson(1.0, 1.0, 1.0, 5);
  const LazyField grid(pspec, Space::grid(0.0, 0.1));
  const auto g = StepKernel::gaussian(1.0);
  const auto p2p = point_to_point_field(g, grid, 0.0, 0, 6);
  CHECK(lse_all(p2p) + std::log(0.1) == doctest::Approx(point_to_line_logZ(g, grid, 0.0, 0, 6)).epsilon(1e-12));
}

TEST_CASE("Chapman-Kolmogorov") {
  const auto spec = EnvironmentSpec::gaussian(0, 0.8, 12);
  const LazyField f(spec, Space::integers());
  const auto k = StepKernel::ssrw();
  const long m = 0, n = 9, a = 1;
  const auto left = point_to_point_field(k, f, a, m, 4);
  for (long u = a - 9; u <= a + 9; u += 2) {
    std::vector<double> terms;
    for (std::size_t j = 0; j < left.size(); ++j)
      terms.push_back(left.logw[j] + point_to_point_logZ(k, f, static_cast<double>(left.index(j)), static_cast<double>(u), 4, n));
    CHECK(log_sum_exp(terms) == doctest::Approx(point_to_point_logZ(k, f, a, u, m, n)).epsilon(1e-12));
  }
}

TEST_CASE("gaussian grid convolution matches N(0, 2)") {
  const LazyField zero(EnvironmentSpec::zero(), Space::grid(0.0, 0.05));
  const auto p2p = point_to_point_field(StepKernel::gaussian(1.0), zero, 0.0, 0, 2);
  double worst = 0;
  for (std::size_t j = 0; j < p2p.size(); ++j) {
    const double x = p2p.position(j);
    const double want = std::exp(-x * x / 4) / std::sqrt(4 * std::numbers::pi);
    worst = std::max(worst, std::abs(std::exp(p2p.logw[j]) - want));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("normalized W") {
  const auto spec = EnvironmentSpec::gaussian(0, 1, 0);
  const auto slab = slab_from(0, 1, -3, 3, [](long, long) { return 0.0; });
  CHECK(std::exp(normalized_logW(StepKernel::ssrw(), slab, spec, 0, 0, 1)) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  const LazyField zero(EnvironmentSpec::zero(), Space::integers());
  CHECK(normalized_logW(StepKernel::ssrw(), zero, EnvironmentSpec::zero(), 0, 0, 17) == 0.0);
}

TEST_CASE("exhaustive environment average of W is one") {
  // n = 3: the reachable sites at times 0, 1, 2 are 0; -1, 1; -2, 0, 2.
  const auto spec = EnvironmentSpec::bernoulli(0.5, 0.0, 1.0, 0);
  const double theta = annealed_exponent(spec).value;
  const std::vector<std::pair<long, long>> sites{{0, 0}, {1, -1}, {1, 1}, {2, -2}, {2, 0}, {2, 2}};
  CompensatedSum total;
  for (unsigned bits = 0; bits < 64; ++bits) {
    auto slab = slab_from(0, 3, -3, 3, [&](long k, long x) {
      for (std::size_t s = 0; s < sites.size(); ++s)
        if (sites[s] == std::pair{k, x}) return static_cast<double>((bits >> s) & 1U);
      return 0.0;
    });
    total.add(std::exp(point_to_line_logZ(StepKernel::ssrw(), slab, 0, 0, 3) - 3 * theta));
  }
  CHECK(std::abs(total.value() / 64 - 1.0) < 1e-12);
}

TEST_CASE("grid truncation and domain errors") {
  const auto spec = EnvironmentSpec::gaussian(0, 0.3, 4);
  const auto narrow = generate_slab(spec, {0, 8, Space::grid(0.0, 0.1), -20, 41});
  try {
    point_to_line_logZ(StepKernel::gaussian(1.0), narrow, 0.0, 0, 8);
    FAIL("expected truncation");
  } catch (const PolymerError& e) {
    CHECK(e.kind() == ErrorKind::truncation);
  }
  const auto wide = generate_slab(spec, {0, 8, Space::grid(0.0, 0.1), -600, 1201});
  SweepStats stats;
  CHECK(std::isfinite(point_to_line_logZ(StepKernel::gaussian(1.0), wide, 0.0, 0, 8)));
  stats = forward_sweep(StepKernel::gaussian(1.0), wide, 0.0, 0, 8, [](const LogWeightField&, double) {});
  CHECK(stats.boundary_loss <= 1e-9);

  const LazyField lazy(spec, Space::grid(0.0, 0.1));
  CHECK_THROWS_AS(point_to_line_logZ(StepKernel::gaussian(1.0), lazy, 0.05, 0, 3), PolymerError);
  CHECK_THROWS_AS(point_to_line_logZ(StepKernel::ssrw(), lazy, 0.0, 0, 3), PolymerError);
  CHECK_THROWS_AS(point_to_line_logZ(StepKernel::gaussian(1.0), narrow, 5.0, 0, 3), PolymerError);
  CHECK_THROWS_AS(point_to_line_logZ(StepKernel::ssrw(), LazyField(spec, Space::integers()), 0.5, 0, 3), PolymerError);
}

TEST_CASE("stepper reproduces the sweep") {
  const auto spec = EnvironmentSpec::gaussian(0, 1, 9);
  const LazyField lat(spec, Space::integers());
  std::vector<LogWeightField> fields;
  std::vector<double> zs;
  forward_sweep(StepKernel::ssrw(), lat, 2, -3, 40, [&](const LogWeightField& f, double z) {
    fields.push_back(f);
    zs.push_back(z);
  });
  ForwardStepper s(StepKernel::ssrw(), lat, 2, -3, 40);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    CHECK(s.time() == fields[i].k);
    CHECK(s.log_z() == zs[i]);
    CHECK(s.log_rho().first == fields[i].first);
    CHECK(s.log_rho().logw == fields[i].logw);
    if (!s.done()) s.step();
  }
  CHECK(s.done());
  CHECK_THROWS_AS(s.step(), PolymerError);

  const LazyField grid(EnvironmentSpec::mollified_poisson(1.0, 1.0, 1.0, 2), Space::grid(0.0, 0.1));
  ForwardStepper g(StepKernel::gaussian(1.0), grid, 0.0, 0, 5);
  while (!g.done()) g.step();
  CHECK(g.log_z() == point_to_line_logZ(StepKernel::gaussian(1.0), grid, 0.0, 0, 5));
}

TEST_CASE("grid refinement converges") {
  const auto spec = EnvironmentSpec::mollified_poisson(1.0, 2.0, 0.5, 21);
  const auto g = StepKernel::gaussian(1.0);
  std::vector<double> z;
  for (double h : {0.2, 0.1, 0.05}) z.push_back(point_to_line_logZ(g, LazyField(spec, Space::grid(0.0, h)), 0.0, 0, 8));
  const double d1 = std::abs(z[1] - z[0]), d2 = std::abs(z[2] - z[1]);
  CHECK(d2 < d1);
  CHECK(d2 < 0.5 * 0.1 * 0.1);
}

TEST_CASE("csv export") {
  const auto dir = std::filesystem::temp_directory_path() / "polymerlab_transfer_test";
  std::filesystem::create_directories(dir);
  const LazyField zero(EnvironmentSpec::zero(), Space::integers());
  write_endpoint_csv(endpoint_distribution(StepKernel::ssrw(), zero, 0, 0, 2), dir / "e.csv");
  std::ifstream in(dir / "e.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "site,mass");
  std::getline(in, line);
  CHECK(line == "-2,0.25");
  std::filesystem::remove_all(dir);
}
