#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "oracles.hpp"
#include "polymer/disorder.hpp"

using namespace polymer;

namespace {

Model lattice_model(EnvironmentSpec env) {
  Model m;
  m.env = std::move(env);
  return m;
}

// (1/n) log P{S_n = x} for the simple walk.
double free_lambda(long n, long x) {
  const double k = 0.5 * static_cast<double>(n + x);
  const double nn = static_cast<double>(n);
  return (std::lgamma(nn + 1.0) - std::lgamma(k + 1.0) - std::lgamma(nn - k + 1.0) - nn * std::log(2.0)) / nn;
}

}  // namespace

TEST_CASE("checkpoints halve with ceiling") {
  CHECK(geometric_checkpoints(10) == std::vector<long>{1, 2, 3, 5, 10});
  CHECK(geometric_checkpoints(1) == std::vector<long>{1});
  CHECK(geometric_checkpoints(16) == std::vector<long>{1, 2, 4, 8, 16});
  CHECK_THROWS_AS(geometric_checkpoints(0), PolymerError);
}

TEST_CASE("zero potential gives an identically zero trace") {
  const auto seeds = seed_list(1, 4);
  const auto t = free_energy_trace(lattice_model(EnvironmentSpec::zero()), 100, seeds);
  CHECK(t.theta == 0.0);
  CHECK(t.failures == 0);
  CHECK(t.replicas == 4);
  for (const auto& r : t.records) {
    CHECK(r.mean_log_z == 0.0);
    CHECK(r.se == 0.0);
    CHECK(r.mean_log_w == 0.0);
  }
  CHECK(t.to_json()["gap"].get<double>() == 0.0);
}

TEST_CASE("annealed bound and order independence of the trace") {
  Model m = lattice_model(EnvironmentSpec::gaussian(0.0, 1.0, 0));
  const auto seeds = seed_list(77, 12);
  const auto t = free_energy_trace(m, 128, seeds);
  CHECK(t.theta == doctest::Approx(0.5).epsilon(1e-15));
  for (const auto& r : t.records) CHECK(r.mean_log_z <= t.theta + 4.0 * r.se);
  CHECK(t.at(128).mean_log_z < t.theta);

  std::vector<std::uint64_t> reversed(seeds.rbegin(), seeds.rend());
  m.jobs = 3;
  const auto u = free_energy_trace(m, 128, reversed);
  REQUIRE(u.records.size() == t.records.size());
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    CHECK(u.records[i].mean_log_z == t.records[i].mean_log_z);
    CHECK(u.records[i].se == t.records[i].se);
  }
  CHECK_THROWS_AS(free_energy_trace(m, 10, std::span(seeds).first(1)), PolymerError);
}

TEST_CASE("trace checkpoints match direct partition functions") {
  Model m = lattice_model(EnvironmentSpec::bernoulli(0.3, 0.0, 1.0, 0));
  const auto seeds = seed_list(5, 3);
  const auto t = free_energy_trace(m, 9, seeds, std::vector<long>{3, 9});
  for (const auto& r : t.records) {
    std::vector<double> direct;
    for (auto s : seeds) {
      const auto spec = m.env.with_seed(s);
      auto paths = oracle::enumerate_paths(0, 0, r.n, [&](long k, long x) {
        return field_value(spec, k, static_cast<double>(x));
      });
      direct.push_back(std::log(oracle::partition(paths)) / static_cast<double>(r.n));
    }
    double mean = 0.0;
    for (double d : direct) mean += d / 3.0;
    CHECK(r.mean_log_z == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("replicas that fail are excluded and counted") {
  Model m;
  m.kernel = StepKernel::gaussian(1.0);
  m.space = Space::grid(0.0, 0.1);
  m.transfer.max_halfwidth = 1.0;
  const auto seeds = seed_list(3, 3);
  try {
    free_energy_trace(m, 4, seeds);
    FAIL("expected a degenerate error");
  } catch (const PolymerError& e) {
    CHECK(e.kind() == ErrorKind::degenerate);
  }
}

TEST_CASE("fractional moment at n = 1 matches the Gaussian closed form") {
  Model m = lattice_model(EnvironmentSpec::gaussian(0.0, 1.0, 0));
  const auto seeds = seed_list(2024, 4000);
  const std::vector<long> ns{1, 2, 4};
  const auto fm = fractional_moment(m, 0.5, ns, seeds);
  // E[exp(-F/2 - 1/4)] with F ~ N(0,1).
  const double exact = std::exp(0.125 - 0.25);
  CHECK(exact == doctest::Approx(0.882497).epsilon(1e-6));
  CHECK(std::abs(fm.points[0].mean - exact) <= 3.0 * fm.points[0].se);
  CHECK(fm.fit_ns.size() == 3);

  const auto one = fractional_moment(m, 1.0, std::vector<long>{2, 4, 8}, seeds);
  for (const auto& p : one.points) CHECK(std::abs(p.mean - 1.0) <= 3.0 * p.se);

  CHECK_THROWS_AS(fractional_moment(m, 0.5, std::vector<long>{1, 2}, seeds), PolymerError);
  CHECK_THROWS_AS(fractional_moment(m, 0.0, ns, seeds), PolymerError);
}

TEST_CASE("fit uses the last decade when it holds three points") {
  Model m = lattice_model(EnvironmentSpec::gaussian(0.0, 1.0, 0));
  const auto seeds = seed_list(9, 20);
  const auto fm = fractional_moment(m, 0.9, std::vector<long>{1, 2, 20, 40, 100}, seeds);
  CHECK(fm.fit_ns == std::vector<long>{20, 40, 100});
  const auto all = fractional_moment(m, 0.9, std::vector<long>{1, 2, 4, 100}, seeds);
  CHECK(all.fit_ns.size() == 4);
}

TEST_CASE("exhaustive martingale for a Bernoulli environment") {
  Model m = lattice_model(EnvironmentSpec::bernoulli(0.5, 0.0, 1.0, 0));
  const std::vector<std::vector<long>> windows{{-3, -1, 1, 3}, {1}, {0, 2}};
  const auto r = martingale_check(m, 3, MartingaleMode::exhaustive, windows);
  CHECK(r.samples == 64);
  CHECK(std::abs(r.mean_w - 1.0) <= 1e-12);
  CHECK(std::abs(r.windows[0].mean - 1.0) <= 1e-12);
  CHECK(std::abs(r.windows[1].mean - oracle::binomial_pmf(3, 2)) <= 1e-12);
  CHECK(r.windows[1].exact == doctest::Approx(0.375).epsilon(1e-14));
  CHECK(r.windows[2].exact == 0.0);
  CHECK(r.passes());

  for (long n = 0; n <= 4; ++n) {
    const auto q = martingale_check(lattice_model(EnvironmentSpec::bernoulli(0.2, -0.5, 2.0, 0)), n,
                                    MartingaleMode::exhaustive);
    CHECK(std::abs(q.mean_w - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(martingale_check(m, 5, MartingaleMode::exhaustive), PolymerError);
  try {
    martingale_check(lattice_model(EnvironmentSpec::gaussian(0, 1, 0)), 2, MartingaleMode::exhaustive);
    FAIL("expected unsupported");
  } catch (const PolymerError& e) {
    CHECK(e.kind() == ErrorKind::unsupported);
  }
}

TEST_CASE("Monte Carlo martingale and windowed identity") {
  Model m = lattice_model(EnvironmentSpec::gaussian(0.0, 1.0, 0));
  const std::vector<std::vector<long>> windows{{0, 2}};
  const auto seeds = seed_list(31, 20000);
  const auto r = martingale_check(m, 6, MartingaleMode::monte_carlo, windows, seeds);
  const double exact = (oracle::binomial_pmf(6, 3) + oracle::binomial_pmf(6, 4));
  CHECK(exact == doctest::Approx(35.0 / 64.0).epsilon(1e-14));
  CHECK(r.windows[0].exact == doctest::Approx(exact).epsilon(1e-13));
  CHECK(std::abs(r.mean_w - 1.0) <= 4.0 * r.se);
  CHECK(std::abs(r.windows[0].mean - exact) <= 4.0 * r.windows[0].se);
  CHECK(r.passes());
}

TEST_CASE("shape sites respect parity and range") {
  CHECK(shape_site(0.5, 512) == 256);
  CHECK(shape_site(-0.5, 512) == -256);
  CHECK(shape_site(0.3, 10) == 2);
  CHECK(shape_site(-0.3, 10) == -2);
  CHECK(shape_site(1.0, 7) == 7);
  CHECK(shape_site(0.0, 7) == -1);
  CHECK_THROWS_AS(shape_site(1.5, 10), PolymerError);
}

TEST_CASE("free shape function against the binomial") {
  const long n = 512;
  const auto seeds = seed_list(1, 2);
  const std::vector<double> vs{-1.0, -0.5, 0.0, 0.5, 1.0};
  const auto s = shape_function(lattice_model(EnvironmentSpec::zero()), n, vs, seeds);
  REQUIRE(s.points.size() == 5);
  CHECK(s.points[4].lambda == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  for (const auto& p : s.points) CHECK(p.lambda == doctest::Approx(free_lambda(n, p.x)).epsilon(1e-12));
  CHECK(s.max_evenness_z == 0.0);
  CHECK(s.concavity_violations == 0);
}

TEST_CASE("free shape function near its large-deviation limit") {
  // The finite-n correction is about log(n) / (2n), below 2/n only up to n = 34.
  const long n = 32;
  const std::vector<double> vs{0.0, 0.5, 1.0};
  const auto s = shape_function(lattice_model(EnvironmentSpec::zero()), n, vs, seed_list(1, 2));
  const double ld = -(0.75 * std::log(1.5) + 0.25 * std::log(0.5));
  CHECK(ld == doctest::Approx(-0.1308).epsilon(1e-3));
  CHECK(std::abs(s.points[0].lambda) < 2.0 / n);
  CHECK(std::abs(s.points[1].lambda - ld) < 2.0 / n);
  CHECK(std::abs(s.points[2].lambda + std::log(2.0)) < 1e-15);
}

TEST_CASE("disordered shape function is even and concave at desk scale") {
  Model m = lattice_model(EnvironmentSpec::gaussian(0.0, 1.0, 0));
  std::vector<double> vs;
  for (int i = -8; i <= 8; ++i) vs.push_back(0.1 * i);
  const auto s = shape_function(m, 128, vs, seed_list(12, 20));
  CHECK(s.concavity_violations == 0);
  CHECK(s.max_evenness_z < 4.0);
  CHECK_THROWS_AS(shape_function(m, 10, std::vector<double>{1.2}, seed_list(1, 2)), PolymerError);
}

TEST_CASE("chaos identity") {
  Model m = lattice_model(EnvironmentSpec::gaussian(0.0, 1.0, 0));
  const auto seeds = seed_list(404, 20000);
  const auto point = chaos_identity_check(m, 0, 1, seeds);
  CHECK(point.overlap == 1.0);
  CHECK(point.variance == doctest::Approx(std::numbers::e - 1.0).epsilon(1e-13));
  CHECK(std::abs(point.ratio - 1.0) <= 4.0 * point.ratio_se);

  const auto run = chaos_identity_check(m, 40, 99, seeds);
  CHECK(run.overlap < 1.0);
  CHECK(std::abs(run.ratio - 1.0) <= 4.0 * run.ratio_se);

  Model b = lattice_model(EnvironmentSpec::bernoulli(0.3, 0.0, 1.5, 0));
  const auto rb = chaos_identity_check(b, 20, 7, seeds);
  const double q = 0.7 + 0.3 * std::exp(-1.5), q2 = 0.7 + 0.3 * std::exp(-3.0);
  CHECK(rb.variance == doctest::Approx(q2 / (q * q) - 1.0).epsilon(1e-12));
  CHECK(std::abs(rb.ratio - 1.0) <= 4.0 * rb.ratio_se);

  Model g;
  g.kernel = StepKernel::gaussian(1.0);
  g.space = Space::grid(0.0, 0.1);
  CHECK_THROWS_AS(chaos_identity_check(g, 2, 1, seeds), PolymerError);
}

TEST_CASE("local limit density bound") {
  const std::vector<long> ns{64};
  const std::vector<double> z0{0.0};
  const auto r = density_bound_check(StepKernel::gaussian(1.0), ns, 0.05, z0, 0.01);
  // P{S_64 in [0, 0.05)} for S_64 ~ N(0, 64), times 8 / 0.05.
  const double p = 0.5 * std::erf(0.05 / std::sqrt(128.0));
  CHECK(r.rows[0].sup_ratio == doctest::Approx(p * 8.0 / 0.05).epsilon(1e-6));
  CHECK(std::abs(r.rows[0].sup_ratio - 1.0 / std::sqrt(2.0 * std::numbers::pi)) < 2e-3);
  CHECK_FALSE(r.recentered);

  const auto shifted = density_bound_check(StepKernel::gaussian(1.0, 2.0), ns, 0.05, z0, 0.01);
  CHECK(shifted.recentered);
  CHECK(shifted.worst == doctest::Approx(r.worst).epsilon(1e-9));

  CHECK(density_bound_check(StepKernel::gaussian(1.0), ns, kInf, z0, 0.01).skipped);
  CHECK_THROWS_AS(density_bound_check(StepKernel::ssrw(), ns, 0.1, z0, 0.01), PolymerError);
}

TEST_CASE("uniform kernel density bound settles") {
  const std::vector<long> ns{8, 16, 32, 64};
  std::vector<double> zs;
  for (int i = -40; i <= 40; ++i) zs.push_back(0.25 * i);
  const auto r = density_bound_check(StepKernel::uniform(-0.5, 0.5), ns, 0.1, zs, 0.01);
  REQUIRE(r.rows.size() == 4);
  // The sup sits at z = 0 and climbs to the local-limit value sqrt(12 / 2 pi)
  // from below (negative excess kurtosis); increments shrink with each doubling.
  const double limit = std::sqrt(12.0 / (2.0 * std::numbers::pi));
  for (const auto& row : r.rows) {
    CHECK(row.argmax_z == 0.0);
    CHECK(row.sup_ratio < limit);
  }
  for (std::size_t i = 2; i < r.rows.size(); ++i) {
    const double prev = r.rows[i - 1].sup_ratio - r.rows[i - 2].sup_ratio;
    const double cur = r.rows[i].sup_ratio - r.rows[i - 1].sup_ratio;
    CHECK(std::abs(cur) < 0.75 * std::abs(prev));
  }
  CHECK(r.worst == doctest::Approx(limit).epsilon(5e-3));
}

TEST_CASE("trace export") {
  const auto t = free_energy_trace(lattice_model(EnvironmentSpec::gaussian(0.0, 1.0, 0)), 8, seed_list(4, 3));
  const auto path = std::filesystem::temp_directory_path() / "polymer_trace_test.csv";
  t.write_csv(path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "n,mean_logZ_n,se,mean_logW_n");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 4);
  const auto j = t.to_json();
  CHECK(j["seeds"].size() == 3);
  CHECK(j["spec"]["environment"] == EnvironmentSpec::gaussian(0.0, 1.0, 0).to_json());
  std::filesystem::remove(path);
}
