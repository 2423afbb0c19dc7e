#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "polymer/localization.hpp"

using namespace polymer;

namespace {

EndpointMeasure lattice_measure(long first, long stride, std::vector<double> w) {
  return EndpointMeasure::from_weights(Space::integers(), first, stride, std::move(w));
}

EndpointMeasure free_endpoint(long n, long a = 0) {
  const LazyField zero(EnvironmentSpec::zero(), Space::integers());
  return endpoint_distribution(StepKernel::ssrw(), zero, static_cast<double>(a), 0, n);
}

// Brute-force ball mass over a fine grid of centers.
double brute_best(const EndpointMeasure& nu, double K) {
  double best = 0;
  const double lo = nu.position(0) - K - 1, hi = nu.position(nu.size() - 1) + K + 1;
  for (double c = lo; c <= hi; c += 0.25) {
    double m = 0;
    for (std::size_t j = 0; j < nu.size(); ++j)
      if (std::abs(nu.position(j) - c) <= K) m += nu.mass[j];
    best = std::max(best, m);
  }
  return best;
}

}  // namespace

TEST_CASE("best ball mass") {
  const auto delta3 = EndpointMeasure::point_mass(Space::integers(), 3);
  const auto b = best_ball_mass(delta3, 1.0);
  CHECK(b.center == 3.0);
  CHECK(b.mass == 1.0);

  const auto uni = lattice_measure(0, 1, std::vector<double>(10, 1.0));
  CHECK(best_ball_mass(uni, 1.0).mass == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(best_ball_mass(uni, 1.0).center == 1.0);  // leftmost maximizer

  const auto e100 = free_endpoint(100);
  double want = 0;
  for (long c = -100; c <= 90; c += 2) {
    double s = 0;
    for (long x = c; x < c + 12; x += 2) s += oracle::ssrw_pmf(100, x);
    want = std::max(want, s);
  }
  CHECK(best_ball_mass(e100, 5.0).mass == doctest::Approx(want).epsilon(1e-12));
  CHECK(want == doctest::Approx(0.4493).epsilon(1e-3));
  CHECK(best_ball_mass(e100, 5.0).mass == doctest::Approx(brute_best(e100, 5.0)).epsilon(1e-12));

  CHECK_THROWS_AS(best_ball_mass(delta3, 0.0), PolymerError);
  EndpointMeasure empty;
  CHECK_THROWS_AS(best_ball_mass(empty, 1.0), PolymerError);
}

TEST_CASE("joint ball mass") {
  const auto e = free_endpoint(30);
  const std::vector<EndpointMeasure> one{e};
  const auto j = joint_ball_mass(one, 3.0);
  const auto b = best_ball_mass(e, 3.0);
  CHECK(j.center == b.center);
  CHECK(j.mass == b.mass);

  const std::vector<EndpointMeasure> apart{EndpointMeasure::point_mass(Space::integers(), 0),
                                           EndpointMeasure::point_mass(Space::integers(), 10)};
  CHECK(joint_ball_mass(apart, 1.0).mass == 0.0);

  const auto spec = EnvironmentSpec::gaussian(0, 1, 31);
  const LazyField f(spec, Space::integers());
  std::vector<EndpointMeasure> fam{endpoint_distribution(StepKernel::ssrw(), f, 0, 0, 8),
                                   endpoint_distribution(StepKernel::ssrw(), f, 2, 0, 8)};
  double want = 0;
  for (double c = -12; c <= 12; c += 0.5) {
    double m = kInf;
    for (const auto& nu : fam) {
      double s = 0;
      for (std::size_t q = 0; q < nu.size(); ++q)
        if (std::abs(nu.position(q) - c) <= 2.0) s += nu.mass[q];
      m = std::min(m, s);
    }
    want = std::max(want, m);
  }
  const auto jm = joint_ball_mass(fam, 2.0);
  CHECK(jm.mass == doctest::Approx(want).epsilon(1e-12));
  for (const auto& nu : fam) CHECK(jm.mass <= ball_mass(nu, jm.center, 2.0) + 1e-15);

  const std::vector<EndpointMeasure> mixed{e, EndpointMeasure::point_mass(Space::grid(0.0, 0.5), 0)};
  CHECK_THROWS_AS(joint_ball_mass(mixed, 1.0), PolymerError);
}

TEST_CASE("localization fraction") {
  std::vector<EndpointMeasure> points;
  for (long k = 0; k < 20; ++k) points.push_back(EndpointMeasure::point_mass(Space::integers(), k % 3, k));
  const auto r = localization_fraction(points, {0.1, 0.5, 0.5});
  CHECK(r.fraction == 1.0);

  LocalizationTracker t({0.5, 5.0, 0.5});
  const LazyField zero(EnvironmentSpec::zero(), Space::integers());
  forward_sweep(StepKernel::ssrw(), zero, 0, 0, 400, [&](const LogWeightField& lr, double) {
    if (lr.k > 0) t.add(lr.k, EndpointMeasure::from_log_field(lr));
  });
  const auto rep = t.report();
  CHECK(rep.records.size() == 400);
  long hits = 0;
  for (const auto& rec : rep.records) hits += rec.indicator;
  CHECK(rep.fraction == static_cast<double>(hits) / 400.0);
  CHECK(rep.tail_fraction == 0.0);
  // Exact binomial ball masses decay like K / sqrt(k).
  CHECK(rep.records.back().mass < 0.5);
  CHECK(rep.records.back().mass == doctest::Approx(best_ball_mass(free_endpoint(400), 5.0).mass).epsilon(1e-10));

  CHECK_THROWS_AS(LocalizationTracker({1.5, 1.0, 0.5}), PolymerError);
  CHECK_THROWS_AS(localization_fraction(std::span<const EndpointMeasure>{}, {0.5, 1.0, 0.5}), PolymerError);
}

TEST_CASE("joint records respect the single-start bound") {
  const auto spec = EnvironmentSpec::gaussian(0, 1, 8);
  const LazyField f(spec, Space::integers());
  LocalizationTracker t({0.5, 3.0, 0.5});
  for (long n = 1; n <= 40; ++n) {
    std::vector<EndpointMeasure> fam;
    for (long a : {-4L, -2L, 0L, 2L, 4L}) fam.push_back(endpoint_distribution(StepKernel::ssrw(), f, a, 0, n));
    t.add_joint(n, fam);
  }
  const auto rep = t.report();
  CHECK(rep.joint);
  for (const auto& r : rep.records) {
    REQUIRE(r.joint_mass);
    CHECK(*r.joint_mass <= r.mass + 1e-15);
    CHECK(r.indicator == (*r.joint_mass > 0.5));
  }
}

TEST_CASE("overlap") {
  const auto pm = EndpointMeasure::point_mass(Space::integers(), 4);
  CHECK(overlap(pm, 0.5) == 1.0);
  CHECK(overlap(pm, 0.0) == 1.0);
  const auto uni = lattice_measure(0, 1, std::vector<double>(8, 1.0));
  CHECK(exact_match_overlap(uni) == doctest::Approx(1.0 / 8).epsilon(1e-15));
  CHECK(overlap(uni, 0.0) == doctest::Approx(1.0 / 8).epsilon(1e-15));
  // |x - y| < 1 on the integers is exact match; < 1.5 adds neighbours.
  CHECK(overlap(uni, 1.0) == doctest::Approx(1.0 / 8).epsilon(1e-15));
  CHECK(overlap(uni, 1.5) == doctest::Approx((8 + 14) / 64.0).epsilon(1e-15));

  // Uniform[0,1] as a grid density with cells tiling [0, 1].
  const int N = 200;
  const double h = 1.0 / N;
  const auto u = EndpointMeasure::from_weights(Space::grid(0.5 * h, h), 0, 1, std::vector<double>(N, 1.0));
  CHECK(overlap(u, 0.5) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(overlap(u, 0.3) == doctest::Approx(0.6 - 0.09).epsilon(1e-12));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0, 1);
  int hits = 0;
  for (int i = 0; i < 200000; ++i) hits += std::abs(U(rng) - U(rng)) < 0.5;
  CHECK(std::abs(hits / 200000.0 - 0.75) < 4 * std::sqrt(0.75 * 0.25 / 200000));

  std::vector<std::string> warnings;
  overlap(u, 0.5 * h, &warnings);
  CHECK(warnings.size() == 1);
  CHECK_THROWS_AS(overlap(u, 0.0), PolymerError);
  CHECK_THROWS_AS(overlap(uni, -1.0), PolymerError);
}

TEST_CASE("overlap comparison inequalities on random measures") {
  std::mt19937_64 rng(17);
  std::exponential_distribution<double> ex(1.0);
  int violations = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> w(64);
    for (auto& x : w) x = trial % 2 ? ex(rng) : std::pow(ex(rng), 6);
    const auto nu = lattice_measure(0, 1, w);
    for (double r : {0.5, 1.0, 1.5, 3.0}) {
      const double I = overlap(nu, r);
      for (int K = 1; K <= 4; ++K) violations += overlap(nu, K * r) > 9.0 * K * I + 1e-12;
      violations += I > 9.0 * sup_open_ball_mass(nu, r) + 1e-12;
      const double s = sup_open_ball_mass(nu, r);
      violations += s * s > overlap(nu, 2 * r) + 1e-12;
      violations += overlap(nu, r) > overlap(nu, 2 * r) + 1e-15;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("open ball mass") {
  const auto uni = lattice_measure(0, 1, std::vector<double>(10, 1.0));
  CHECK(sup_open_ball_mass(uni, 1.0) == doctest::Approx(0.2));  // centred at 0.5
  CHECK(sup_open_ball_mass(uni, 0.5) == doctest::Approx(0.1));
  CHECK(sup_open_ball_mass(uni, 1.01) == doctest::Approx(0.3));
  const auto even = lattice_measure(0, 2, std::vector<double>(5, 1.0));
  CHECK(sup_open_ball_mass(even, 1.0) == doctest::Approx(0.2));
  CHECK(sup_open_ball_mass(even, 1.5) == doctest::Approx(0.4));
}

TEST_CASE("stochastic dominance") {
  const auto d0 = EndpointMeasure::point_mass(Space::integers(), 0);
  const auto d1 = EndpointMeasure::point_mass(Space::integers(), 1);
  CHECK(stochastic_dominance(d0, d1) == Dominance::mu_below);
  CHECK(stochastic_dominance(d1, d0) == Dominance::nu_below);
  CHECK(stochastic_dominance(d0, d0) == Dominance::equal);
  const auto two = lattice_measure(0, 2, {1.0, 1.0});
  CHECK(stochastic_dominance(two, d1) == Dominance::incomparable);
  const auto e = free_endpoint(20);
  CHECK(stochastic_dominance(e, e) == Dominance::equal);
  CHECK(stochastic_dominance(e, free_endpoint(20, 2)) == Dominance::mu_below);
}

TEST_CASE("total variation") {
  const auto e = free_endpoint(10);
  CHECK(total_variation(e, e) == 0.0);
  CHECK(total_variation(EndpointMeasure::point_mass(Space::integers(), 0),
                        EndpointMeasure::point_mass(Space::integers(), 2)) == 1.0);
  const auto a = free_endpoint(10, 0), b = free_endpoint(10, 2);
  double want = 0;
  for (long x = -12; x <= 12; ++x) want += std::abs(oracle::ssrw_pmf(10, x) - oracle::ssrw_pmf(10, x - 2));
  CHECK(total_variation(a, b) == doctest::Approx(0.5 * want).epsilon(1e-12));
  CHECK_THROWS_AS(total_variation(e, EndpointMeasure::point_mass(Space::grid(0, 0.5), 0)), PolymerError);
}

TEST_CASE("report export") {
  LocalizationTracker t({0.5, 1.0, 0.5});
  t.add(1, EndpointMeasure::point_mass(Space::integers(), 0, 1));
  const auto rep = t.report();
  const auto s = rep.summary();
  CHECK(s["fraction"] == 1.0);
  CHECK(s["params"]["K"] == 1.0);
  const auto path = std::filesystem::temp_directory_path() / "polymerlab_loc.csv";
  rep.write_csv(path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "k,center,mass,joint_mass,indicator");
  std::getline(in, line);
  CHECK(line == "1,0,1,,1");
  std::filesystem::remove(path);
}
