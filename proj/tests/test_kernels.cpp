#include <doctest.h>

#include <cmath>
#include <numbers>

#include "polymer/kernels.hpp"

using namespace polymer;

namespace {

StepKernel mixture_table() {
  std::vector<double> v;
  const double h = 0.01;
  for (int i = 0; i <= 3000; ++i) {
    const double x = -15.0 + h * i;
    v.push_back(0.5 * std::exp(-0.5 * (x + 5) * (x + 5)) / std::sqrt(2 * std::numbers::pi) +
                0.5 * std::exp(-0.5 * (x - 5) * (x - 5)) / std::sqrt(2 * std::numbers::pi));
  }
  return StepKernel::tabulated(-15.0, h, v);
}

StepKernel cauchy_table() {
  std::vector<double> v;
  const double h = 0.05;
  for (int i = 0; i <= 40000; ++i) {
    const double x = -1000.0 + h * i;
    v.push_back(1.0 / (std::numbers::pi * (1.0 + x * x)));
  }
  return StepKernel::tabulated(-1000.0, h, v);
}

double riemann_mass(const StepKernel& k, double lo, double hi, int n = 200000) {
  const double h = (hi - lo) / n;
  double s = 0.5 * (k.density(lo) + k.density(hi));
  for (int i = 1; i < n; ++i) s += k.density(lo + h * i);
  return s * h;
}

}  // namespace

TEST_CASE("density and energy at a point") {
  const auto g = density_energy(StepKernel::gaussian(1.0), 0.0);
  CHECK(g.p == doctest::Approx(1.0 / std::sqrt(2 * std::numbers::pi)).epsilon(1e-14));
  CHECK(g.V == doctest::Approx(0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-14));

  const auto s = density_energy(StepKernel::ssrw(), 1.0);
  CHECK(s.p == 0.5);
  CHECK(s.V == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(density_energy(StepKernel::ssrw(), 0.0).infinite_energy());

  const auto u = density_energy(StepKernel::uniform(0.0, 1.0), 2.0);
  CHECK(u.p == 0.0);
  CHECK(u.infinite_energy());

  CHECK_THROWS_AS(density_energy(StepKernel::gaussian(1.0), std::nan("")), PolymerError);
}

TEST_CASE("energy is finite exactly where the density is positive") {
  for (const auto& k : {StepKernel::gaussian(0.7, 0.3), StepKernel::laplace(1.3), StepKernel::uniform(-1, 2)}) {
    for (double x = -5; x <= 5; x += 0.125) {
      const auto de = density_energy(k, x);
      CHECK((de.p > 0) == std::isfinite(de.V));
      if (de.p > 0) CHECK(de.V == doctest::Approx(-std::log(de.p)).epsilon(1e-12));
    }
  }
}

TEST_CASE("built-in families are normalized") {
  CHECK(riemann_mass(StepKernel::gaussian(1.5), -20, 20) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(riemann_mass(StepKernel::laplace(0.8, 0.4), -40, 40, 2000000) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(riemann_mass(StepKernel::uniform(-0.5, 0.5), -1, 1, 400000) == doctest::Approx(1.0).epsilon(1e-5));
  const auto t = StepKernel::tabulated(0.0, 0.5, {0.0, 2.0, 4.0, 2.0, 0.0});
  CHECK(t.input_mass() == doctest::Approx(4.0));
  CHECK(riemann_mass(t, 0.0, 2.0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(t.mean() == doctest::Approx(1.0));
}

TEST_CASE("tabulated kernels reject negative values") {
  CHECK_THROWS_AS(StepKernel::tabulated(0.0, 1.0, {0.1, -0.2, 0.3}), PolymerError);
  try {
    StepKernel::tabulated(0.0, 1.0, {0.1, -0.2, 0.3});
  } catch (const PolymerError& e) {
    CHECK(e.kind() == ErrorKind::invalid_kernel);
  }
}

TEST_CASE("density assumptions") {
  const auto g = validate_density_assumptions(StepKernel::gaussian(1.0));
  CHECK(g.passes_A3);
  CHECK(g.log_concave);

  for (const auto& k : {StepKernel::laplace(1.0), StepKernel::uniform(0, 1), StepKernel::gaussian(3.0, 1.0)}) {
    const auto r = validate_density_assumptions(k);
    CHECK(r.log_concave);
    CHECK(r.passes_A3);
  }

  const auto mix = validate_density_assumptions(mixture_table());
  CHECK(mix.passes_A3);
  CHECK_FALSE(mix.log_concave);
  CHECK(mix.worst_second_difference < -1e-9);

  const auto cauchy = validate_density_assumptions(cauchy_table());
  CHECK_FALSE(cauchy.passes_A3);
  CHECK_FALSE(cauchy.moments_ok);

  CHECK_THROWS_AS(validate_density_assumptions(StepKernel::ssrw()), PolymerError);
}

TEST_CASE("log-concave kernels satisfy the two-point inequality") {
  for (const auto& k : {StepKernel::gaussian(1.0), StepKernel::laplace(0.7), StepKernel::uniform(-1, 1)}) {
    const double scale = k.sup_density() * k.sup_density();
    int violations = 0;
    for (double x = -2; x <= 2; x += 0.5)
      for (double xp = x; xp <= 2; xp += 0.5)
        for (double z = -2; z <= 2; z += 0.5)
          for (double zp = z; zp <= 2; zp += 0.5) {
            const double lhs = k.density(z - x) * k.density(zp - xp);
            const double rhs = k.density(zp - x) * k.density(z - xp);
            if (lhs < rhs - 1e-12 * scale) ++violations;
          }
    CHECK(violations == 0);
  }
}

TEST_CASE("density ratio r0") {
  CHECK(density_ratio_r0(StepKernel::gaussian(1.0), Interval{-1, 1}) ==
        doctest::Approx(2 * std::exp(0.5)).epsilon(1e-12));
  CHECK(density_ratio_r0(StepKernel::gaussian(1.0)) == doctest::Approx(4.0).epsilon(1e-9));
  const auto hm = StepKernel::gaussian(1.0).half_max_interval();
  CHECK(hm.hi == doctest::Approx(std::sqrt(2 * std::log(2.0))).epsilon(1e-9));
}

TEST_CASE("shift-exceptional set") {
  const auto g = StepKernel::gaussian(1.0);
  const double r0 = density_ratio_r0(g, Interval{-1, 1});
  const double t = 0.1;
  const double y0 = std::log(r0) / t - t / 2;
  const double exact = 0.5 * std::erfc(y0 / std::sqrt(2.0));
  const double got = shift_exceptional_measure(g, r0, t);
  CHECK(exact < 1e-30);
  CHECK(got > exact / 10);
  CHECK(got < exact * 10);

  CHECK(shift_exceptional_measure(StepKernel::uniform(0, 1), 2.0, 0.25) == doctest::Approx(0.25).epsilon(1e-9));

  // Brute-force grid count for the uniform case.
  const auto u = StepKernel::uniform(0, 1);
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double y = (i + 0.5) / n;
    if (u.density(y) >= 2.0 * u.density(y + 0.25)) ++hits;
  }
  CHECK(hits / double(n) == doctest::Approx(0.25).epsilon(1e-4));

  CHECK_THROWS_AS(shift_exceptional_measure(g, 1.0, 0.1), PolymerError);
}

TEST_CASE("shift-exceptional measure is O(|t|)") {
  for (const auto& k : {StepKernel::gaussian(1.0), StepKernel::laplace(1.0), StepKernel::uniform(-0.5, 0.5)}) {
    const double r0 = density_ratio_r0(k);
    double worst = 0.0;
    for (int j = 1; j <= 12; ++j) {
      const double t = std::ldexp(1.0, -j);
      worst = std::max(worst, shift_exceptional_measure(k, r0, t) / t);
      worst = std::max(worst, shift_exceptional_measure(k, r0, -t) / t);
    }
    CHECK(worst < 2.0);
  }
}

TEST_CASE("discretized step law") {
  const auto d = discretize(StepKernel::gaussian(1.0), 0.05);
  double s = 0, mean = 0, var = 0;
  for (std::size_t j = 0; j < d.weights.size(); ++j) {
    const double x = 0.05 * (d.first_offset + static_cast<long>(j));
    s += d.weights[j];
    mean += x * d.weights[j];
    var += x * x * d.weights[j];
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(mean) < 1e-14);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.tail_mass < 1e-12);

  const auto l = discretize(StepKernel::ssrw(), 1.0);
  CHECK(l.first_offset == -1);
  CHECK(l.weights == std::vector<double>{0.5, 0.0, 0.5});
  CHECK_THROWS_AS(discretize(StepKernel::ssrw(), 0.5), PolymerError);
}

TEST_CASE("kernel json round trip") {
  for (const auto& k : {StepKernel::ssrw(), StepKernel::gaussian(1.2, -0.1), StepKernel::laplace(0.5),
                        StepKernel::uniform(-1, 3), StepKernel::tabulated(-1.0, 0.5, {0, 1, 2, 1, 0})}) {
    const auto j = k.to_json();
    CHECK(StepKernel::from_json(j) == k);
    CHECK(StepKernel::from_json(nlohmann::json::parse(j.dump())) == k);
  }
  CHECK_THROWS_AS(StepKernel::from_json({{"family", "nope"}}), PolymerError);
}

TEST_CASE("recentering") {
  const auto k = StepKernel::uniform(0, 1).recentered();
  CHECK(std::abs(k.mean()) < 1e-14);
  CHECK(k.density(-0.4) == doctest::Approx(1.0));
  const auto t = StepKernel::tabulated(0.0, 0.5, {0.0, 1.0, 3.0, 0.0}).recentered();
  CHECK(std::abs(t.mean()) < 1e-12);
}
