#include "polymer/localization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace polymer {

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Sorted positions with prefix sums of mass.
struct Cumulative {
  std::vector<double> x;
  std::vector<double> prefix;  // prefix[j] = mass of x[0..j)
  double eps = 0.0;

  explicit Cumulative(const EndpointMeasure& nu) : eps(1e-9 * nu.space.spacing) {
    x.reserve(nu.size());
    prefix.reserve(nu.size() + 1);
    prefix.push_back(0.0);
    CompensatedSum s;
    for (std::size_t j = 0; j < nu.size(); ++j) {
      x.push_back(nu.position(j));
      s.add(nu.mass[j]);
      prefix.push_back(s.value());
    }
  }
  double closed_ball(double c, double K) const {
    const auto lo = std::lower_bound(x.begin(), x.end(), c - K - eps) - x.begin();
    const auto hi = std::upper_bound(x.begin(), x.end(), c + K + eps) - x.begin();
    return hi > lo ? prefix[static_cast<std::size_t>(hi)] - prefix[static_cast<std::size_t>(lo)] : 0.0;
  }
  // closed_ball for every center of an ascending list, in one linear pass.
  std::vector<double> closed_balls(const std::vector<double>& centers, double K) const {
    std::vector<double> out(centers.size());
    std::size_t lo = 0, hi = 0;
    for (std::size_t i = 0; i < centers.size(); ++i) {
      while (lo < x.size() && x[lo] < centers[i] - K - eps) ++lo;
      while (hi < x.size() && !(x[hi] > centers[i] + K + eps)) ++hi;
      out[i] = hi > lo ? prefix[hi] - prefix[lo] : 0.0;
    }
    return out;
  }
};

void require_nonempty(const EndpointMeasure& nu) {
  if (nu.mass.empty()) throw PolymerError(ErrorKind::degenerate, "empty measure");
}

void require_radius(double K) {
  if (!(K > 0.0) || !std::isfinite(K)) throw PolymerError(ErrorKind::parameter, "ball radius must be > 0");
}

std::vector<double> candidate_centers(std::vector<double> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  std::vector<double> out;
  out.reserve(2 * pts.size());
  for (std::size_t j = 0; j < pts.size(); ++j) {
    out.push_back(pts[j]);
    if (j + 1 < pts.size()) out.push_back(0.5 * (pts[j] + pts[j + 1]));
  }
  return out;
}

// Triangular CDF of U - U' for U, U' uniform on [0, h].
double triangle_cdf(double t, double h) {
  if (t <= -h) return 0.0;
  if (t >= h) return 1.0;
  if (t <= 0.0) return (t + h) * (t + h) / (2.0 * h * h);
  return 1.0 - (h - t) * (h - t) / (2.0 * h * h);
}

}  // namespace

void LocalizationParams::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw PolymerError(ErrorKind::parameter, "delta must lie in (0, 1)");
  require_radius(K);
  if (!(theta_frac > 0.0 && theta_frac <= 1.0))
    throw PolymerError(ErrorKind::parameter, "theta_frac must lie in (0, 1]");
}

nlohmann::json LocalizationParams::to_json() const {
  return {{"delta", delta}, {"K", K}, {"theta_frac", theta_frac}};
}

double ball_mass(const EndpointMeasure& nu, double center, double K) {
  require_radius(K);
  return Cumulative(nu).closed_ball(center, K);
}

BallMass best_ball_mass(const EndpointMeasure& nu, double K) {
  require_nonempty(nu);
  require_radius(K);
  const Cumulative cum(nu);
  BallMass best{nu.position(0), -1.0};
  const auto centers = candidate_centers(cum.x);
  const auto masses = cum.closed_balls(centers, K);
  for (std::size_t i = 0; i < centers.size(); ++i)
    if (masses[i] > best.mass) best = {centers[i], masses[i]};
  return best;
}

bool compatible(const EndpointMeasure& a, const EndpointMeasure& b) noexcept {
  return a.space.lattice == b.space.lattice && a.space.spacing == b.space.spacing &&
         a.space.origin == b.space.origin;
}

BallMass joint_ball_mass(std::span<const EndpointMeasure> family, double K) {
  if (family.empty()) throw PolymerError(ErrorKind::degenerate, "joint_ball_mass: empty family");
  require_radius(K);
  std::vector<Cumulative> cums;
  std::vector<double> pts;
  for (const auto& nu : family) {
    require_nonempty(nu);
    if (!compatible(nu, family.front()))
      throw PolymerError(ErrorKind::mismatch, "joint_ball_mass: measures live on different spaces");
    cums.emplace_back(nu);
    pts.insert(pts.end(), cums.back().x.begin(), cums.back().x.end());
  }
  BallMass best{pts.front(), -1.0};
  const auto centers = candidate_centers(std::move(pts));
  std::vector<double> joint(centers.size(), kInf);
  for (const auto& cum : cums) {
    const auto masses = cum.closed_balls(centers, K);
    for (std::size_t i = 0; i < centers.size(); ++i) joint[i] = std::min(joint[i], masses[i]);
  }
  for (std::size_t i = 0; i < centers.size(); ++i)
    if (joint[i] > best.mass) best = {centers[i], joint[i]};
  return best;
}

LocalizationTracker::LocalizationTracker(LocalizationParams params) : params_(params) { params_.validate(); }

void LocalizationTracker::add(long k, const EndpointMeasure& nu) {
  const auto b = best_ball_mass(nu, params_.K);
  records_.push_back({k, b.center, b.mass, std::nullopt, b.mass > 1.0 - params_.delta});
}

void LocalizationTracker::add_joint(long k, std::span<const EndpointMeasure> family) {
  if (family.size() == 1) {
    add(k, family.front());
    return;
  }
  joint_ = true;
  const auto j = joint_ball_mass(family, params_.K);
  double single = kInf;
  for (const auto& nu : family) single = std::min(single, best_ball_mass(nu, params_.K).mass);
  records_.push_back({k, j.center, single, j.mass, j.mass > 1.0 - params_.delta});
}

LocalizationReport LocalizationTracker::report() const {
  LocalizationReport r;
  r.params = params_;
  r.records = records_;
  r.joint = joint_;
  const std::size_t n = records_.size();
  if (n == 0) return r;
  std::size_t hits = 0, tail_hits = 0;
  const std::size_t half = n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    hits += records_[i].indicator;
    if (i >= half) tail_hits += records_[i].indicator;
  }
  r.fraction = static_cast<double>(hits) / static_cast<double>(n);
  r.tail_fraction = static_cast<double>(tail_hits) / static_cast<double>(n - half);
  return r;
}

LocalizationReport localization_fraction(std::span<const EndpointMeasure> measures,
                                         const LocalizationParams& params) {
  if (measures.empty()) throw PolymerError(ErrorKind::parameter, "localization_fraction: empty sequence");
  LocalizationTracker t(params);
  for (const auto& nu : measures) t.add(nu.time, nu);
  return t.report();
}

nlohmann::json LocalizationReport::summary() const {
  return {{"fraction", fraction},
          {"tail_fraction", tail_fraction},
          {"steps", records.size()},
          {"joint", joint},
          {"theta_frac_reached", fraction >= params.theta_frac},
          {"params", params.to_json()}};
}

void LocalizationReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw PolymerError(ErrorKind::input, "cannot open " + path.string());
  out << "k,center,mass,joint_mass,indicator\n";
  for (const auto& r : records)
    out << r.k << ',' << fmt17(r.center) << ',' << fmt17(r.mass) << ','
        << (r.joint_mass ? fmt17(*r.joint_mass) : std::string{}) << ',' << (r.indicator ? 1 : 0) << '\n';
}

double exact_match_overlap(const EndpointMeasure& nu) {
  CompensatedSum s;
  for (double m : nu.mass) s.add(m * m);
  return s.value();
}

double overlap(const EndpointMeasure& nu, double r, std::vector<std::string>* warnings) {
  require_nonempty(nu);
  const double h = nu.space.spacing;
  if (nu.space.lattice) {
    if (r == 0.0) return exact_match_overlap(nu);
    if (!(r > 0.0)) throw PolymerError(ErrorKind::parameter, "overlap: r must be >= 0 on the lattice");
    // Strict |x - y| < r in index units.
    const long reach = static_cast<long>(std::ceil(r / (h * static_cast<double>(nu.stride)))) - 1;
    CompensatedSum total;
    const long n = static_cast<long>(nu.size());
    std::vector<double> prefix(nu.size() + 1, 0.0);
    for (long j = 0; j < n; ++j) prefix[j + 1] = prefix[j] + nu.mass[j];
    for (long i = 0; i < n; ++i) {
      const long lo = std::max(0L, i - reach), hi = std::min(n - 1, i + reach);
      total.add(nu.mass[i] * (prefix[hi + 1] - prefix[lo]));
    }
    return total.value();
  }
  if (!(r > 0.0) || !std::isfinite(r)) throw PolymerError(ErrorKind::parameter, "overlap: r must be > 0");
  if (r < h && warnings) {
    std::ostringstream os;
    os << "overlap radius " << r << " is below the grid spacing " << h;
    warnings->push_back(os.str());
  }
  const long reach = static_cast<long>(std::ceil(r / h)) + 1;
  std::vector<double> q(static_cast<std::size_t>(2 * reach + 1));
  for (long d = -reach; d <= reach; ++d) {
    const double shift = static_cast<double>(d) * h;
    q[static_cast<std::size_t>(d + reach)] =
        std::max(0.0, triangle_cdf(r - shift, h) - triangle_cdf(-r - shift, h));
  }
  const long n = static_cast<long>(nu.size());
  CompensatedSum total;
  for (long i = 0; i < n; ++i) {
    if (nu.mass[i] == 0.0) continue;
    double s = 0.0;
    for (long d = std::max(-reach, -i); d <= std::min(reach, n - 1 - i); ++d)
      s += q[static_cast<std::size_t>(d + reach)] * nu.mass[i + d];
    total.add(nu.mass[i] * s);
  }
  return total.value();
}

double sup_open_ball_mass(const EndpointMeasure& nu, double r) {
  require_nonempty(nu);
  if (!(r > 0.0)) throw PolymerError(ErrorKind::parameter, "sup_open_ball_mass: r must be > 0");
  // Atoms fit in an open ball of radius r iff their span is < 2r.
  const double step = nu.space.spacing * static_cast<double>(nu.stride);
  const long width = static_cast<long>(std::ceil(2.0 * r / step)) - 1;
  const long n = static_cast<long>(nu.size());
  double best = 0.0, window = 0.0;
  long lo = 0;
  for (long hi = 0; hi < n; ++hi) {
    window += nu.mass[hi];
    while (hi - lo > width) window -= nu.mass[lo++];
    best = std::max(best, window);
  }
  return std::min(best, 1.0);
}

const char* to_string(Dominance d) noexcept {
  switch (d) {
    case Dominance::mu_below: return "mu_below";
    case Dominance::nu_below: return "nu_below";
    case Dominance::equal: return "equal";
    case Dominance::incomparable: return "incomparable";
  }
  return "unknown";
}

Dominance stochastic_dominance(const EndpointMeasure& mu, const EndpointMeasure& nu, double tol) {
  require_nonempty(mu);
  require_nonempty(nu);
  std::size_t i = 0, j = 0;
  CompensatedSum fm, fn;
  bool mu_le = true, nu_le = true;
  while (i < mu.size() || j < nu.size()) {
    const double xm = i < mu.size() ? mu.position(i) : kInf;
    const double xn = j < nu.size() ? nu.position(j) : kInf;
    const double x = std::min(xm, xn);
    while (i < mu.size() && mu.position(i) <= x) fm.add(mu.mass[i++]);
    while (j < nu.size() && nu.position(j) <= x) fn.add(nu.mass[j++]);
    if (fm.value() < fn.value() - tol) mu_le = false;
    if (fn.value() < fm.value() - tol) nu_le = false;
  }
  if (mu_le && nu_le) return Dominance::equal;
  if (mu_le) return Dominance::mu_below;
  if (nu_le) return Dominance::nu_below;
  return Dominance::incomparable;
}

double total_variation(const EndpointMeasure& mu, const EndpointMeasure& nu) {
  require_nonempty(mu);
  require_nonempty(nu);
  if (!compatible(mu, nu)) throw PolymerError(ErrorKind::mismatch, "total_variation: different spaces");
  std::size_t i = 0, j = 0;
  CompensatedSum s;
  while (i < mu.size() || j < nu.size()) {
    const long a = i < mu.size() ? mu.index(i) : std::numeric_limits<long>::max();
    const long b = j < nu.size() ? nu.index(j) : std::numeric_limits<long>::max();
    if (a == b) {
      s.add(std::abs(mu.mass[i++] - nu.mass[j++]));
    } else if (a < b) {
      s.add(mu.mass[i++]);
    } else {
      s.add(nu.mass[j++]);
    }
  }
  return std::min(1.0, 0.5 * s.value());
}

}  // namespace polymer
