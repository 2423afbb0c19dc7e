#include "polymer/disorder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "polymer/localization.hpp"
#include "polymer/parallel.hpp"

namespace polymer {

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

nlohmann::json space_json(const Space& s) {
  if (s.lattice) return {{"kind", "lattice"}};
  return {{"kind", "grid"}, {"origin", s.origin}, {"spacing", s.spacing}};
}

// Seeds paired with their position, sorted by seed; reductions walk this
// order so the result does not depend on how the caller listed the seeds.
std::vector<std::size_t> seed_order(std::span<const std::uint64_t> seeds) {
  std::vector<std::size_t> order(seeds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return seeds[a] < seeds[b]; });
  return order;
}

MeanSE reduce(const std::vector<double>& xs, const std::vector<std::size_t>& order) {
  std::vector<double> sorted;
  sorted.reserve(order.size());
  for (auto i : order) sorted.push_back(xs[i]);
  return mean_se(sorted);
}

double se_ratio(double mean, double se) {
  if (se > 0.0) return mean / se;
  return mean == 0.0 ? 0.0 : std::copysign(kInf, mean);
}

void require_seeds(std::span<const std::uint64_t> seeds, std::size_t min, const char* what) {
  if (seeds.size() < min)
    throw PolymerError(ErrorKind::parameter,
                       std::string(what) + " needs at least " + std::to_string(min) + " replicas");
}

// Values listed per (k, index); every other site reads as zero. Used to feed
// one enumerated environment assignment to the transfer engine.
class TableField final : public FieldSource {
 public:
  explicit TableField(Space space) : space_(space) {}
  const Space& space() const noexcept override { return space_; }
  void fill(long k, long first, long stride, std::span<double> out) const override {
    for (std::size_t j = 0; j < out.size(); ++j) {
      auto it = values_.find({k, first + static_cast<long>(j) * stride});
      out[j] = it == values_.end() ? 0.0 : it->second;
    }
  }
  std::optional<std::pair<long, long>> index_bounds(long) const override { return std::nullopt; }
  void set(long k, long i, double v) { values_[{k, i}] = v; }

 private:
  Space space_;
  std::map<std::pair<long, long>, double> values_;
};

}  // namespace

nlohmann::json model_json(const Model& model) {
  return {{"kernel", model.kernel.to_json()},
          {"environment", model.env.to_json()},
          {"space", space_json(model.space)},
          {"start", model.start},
          {"tail_mass", model.transfer.tail_mass},
          {"truncation_tolerance", model.transfer.truncation_tolerance},
          {"max_halfwidth", std::isfinite(model.transfer.max_halfwidth) ? nlohmann::json(model.transfer.max_halfwidth)
                                                                        : nlohmann::json(nullptr)}};
}

std::vector<long> geometric_checkpoints(long n_max) {
  if (n_max < 1) throw PolymerError(ErrorKind::parameter, "n_max must be at least 1");
  std::vector<long> out;
  for (long n = n_max;;) {
    out.push_back(n);
    if (n == 1) break;
    n = (n + 1) / 2;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t r = 0; r < count; ++r) out[r] = replica_seed(base, r);
  return out;
}

// ---------------------------------------------------------------- free energy

const TraceRecord& DisorderTrace::at(long n) const {
  for (const auto& r : records)
    if (r.n == n) return r;
  throw PolymerError(ErrorKind::parameter, "no checkpoint at n = " + std::to_string(n));
}

nlohmann::json DisorderTrace::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records)
    recs.push_back({{"n", r.n}, {"mean_logZ_n", r.mean_log_z}, {"se", r.se}, {"mean_logW_n", r.mean_log_w}});
  const double gap = records.empty() ? 0.0 : theta - records.back().mean_log_z;
  return {{"records", recs},
          {"theta", theta},
          {"gap", gap},
          {"gap_se", records.empty() ? 0.0 : records.back().se},
          {"replicas", replicas},
          {"failures", failures},
          {"failure_messages", failure_messages},
          {"seeds", seeds},
          {"spec", spec}};
}

void DisorderTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw PolymerError(ErrorKind::input, "cannot open " + path.string());
  out << "n,mean_logZ_n,se,mean_logW_n\n";
  for (const auto& r : records)
    out << r.n << ',' << fmt17(r.mean_log_z) << ',' << fmt17(r.se) << ',' << fmt17(r.mean_log_w) << '\n';
}

namespace {

struct ReplicaTrace {
  std::vector<double> log_z;  // one per checkpoint
  std::string error;
};

ReplicaTrace run_trace(const Model& model, std::uint64_t seed, const std::vector<long>& checkpoints) {
  ReplicaTrace out;
  try {
    LazyField field(model.env.with_seed(seed), model.space);
    out.log_z.assign(checkpoints.size(), 0.0);
    std::size_t next = 0;
    forward_sweep(
        model.kernel, field, model.start, 0, checkpoints.back(),
        [&](const LogWeightField& rho, double log_z) {
          if (next < checkpoints.size() && rho.k == checkpoints[next]) out.log_z[next++] = log_z;
        },
        model.transfer);
  } catch (const PolymerError& e) {
    out.log_z.clear();
    out.error = std::string(to_string(e.kind())) + ": " + e.what();
  }
  return out;
}

}  // namespace

DisorderTrace free_energy_trace(const Model& model, long n_max, std::span<const std::uint64_t> seeds,
                                std::optional<std::vector<long>> checkpoints) {
  require_seeds(seeds, 2, "free_energy_trace");
  model.env.validate();
  std::vector<long> cps = checkpoints ? *checkpoints : geometric_checkpoints(n_max);
  std::sort(cps.begin(), cps.end());
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  if (cps.empty() || cps.front() < 1 || cps.back() > n_max)
    throw PolymerError(ErrorKind::parameter, "checkpoints must lie in [1, n_max]");

  DisorderTrace trace;
  trace.theta = annealed_exponent(model.env).value;
  trace.seeds.assign(seeds.begin(), seeds.end());
  trace.spec = model_json(model);

  auto runs = parallel_map(seeds.size(), model.jobs, [&](std::size_t r) { return run_trace(model, seeds[r], cps); });
  std::vector<std::size_t> ok;
  for (auto i : seed_order(seeds)) {
    if (runs[i].error.empty())
      ok.push_back(i);
    else
      trace.failure_messages.push_back("seed " + std::to_string(seeds[i]) + ": " + runs[i].error);
  }
  trace.failures = seeds.size() - ok.size();
  trace.replicas = ok.size();
  if (ok.size() < 2) throw PolymerError(ErrorKind::degenerate, "fewer than two replicas completed");

  for (std::size_t c = 0; c < cps.size(); ++c) {
    std::vector<double> vals;
    vals.reserve(ok.size());
    for (auto i : ok) vals.push_back(runs[i].log_z[c] / static_cast<double>(cps[c]));
    const MeanSE m = mean_se(vals);
    trace.records.push_back({cps[c], m.mean, m.se, m.mean - trace.theta});
  }
  return trace;
}

// ---------------------------------------------------------- fractional moment

nlohmann::json FractionalMoment::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) pts.push_back({{"n", p.n}, {"mean", p.mean}, {"se", p.se}});
  return {{"theta_exp", theta_exp}, {"points", pts}, {"slope", slope}, {"slope_se", slope_se}, {"fit_ns", fit_ns}};
}

FractionalMoment fractional_moment(const Model& model, double theta_exp, std::span<const long> ns,
                                   std::span<const std::uint64_t> seeds) {
  if (!(theta_exp > 0.0 && theta_exp <= 1.0))
    throw PolymerError(ErrorKind::parameter, "theta_exp must lie in (0, 1]");
  require_seeds(seeds, 2, "fractional_moment");
  std::vector<long> cps(ns.begin(), ns.end());
  std::sort(cps.begin(), cps.end());
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  if (cps.empty() || cps.front() < 1) throw PolymerError(ErrorKind::parameter, "n values must be positive");

  const double theta = annealed_exponent(model.env).value;
  auto runs = parallel_map(seeds.size(), model.jobs, [&](std::size_t r) {
    auto t = run_trace(model, seeds[r], cps);
    if (!t.error.empty()) throw PolymerError(ErrorKind::divergent, t.error);
    return t.log_z;
  });
  const auto order = seed_order(seeds);

  FractionalMoment out;
  out.theta_exp = theta_exp;
  for (std::size_t c = 0; c < cps.size(); ++c) {
    std::vector<double> vals(seeds.size());
    for (std::size_t r = 0; r < seeds.size(); ++r)
      vals[r] = std::exp(theta_exp * (runs[r][c] - theta * static_cast<double>(cps[c])));
    const MeanSE m = reduce(vals, order);
    out.points.push_back({cps[c], m.mean, m.se});
  }

  std::vector<double> lx, ly;
  const double floor_n = static_cast<double>(cps.back()) / 10.0;
  std::size_t in_decade = 0;
  for (long n : cps) in_decade += static_cast<double>(n) >= floor_n;
  for (const auto& p : out.points) {
    if (in_decade >= 3 && static_cast<double>(p.n) < floor_n) continue;
    out.fit_ns.push_back(p.n);
    lx.push_back(std::log(static_cast<double>(p.n)));
    ly.push_back(std::log(p.mean));
  }
  if (lx.size() < 3) throw PolymerError(ErrorKind::fit, "the slope fit needs at least 3 n values");
  const LinearFit fit = least_squares(lx, ly);
  out.slope = fit.slope;
  out.slope_se = fit.slope_se;
  return out;
}

// ----------------------------------------------------------------- martingale

bool MartingaleResult::passes() const {
  if (!(std::abs(mean_w - 1.0) <= error_bound)) return false;
  const double factor = se > 0.0 ? error_bound / se : 0.0;
  for (const auto& w : windows) {
    const double bound = factor > 0.0 ? factor * w.se : error_bound;
    if (!(std::abs(w.mean - w.exact) <= bound)) return false;
  }
  return true;
}

namespace {

// Z_{x,U} over the given windows from one point-to-point field.
std::vector<double> window_masses(const LogWeightField& p2p, std::span<const std::vector<long>> windows) {
  const double cell = p2p.space.lattice ? 1.0 : p2p.space.spacing;
  std::vector<double> out;
  for (const auto& U : windows) {
    CompensatedSum s;
    for (long u : U) {
      const double l = p2p.at_index(u);
      if (l != kNegInf) s.add(std::exp(l) * cell);
    }
    out.push_back(s.value());
  }
  return out;
}

}  // namespace

MartingaleResult martingale_check(const Model& model, long n, MartingaleMode mode,
                                  std::span<const std::vector<long>> windows,
                                  std::span<const std::uint64_t> seeds) {
  if (n < 0) throw PolymerError(ErrorKind::parameter, "n must be nonnegative");
  model.env.validate();
  const double theta = annealed_exponent(model.env).value;
  const double shift = theta * static_cast<double>(n);
  MartingaleResult out;

  // Exact P{S_n in U} from the free walk.
  {
    LazyField zero(EnvironmentSpec::zero(), model.space);
    const auto free = point_to_point_field(model.kernel, zero, model.start, 0, n, model.transfer);
    const auto probs = window_masses(free, windows);
    for (std::size_t w = 0; w < windows.size(); ++w) out.windows.push_back({windows[w], 0.0, 0.0, probs[w]});
  }

  if (mode == MartingaleMode::exhaustive) {
    const auto atoms = model.env.atoms();
    if (atoms.empty())
      throw PolymerError(ErrorKind::unsupported, "exhaustive mode needs a discrete environment marginal");
    if (!model.space.lattice || !model.kernel.is_lattice())
      throw PolymerError(ErrorKind::unsupported, "exhaustive mode runs on the lattice");
    if (n > 4) throw PolymerError(ErrorKind::parameter, "exhaustive mode is limited to n <= 4");
    const long a = site_index(model.space, model.start);
    std::vector<std::pair<long, long>> sites;  // (k, index) reachable at times 0..n-1
    for (long k = 0; k < n; ++k)
      for (long i = a - k; i <= a + k; i += 2) sites.emplace_back(k, i);

    std::vector<std::size_t> digit(sites.size(), 0);
    CompensatedSum total, prob_total;
    std::vector<CompensatedSum> wsum(windows.size());
    for (;;) {
      TableField field(model.space);
      double prob = 1.0;
      for (std::size_t s = 0; s < sites.size(); ++s) {
        field.set(sites[s].first, sites[s].second, atoms[digit[s]].first);
        prob *= atoms[digit[s]].second;
      }
      const auto p2p = point_to_point_field(model.kernel, field, model.start, 0, n, model.transfer);
      total.add(prob * std::exp(p2p.log_total() - shift));
      const auto zw = window_masses(p2p, windows);
      for (std::size_t w = 0; w < windows.size(); ++w) wsum[w].add(prob * zw[w] * std::exp(-shift));
      prob_total.add(prob);
      ++out.samples;

      std::size_t s = 0;
      while (s < digit.size() && ++digit[s] == atoms.size()) digit[s++] = 0;
      if (s == digit.size()) break;
    }
    out.mean_w = total.value();
    out.se = 0.0;
    out.error_bound = 1e-12;
    for (std::size_t w = 0; w < windows.size(); ++w) out.windows[w].mean = wsum[w].value();
    return out;
  }

  require_seeds(seeds, 2, "martingale_check");
  struct Sample {
    double w = 0.0;
    std::vector<double> win;
  };
  auto runs = parallel_map(seeds.size(), model.jobs, [&](std::size_t r) {
    LazyField field(model.env.with_seed(seeds[r]), model.space);
    const auto p2p = point_to_point_field(model.kernel, field, model.start, 0, n, model.transfer);
    Sample s;
    const double log_cell = model.space.lattice ? 0.0 : std::log(model.space.spacing);
    s.w = std::exp(p2p.log_total() + log_cell - shift);
    s.win = window_masses(p2p, windows);
    for (double& v : s.win) v *= std::exp(-shift);
    return s;
  });
  const auto order = seed_order(seeds);
  std::vector<double> ws(seeds.size());
  for (std::size_t r = 0; r < seeds.size(); ++r) ws[r] = runs[r].w;
  const MeanSE m = reduce(ws, order);
  out.mean_w = m.mean;
  out.se = m.se;
  out.error_bound = 4.0 * m.se;
  out.samples = seeds.size();
  for (std::size_t w = 0; w < windows.size(); ++w) {
    for (std::size_t r = 0; r < seeds.size(); ++r) ws[r] = runs[r].win[w];
    const MeanSE mw = reduce(ws, order);
    out.windows[w].mean = mw.mean;
    out.windows[w].se = mw.se;
  }
  return out;
}

// ------------------------------------------------------------- shape function

long shape_site(double v, long n) {
  if (!(std::abs(v) <= 1.0)) throw PolymerError(ErrorKind::parameter, "shape function needs |v| <= 1");
  long x = static_cast<long>(std::floor(std::abs(v) * static_cast<double>(n)));
  if ((x - n) % 2 != 0) --x;
  return v < 0.0 ? -x : x;
}

nlohmann::json ShapeResult::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) pts.push_back({{"v", p.v}, {"x", p.x}, {"lambda", p.lambda}, {"se", p.se}});
  return {{"n", n},
          {"points", pts},
          {"max_evenness_z", max_evenness_z},
          {"concavity_violations", concavity_violations},
          {"max_concavity_z", max_concavity_z}};
}

ShapeResult shape_function(const Model& model, long n, std::span<const double> vs,
                           std::span<const std::uint64_t> seeds) {
  if (!model.space.lattice || !model.kernel.is_lattice())
    throw PolymerError(ErrorKind::unsupported, "the shape function runs on the lattice");
  if (n < 1) throw PolymerError(ErrorKind::parameter, "n must be positive");
  require_seeds(seeds, 2, "shape_function");
  std::vector<double> v(vs.begin(), vs.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<long> xs;
  for (double vi : v) xs.push_back(shape_site(vi, n));
  const long a = site_index(model.space, model.start);

  auto runs = parallel_map(seeds.size(), model.jobs, [&](std::size_t r) {
    LazyField field(model.env.with_seed(seeds[r]), model.space);
    const auto p2p = point_to_point_field(model.kernel, field, model.start, 0, n, model.transfer);
    std::vector<double> lam;
    for (long x : xs) lam.push_back(p2p.at_index(a + x) / static_cast<double>(n));
    return lam;
  });
  const auto order = seed_order(seeds);
  auto column = [&](auto f) {
    std::vector<double> c(seeds.size());
    for (std::size_t r = 0; r < seeds.size(); ++r) c[r] = f(runs[r]);
    return reduce(c, order);
  };

  ShapeResult out;
  out.n = n;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const MeanSE m = column([&](const std::vector<double>& lam) { return lam[i]; });
    out.points.push_back({v[i], xs[i], m.mean, m.se});
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] <= 0.0) continue;
    auto j = std::find(v.begin(), v.end(), -v[i]);
    if (j == v.end()) continue;
    const auto jj = static_cast<std::size_t>(j - v.begin());
    const MeanSE d = column([&](const std::vector<double>& lam) { return lam[i] - lam[jj]; });
    out.max_evenness_z = std::max(out.max_evenness_z, std::abs(se_ratio(d.mean, d.se)));
  }
  // Concavity in x: lambda(x_i) against the chord through its neighbours.
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    const double x0 = static_cast<double>(xs[i - 1]), x1 = static_cast<double>(xs[i]),
                 x2 = static_cast<double>(xs[i + 1]);
    if (!(x0 < x1 && x1 < x2)) continue;
    const double w = (x2 - x1) / (x2 - x0);
    const MeanSE d = column([&](const std::vector<double>& lam) {
      return w * lam[i - 1] + (1.0 - w) * lam[i + 1] - lam[i];
    });
    const double z = se_ratio(d.mean, d.se);
    out.max_concavity_z = std::max(out.max_concavity_z, z);
    if (z > 4.0) ++out.concavity_violations;
  }
  return out;
}

// -------------------------------------------------------------- chaos identity

ChaosResult chaos_identity_check(const Model& model, long n, std::uint64_t past_seed,
                                 std::span<const std::uint64_t> seeds) {
  if (!model.space.lattice || !model.kernel.is_lattice() || !model.env.is_iid())
    throw PolymerError(ErrorKind::unsupported, "the chaos identity is checked for lattice i.i.d. environments");
  if (n < 0) throw PolymerError(ErrorKind::parameter, "n must be nonnegative");
  require_seeds(seeds, 2, "chaos_identity_check");
  const double theta = annealed_exponent(model.env).value;
  const double theta2 = annealed_log_mgf(model.env, 2.0).value;

  LazyField past(model.env.with_seed(past_seed), model.space);
  const EndpointMeasure rho = endpoint_distribution(model.kernel, past, model.start, 0, n, model.transfer);

  ChaosResult out;
  out.overlap = exact_match_overlap(rho);
  out.variance = std::expm1(theta2 - 2.0 * theta);
  out.rhs = out.variance * out.overlap;

  auto u2 = parallel_map(seeds.size(), model.jobs, [&](std::size_t r) {
    LazyField fresh(model.env.with_seed(seeds[r]), model.space);
    std::vector<double> f(rho.size());
    fresh.fill(n, rho.first, rho.stride, f);
    CompensatedSum s;
    for (std::size_t j = 0; j < rho.size(); ++j) s.add(rho.mass[j] * std::exp(-f[j] - theta));
    const double u = s.value() - 1.0;
    return u * u;
  });
  const MeanSE m = reduce(u2, seed_order(seeds));
  out.lhs = m.mean;
  out.lhs_se = m.se;
  if (out.rhs > 0.0) {
    out.ratio = out.lhs / out.rhs;
    out.ratio_se = out.lhs_se / out.rhs;
  } else {
    out.ratio = out.lhs == 0.0 ? 1.0 : kInf;
  }
  return out;
}

// --------------------------------------------------------------- density bound

DensityBoundResult density_bound_check(const StepKernel& kernel, std::span<const long> ns, double delta,
                                       std::span<const double> zs, double h) {
  if (kernel.is_lattice()) throw PolymerError(ErrorKind::unsupported, "the density bound needs a density kernel");
  if (!(delta > 0.0)) throw PolymerError(ErrorKind::parameter, "delta must be positive");
  if (!(h > 0.0)) throw PolymerError(ErrorKind::parameter, "grid spacing must be positive");
  DensityBoundResult out;
  if (std::isinf(delta)) {
    out.skipped = true;
    return out;
  }
  StepKernel p = kernel;
  if (std::abs(kernel.mean()) > 1e-12 * std::max(1.0, kernel.sd())) {
    p = kernel.recentered();
    out.recentered = true;
  }
  const Space space = Space::grid(0.0, h);
  LazyField zero(EnvironmentSpec::zero(), space);
  for (long n : ns) {
    if (n < 1) throw PolymerError(ErrorKind::parameter, "n values must be positive");
    const EndpointMeasure nu = endpoint_distribution(p, zero, 0.0, 0, n);
    DensityBoundRow row{n, 0.0, 0.0};
    const double rn = static_cast<double>(n);
    for (double z : zs) {
      // Each cell's mass is spread uniformly over [x - h/2, x + h/2).
      CompensatedSum prob;
      for (std::size_t j = 0; j < nu.size(); ++j) {
        const double x = nu.position(j);
        const double lo = std::max(z, x - 0.5 * h), hi = std::min(z + delta, x + 0.5 * h);
        if (hi > lo) prob.add(nu.mass[j] * (hi - lo) / h);
      }
      const double ratio = prob.value() * std::sqrt(rn) * (1.0 + z * z / rn) / delta;
      if (ratio > row.sup_ratio) {
        row.sup_ratio = ratio;
        row.argmax_z = z;
      }
    }
    out.worst = std::max(out.worst, row.sup_ratio);
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace polymer
