#include "polymer/environment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "polymer/random.hpp"

namespace polymer {

namespace {

// Lanes of the per-site hash.
constexpr std::uint64_t kLaneA = 0;
constexpr std::uint64_t kLaneB = 1;
constexpr std::uint64_t kLanePoisson = 7;

double iid_draw(const IidMarginal& m, std::uint64_t seed, long k, long i) noexcept {
  switch (m.kind) {
    case MarginalKind::gaussian:
      if (m.b == 0.0) return m.a;
      return m.a + m.b * normal_from_bits(mix_key(seed, k, i, kLaneA), mix_key(seed, k, i, kLaneB));
    case MarginalKind::bernoulli:
      return to_open_unit(mix_key(seed, k, i, kLaneA)) < m.a ? m.c : m.b;
    case MarginalKind::exponentialized:
      return m.b - std::log(to_open_unit(mix_key(seed, k, i, kLaneA))) / m.a;
  }
  return 0.0;
}

// Adds the shot-noise contribution of every Poisson point that reaches the
// positions xs (sorted ascending) at time k.
void add_poisson_row(const MollifiedPoisson& f, std::uint64_t seed, long k,
                     std::span<const double> xs, std::span<double> out) {
  if (xs.empty()) return;
  const double lo = xs.front() - f.width;
  const double hi = xs.back();
  const long c0 = static_cast<long>(std::floor(lo));
  const long c1 = static_cast<long>(std::floor(hi));
  std::vector<double> points;
  for (long c = c0; c <= c1; ++c) {
    SplitMixStream s(mix_key(seed, k, c, kLanePoisson));
    const unsigned count = s.poisson(f.intensity);
    points.clear();
    for (unsigned q = 0; q < count; ++q) points.push_back(static_cast<double>(c) + s.uniform());
    for (double xi : points) {
      // Positions strictly inside (xi, xi + width).
      auto first = std::upper_bound(xs.begin(), xs.end(), xi);
      for (auto it = first; it != xs.end() && *it < xi + f.width; ++it)
        out[static_cast<std::size_t>(it - xs.begin())] += f.bump(*it - xi);
    }
  }
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

double MollifiedPoisson::bump(double u) const noexcept {
  if (!(u > 0.0) || !(u < width)) return 0.0;
  const double s = 2.0 * u / width - 1.0;
  const double q = 1.0 - s * s;
  return height * q * q;
}

EnvironmentSpec EnvironmentSpec::zero(std::uint64_t seed) { return gaussian(0.0, 0.0, seed); }

EnvironmentSpec EnvironmentSpec::gaussian(double mu, double sigma, std::uint64_t seed) {
  EnvironmentSpec s{IidMarginal{MarginalKind::gaussian, mu, sigma, 0.0}, seed};
  s.validate();
  return s;
}

EnvironmentSpec EnvironmentSpec::bernoulli(double p_hit, double low, double high, std::uint64_t seed) {
  EnvironmentSpec s{IidMarginal{MarginalKind::bernoulli, p_hit, low, high}, seed};
  s.validate();
  return s;
}

EnvironmentSpec EnvironmentSpec::exponentialized(double rate, double shift, std::uint64_t seed) {
  EnvironmentSpec s{IidMarginal{MarginalKind::exponentialized, rate, shift, 0.0}, seed};
  s.validate();
  return s;
}

EnvironmentSpec EnvironmentSpec::mollified_poisson(double intensity, double width, double height,
                                                   std::uint64_t seed) {
  EnvironmentSpec s{MollifiedPoisson{intensity, width, height}, seed};
  s.validate();
  return s;
}

void EnvironmentSpec::validate() const {
  auto bad = [](const std::string& m) { throw PolymerError(ErrorKind::parameter, m); };
  if (const auto* m = std::get_if<IidMarginal>(&kind)) {
    if (!std::isfinite(m->a) || !std::isfinite(m->b) || !std::isfinite(m->c))
      bad("environment: marginal parameters must be finite");
    switch (m->kind) {
      case MarginalKind::gaussian:
        if (m->b < 0.0) bad("environment: gaussian sigma must be >= 0");
        break;
      case MarginalKind::bernoulli:
        if (m->a < 0.0 || m->a > 1.0) bad("environment: bernoulli p_hit must lie in [0, 1]");
        break;
      case MarginalKind::exponentialized:
        // E[e^{alpha F}] is finite for alpha in [-2, 2] only when rate > 2.
        if (!(m->a > 2.0))
          throw PolymerError(ErrorKind::divergent,
                             "environment: exponentialized rate must exceed 2 for finite "
                             "exponential moments of order 2");
        break;
    }
  } else {
    const auto& p = std::get<MollifiedPoisson>(kind);
    if (!(p.intensity > 0.0) || !std::isfinite(p.intensity) || p.intensity > 500.0)
      bad("environment: poisson intensity must lie in (0, 500]");
    if (!(p.width > 0.0) || !std::isfinite(p.width)) bad("environment: bump width must be > 0");
    if (!(p.height >= 0.0) || !std::isfinite(p.height)) bad("environment: bump height must be >= 0");
  }
}

bool EnvironmentSpec::deterministic() const noexcept {
  if (const auto* m = std::get_if<IidMarginal>(&kind)) {
    switch (m->kind) {
      case MarginalKind::gaussian: return m->b == 0.0;
      case MarginalKind::bernoulli: return m->a == 0.0 || m->a == 1.0 || m->b == m->c;
      case MarginalKind::exponentialized: return false;
    }
  }
  return std::get<MollifiedPoisson>(kind).height == 0.0;
}

std::vector<std::pair<double, double>> EnvironmentSpec::atoms() const {
  if (const auto* m = std::get_if<IidMarginal>(&kind)) {
    if (m->kind == MarginalKind::bernoulli) return {{m->b, 1.0 - m->a}, {m->c, m->a}};
    if (m->kind == MarginalKind::gaussian && m->b == 0.0) return {{m->a, 1.0}};
  }
  return {};
}

nlohmann::json EnvironmentSpec::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  if (const auto* m = std::get_if<IidMarginal>(&kind)) {
    j["kind"] = "lattice_iid";
    switch (m->kind) {
      case MarginalKind::gaussian:
        j["marginal"] = {{"family", "gaussian"}, {"mu", m->a}, {"sigma", m->b}};
        break;
      case MarginalKind::bernoulli:
        j["marginal"] = {{"family", "bernoulli"}, {"p_hit", m->a}, {"low", m->b}, {"high", m->c}};
        break;
      case MarginalKind::exponentialized:
        j["marginal"] = {{"family", "exponentialized"}, {"rate", m->a}, {"shift", m->b}};
        break;
    }
  } else {
    const auto& p = std::get<MollifiedPoisson>(kind);
    j["kind"] = "mollified_poisson";
    j["intensity"] = p.intensity;
    j["bump"] = {{"width", p.width}, {"height", p.height}};
  }
  return j;
}

EnvironmentSpec EnvironmentSpec::from_json(const nlohmann::json& j) {
  auto need = [&](const nlohmann::json& obj, const char* key) -> double {
    if (!obj.contains(key) || !obj[key].is_number())
      throw PolymerError(ErrorKind::input, std::string("environment: missing number '") + key + "'");
    return obj[key].get<double>();
  };
  if (!j.is_object() || !j.contains("kind"))
    throw PolymerError(ErrorKind::input, "environment: missing 'kind'");
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  const std::string kind = j["kind"].get<std::string>();
  if (kind == "zero") return zero(seed);
  if (kind == "lattice_iid") {
    if (!j.contains("marginal")) throw PolymerError(ErrorKind::input, "environment: missing 'marginal'");
    const auto& m = j["marginal"];
    const std::string fam = m.value("family", std::string{});
    if (fam == "gaussian") return gaussian(m.value("mu", 0.0), need(m, "sigma"), seed);
    if (fam == "bernoulli")
      return bernoulli(need(m, "p_hit"), m.value("low", 0.0), m.value("high", 1.0), seed);
    if (fam == "exponentialized") return exponentialized(need(m, "rate"), m.value("shift", 0.0), seed);
    throw PolymerError(ErrorKind::input, "environment: unknown marginal family '" + fam + "'");
  }
  if (kind == "mollified_poisson") {
    if (!j.contains("bump")) throw PolymerError(ErrorKind::input, "environment: missing 'bump'");
    return mollified_poisson(need(j, "intensity"), need(j["bump"], "width"),
                             need(j["bump"], "height"), seed);
  }
  throw PolymerError(ErrorKind::input, "environment: unknown kind '" + kind + "'");
}

std::uint64_t replica_seed(std::uint64_t base, std::uint64_t replica) noexcept {
  return splitmix64(splitmix64(base ^ 0x5851f42d4c957f2dULL) + replica);
}

double field_value(const EnvironmentSpec& spec, long k, double x) {
  if (!std::isfinite(x)) throw PolymerError(ErrorKind::input, "field_value: x must be finite");
  if (const auto* m = std::get_if<IidMarginal>(&spec.kind)) {
    if (x != std::floor(x))
      throw PolymerError(ErrorKind::input, "field_value: i.i.d. fields live on the integers");
    return iid_draw(*m, spec.seed, k, static_cast<long>(x));
  }
  double out = 0.0;
  const double xs[1] = {x};
  add_poisson_row(std::get<MollifiedPoisson>(spec.kind), spec.seed, k, xs, std::span<double>(&out, 1));
  return out;
}

LazyField::LazyField(EnvironmentSpec spec, Space space)
    : spec_(std::move(spec)), space_(space), zero_(false) {
  spec_.validate();
  const auto atoms = spec_.atoms();
  zero_ = spec_.deterministic() && !atoms.empty() && atoms.front().first == 0.0;
  if (spec_.is_poisson()) zero_ = std::get<MollifiedPoisson>(spec_.kind).height == 0.0;
}

void LazyField::fill(long k, long first, long stride, std::span<double> out) const {
  if (zero_) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  if (const auto* m = std::get_if<IidMarginal>(&spec_.kind)) {
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] = iid_draw(*m, spec_.seed, k, first + static_cast<long>(j) * stride);
    return;
  }
  std::vector<double> xs(out.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    xs[j] = space_.position(first + static_cast<long>(j) * stride);
  std::fill(out.begin(), out.end(), 0.0);
  add_poisson_row(std::get<MollifiedPoisson>(spec_.kind), spec_.seed, k, xs, out);
}

EnvironmentSlab::EnvironmentSlab(EnvironmentSpec spec, SlabWindow window, std::vector<double> values)
    : spec_(std::move(spec)), window_(window), values_(std::move(values)) {
  if (window_.n <= window_.m || window_.count == 0)
    throw PolymerError(ErrorKind::parameter, "slab window must be nonempty");
  if (values_.size() != static_cast<std::size_t>(window_.n - window_.m) * window_.count)
    throw PolymerError(ErrorKind::input, "slab value count does not match the window");
  zero_ = std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

double EnvironmentSlab::at(long k, long i) const {
  if (k < window_.m || k >= window_.n || i < window_.first ||
      i >= window_.first + static_cast<long>(window_.count))
    throw PolymerError(ErrorKind::parameter, "slab access outside the window");
  return values_[static_cast<std::size_t>(k - window_.m) * window_.count +
                 static_cast<std::size_t>(i - window_.first)];
}

std::span<const double> EnvironmentSlab::row(long k) const {
  if (k < window_.m || k >= window_.n) throw PolymerError(ErrorKind::parameter, "slab row outside the window");
  return {values_.data() + static_cast<std::size_t>(k - window_.m) * window_.count, window_.count};
}

void EnvironmentSlab::fill(long k, long first, long stride, std::span<double> out) const {
  if (out.empty()) return;
  const long last = first + static_cast<long>(out.size() - 1) * stride;
  const long lo = std::min(first, last), hi = std::max(first, last);
  if (k < window_.m || k >= window_.n || lo < window_.first ||
      hi >= window_.first + static_cast<long>(window_.count)) {
    std::ostringstream os;
    os << "slab does not cover time " << k << ", indices [" << lo << ", " << hi << "]";
    throw PolymerError(ErrorKind::parameter, os.str());
  }
  const auto r = row(k);
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = r[static_cast<std::size_t>(first + static_cast<long>(j) * stride - window_.first)];
}

std::optional<std::pair<long, long>> EnvironmentSlab::index_bounds(long k) const {
  if (k < window_.m || k >= window_.n) return std::pair<long, long>{0, -1};
  return std::pair<long, long>{window_.first, window_.first + static_cast<long>(window_.count) - 1};
}

EnvironmentSlab generate_slab(const EnvironmentSpec& spec, const SlabWindow& window,
                              std::size_t budget_bytes) {
  spec.validate();
  if (window.n <= window.m || window.count == 0)
    throw PolymerError(ErrorKind::parameter, "generate_slab: window must be nonempty");
  if (spec.is_poisson()) {
    if (window.space.lattice)
      throw PolymerError(ErrorKind::parameter, "generate_slab: the Poisson field needs a grid space");
    const auto& p = std::get<MollifiedPoisson>(spec.kind);
    if (window.space.spacing > p.width / 8.0)
      throw PolymerError(ErrorKind::parameter, "generate_slab: grid spacing must be <= width / 8");
  }
  const double rows = static_cast<double>(window.n - window.m);
  const double bytes = rows * static_cast<double>(window.count) * sizeof(double);
  if (bytes > static_cast<double>(budget_bytes)) {
    std::ostringstream os;
    os << "generate_slab: window needs " << static_cast<unsigned long long>(bytes)
       << " bytes, budget is " << budget_bytes << " bytes";
    throw PolymerError(ErrorKind::capacity, os.str());
  }
  LazyField lazy(spec, window.space);
  std::vector<double> values(static_cast<std::size_t>(window.n - window.m) * window.count);
  for (long k = window.m; k < window.n; ++k) {
    std::span<double> out(values.data() + static_cast<std::size_t>(k - window.m) * window.count,
                          window.count);
    lazy.fill(k, window.first, 1, out);
  }
  return EnvironmentSlab(spec, window, std::move(values));
}

AnnealedExponent annealed_log_mgf(const EnvironmentSpec& spec, double alpha) {
  AnnealedExponent out;
  if (const auto* m = std::get_if<IidMarginal>(&spec.kind)) {
    switch (m->kind) {
      case MarginalKind::gaussian:
        out.value = -alpha * m->a + 0.5 * alpha * alpha * m->b * m->b;
        break;
      case MarginalKind::bernoulli:
        out.value = log_add_exp(std::log1p(-m->a) - alpha * m->b, std::log(m->a) - alpha * m->c);
        break;
      case MarginalKind::exponentialized:
        if (!(alpha > -m->a))
          throw PolymerError(ErrorKind::divergent, "annealed exponent: exponential moment diverges");
        out.value = -alpha * m->b + std::log(m->a / (m->a + alpha));
        break;
    }
    return out;
  }
  const auto& p = std::get<MollifiedPoisson>(spec.kind);
  // Campbell: log E exp(-alpha sum phi) = intensity * int (e^{-alpha phi} - 1).
  auto f = [&](double u) { return std::expm1(-alpha * p.bump(u)); };
  double err = 0;
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, p.width, 20, 1e-14, &err);
  out.value = p.intensity * integral;
  return out;
}

AnnealedExponent annealed_exponent(const EnvironmentSpec& spec) { return annealed_log_mgf(spec, 1.0); }

double poisson_field_covariance(const MollifiedPoisson& f, double lag) {
  const double x = std::abs(lag);
  if (x >= f.width) return 0.0;
  auto g = [&](double u) { return f.bump(u) * f.bump(u + x); };
  double err = 0;
  return f.intensity *
         boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, 0.0, f.width - x, 20, 1e-14, &err);
}

double poisson_boltzmann_covariance(const MollifiedPoisson& f, double lag) {
  const double x = std::abs(lag);
  const EnvironmentSpec spec{f, 0};
  const double theta = annealed_exponent(spec).value;
  if (x >= f.width) return 0.0;
  auto g = [&](double u) { return std::expm1(-f.bump(u)) * std::expm1(-f.bump(u + x)); };
  double err = 0;
  const double cross =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, 0.0, f.width - x, 20, 1e-14, &err);
  return std::exp(2.0 * theta) * std::expm1(f.intensity * cross);
}

std::vector<CorrelationPoint> correlation_probe(const EnvironmentSpec& spec, std::span<const double> lags,
                                                std::size_t replicas) {
  if (replicas < 100)
    throw PolymerError(ErrorKind::parameter, "correlation_probe: needs at least 100 replicas");
  const double e_theta = std::exp(annealed_exponent(spec).value);
  std::vector<CorrelationPoint> out;
  std::vector<double> samples(replicas);
  for (double lag : lags) {
    for (std::size_t r = 0; r < replicas; ++r) {
      const auto s = spec.with_seed(replica_seed(spec.seed, r));
      const double a = std::exp(-field_value(s, 0, 0.0)) - e_theta;
      const double b = std::exp(-field_value(s, 0, lag)) - e_theta;
      samples[r] = a * b;
    }
    const auto ms = mean_se(samples);
    out.push_back({lag, ms.mean, ms.se});
  }
  return out;
}

nlohmann::json to_json(const SlabWindow& w) {
  return {{"m", w.m},
          {"n", w.n},
          {"first", w.first},
          {"count", w.count},
          {"space", {{"lattice", w.space.lattice}, {"origin", w.space.origin}, {"spacing", w.space.spacing}}}};
}

SlabWindow window_from_json(const nlohmann::json& j) {
  SlabWindow w;
  w.m = j.at("m").get<long>();
  w.n = j.at("n").get<long>();
  w.first = j.at("first").get<long>();
  w.count = j.at("count").get<std::size_t>();
  const auto& s = j.at("space");
  w.space = {s.at("lattice").get<bool>(), s.at("origin").get<double>(), s.at("spacing").get<double>()};
  return w;
}

void write_slab(const EnvironmentSlab& slab, const std::filesystem::path& csv_path,
                const std::filesystem::path& header_path) {
  {
    std::ofstream h(header_path);
    if (!h) throw PolymerError(ErrorKind::input, "write_slab: cannot open " + header_path.string());
    nlohmann::json j = {{"spec", slab.spec().to_json()}, {"window", to_json(slab.window())}};
    h << j.dump(2) << '\n';
  }
  std::ofstream c(csv_path);
  if (!c) throw PolymerError(ErrorKind::input, "write_slab: cannot open " + csv_path.string());
  c << "k,x,F\n";
  const auto& w = slab.window();
  for (long k = w.m; k < w.n; ++k) {
    const auto r = slab.row(k);
    for (std::size_t i = 0; i < w.count; ++i) {
      const long idx = w.first + static_cast<long>(i);
      c << k << ',' << (w.space.lattice ? std::to_string(idx) : fmt17(w.space.position(idx))) << ','
        << fmt17(r[i]) << '\n';
    }
  }
}

EnvironmentSlab read_slab(const std::filesystem::path& csv_path, const std::filesystem::path& header_path) {
  std::ifstream h(header_path);
  if (!h) throw PolymerError(ErrorKind::input, "read_slab: cannot open " + header_path.string());
  nlohmann::json j;
  h >> j;
  const auto spec = EnvironmentSpec::from_json(j.at("spec"));
  const auto w = window_from_json(j.at("window"));
  std::vector<double> values(static_cast<std::size_t>(w.n - w.m) * w.count, 0.0);
  std::vector<bool> seen(values.size(), false);
  std::ifstream c(csv_path);
  if (!c) throw PolymerError(ErrorKind::input, "read_slab: cannot open " + csv_path.string());
  std::string line;
  std::getline(c, line);
  while (std::getline(c, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string ks, xs, fs;
    std::getline(ls, ks, ',');
    std::getline(ls, xs, ',');
    std::getline(ls, fs, ',');
    const long k = std::stol(ks);
    const double x = std::strtod(xs.c_str(), nullptr);
    const long idx = w.space.lattice ? std::stol(xs)
                                     : std::lround((x - w.space.origin) / w.space.spacing);
    if (k < w.m || k >= w.n || idx < w.first || idx >= w.first + static_cast<long>(w.count))
      throw PolymerError(ErrorKind::input, "read_slab: row outside the declared window");
    const std::size_t pos = static_cast<std::size_t>(k - w.m) * w.count + static_cast<std::size_t>(idx - w.first);
    values[pos] = std::strtod(fs.c_str(), nullptr);
    seen[pos] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw PolymerError(ErrorKind::input, "read_slab: CSV does not cover the declared window");
  return EnvironmentSlab(spec, w, std::move(values));
}

}  // namespace polymer
