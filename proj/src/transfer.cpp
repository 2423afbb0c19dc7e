#include "polymer/transfer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace polymer {

namespace {

constexpr double kLogHalf = -0.69314718055994530942;
// Grid masses below this are flushed to zero to keep denormals out of the
// convolution; slices are normalized to unit mass so this is absolute.
constexpr double kFlush = 1e-300;

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Extent {
  long first = 0;
  std::size_t count = 0;
};

class Engine {
 public:
  Engine(const StepKernel& kernel, const FieldSource& field, const TransferOptions& opts, long start,
         long horizon)
      : field_(field), opts_(opts), space_(field.space()), lattice_(kernel.is_lattice()), horizon_(horizon) {
    if (lattice_ != space_.lattice)
      throw PolymerError(ErrorKind::mismatch,
                         lattice_ ? "the lattice walk needs a lattice field"
                                  : "a density kernel needs a grid field");
    step_ = discretize(kernel, lattice_ ? 1.0 : space_.spacing, opts.tail_mass);
    stats_.kernel_tail_mass = step_.tail_mass;
    if (!lattice_ && std::isfinite(opts.max_halfwidth)) {
      const long cells = static_cast<long>(std::floor(opts.max_halfwidth / space_.spacing));
      cap_lo_ = start - cells;
      cap_hi_ = start + cells;
    }
  }

  long stride() const noexcept { return lattice_ ? 2 : 1; }
  const SweepStats& stats() const noexcept { return stats_; }

  // rho at time k to rho at time k + 1 (both up to normalization); returns
  // log(Z^{k+1} / Z^k).
  double advance(LogWeightField& f) {
    load_field(f.k, f.first, f.size());
    return lattice_ ? advance_lattice(f) : advance_grid(f);
  }

  // b holds log Z_y^{k+1,n} (or its pinned analogue) on its extent; replace
  // it by the time-k values on `to`.
  void retreat(LogWeightField& b, Extent to) {
    const long k = b.k - 1;
    load_field(k, to.first, to.count);
    std::vector<double> out(to.count, kNegInf);
    if (lattice_) {
      for (std::size_t j = 0; j < to.count; ++j) {
        const long x = to.first + 2 * static_cast<long>(j);
        const double s = log_add_exp(b.at_index(x - 1), b.at_index(x + 1));
        out[j] = s == kNegInf ? kNegInf : kLogHalf + s - fbuf_[j];
      }
    } else {
      double bmax = kNegInf;
      for (double v : b.logw) bmax = std::max(bmax, v);
      if (bmax != kNegInf) {
        std::vector<double> lin(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) lin[i] = std::exp(b.logw[i] - bmax);
        const long w = static_cast<long>(step_.weights.size());
        const long nb = static_cast<long>(b.size());
        for (std::size_t j = 0; j < to.count; ++j) {
          const long base = to.first + static_cast<long>(j) + step_.first_offset - b.first;
          const long o0 = std::max(0L, -base), o1 = std::min(w, nb - base);
          double s = 0.0;
          for (long o = o0; o < o1; ++o) s += step_.weights[o] * lin[base + o];
          out[j] = s > 0.0 ? std::log(s) + bmax - fbuf_[j] : kNegInf;
        }
      }
    }
    b.k = k;
    b.first = to.first;
    b.logw = std::move(out);
  }

 private:
  void load_field(long k, long first, std::size_t count) {
    fbuf_.assign(count, 0.0);
    if (!field_.is_zero()) field_.fill(k, first, stride(), fbuf_);
  }

  double advance_lattice(LogWeightField& f) {
    const std::size_t c = f.size();
    std::vector<double> t(c);
    for (std::size_t j = 0; j < c; ++j) t[j] = f.logw[j] - fbuf_[j];
    const double lt = log_sum_exp(t);
    const double lw = log_sum_exp(f.logw);
    if (lt == kNegInf) throw PolymerError(ErrorKind::degenerate, "transfer: all weights vanished");
    std::vector<double> out(c + 1);
    out[0] = kLogHalf + t[0] - lt;
    for (std::size_t j = 1; j < c; ++j) out[j] = kLogHalf + log_add_exp(t[j - 1], t[j]) - lt;
    out[c] = kLogHalf + t[c - 1] - lt;
    f.first -= 1;
    f.k += 1;
    f.logw = std::move(out);
    stats_.max_sites = std::max(stats_.max_sites, f.size());
    return lt - lw;
  }

  double advance_grid(LogWeightField& f) {
    const std::size_t c = f.size();
    std::vector<double> t(c);
    double tmax = kNegInf, wmax = kNegInf;
    for (std::size_t j = 0; j < c; ++j) {
      t[j] = f.logw[j] - fbuf_[j];
      tmax = std::max(tmax, t[j]);
      wmax = std::max(wmax, f.logw[j]);
    }
    if (tmax == kNegInf) throw PolymerError(ErrorKind::degenerate, "transfer: all weights vanished");
    std::vector<double> u(c);
    CompensatedSum su, sw;
    for (std::size_t j = 0; j < c; ++j) {
      u[j] = std::exp(t[j] - tmax);
      su.add(u[j]);
      sw.add(std::exp(f.logw[j] - wmax));
    }
    double log_c = tmax + std::log(su.value()) - wmax - std::log(sw.value());
    const double inv = 1.0 / su.value();

    const auto& w = step_.weights;
    const std::size_t nw = w.size();
    std::vector<double> out(c + nw - 1, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
      const double ui = u[i] * inv;
      if (ui == 0.0) continue;
      double* o = out.data() + i;
      for (std::size_t q = 0; q < nw; ++q) o[q] += ui * w[q];
    }
    long first = f.first + step_.first_offset;

    // Domain cap: the explicit half-width and, when F is still needed at
    // time k + 1, the extent of the field source.
    long lo = cap_lo_, hi = cap_hi_;
    if (f.k + 1 < horizon_) {
      if (const auto b = field_.index_bounds(f.k + 1)) {
        lo = std::max(lo, b->first);
        hi = std::min(hi, b->second);
      }
    }
    const long last = first + static_cast<long>(out.size()) - 1;
    if (first < lo || last > hi) {
      CompensatedSum total, kept;
      for (std::size_t i = 0; i < out.size(); ++i) {
        total.add(out[i]);
        const long idx = first + static_cast<long>(i);
        if (idx >= lo && idx <= hi) kept.add(out[i]);
      }
      const double lost = 1.0 - kept.value() / total.value();
      stats_.boundary_loss = std::max(stats_.boundary_loss, lost);
      if (lost > opts_.truncation_tolerance) {
        std::ostringstream os;
        os << "transfer: grid boundary absorbed " << lost << " of the mass at time " << f.k + 1
           << "; widen the domain";
        throw PolymerError(ErrorKind::truncation, os.str());
      }
      if (!(kept.value() > 0.0)) throw PolymerError(ErrorKind::degenerate, "transfer: no mass left in domain");
      log_c += std::log(kept.value() / total.value());
      const long a = std::max(first, lo), b = std::min(last, hi);
      std::vector<double> cut(out.begin() + (a - first), out.begin() + (b - first) + 1);
      out = std::move(cut);
      first = a;
    }

    std::size_t lo_j = 0, hi_j = out.size();
    for (double& v : out)
      if (v < kFlush) v = 0.0;
    while (lo_j + 1 < hi_j && out[lo_j] == 0.0) ++lo_j;
    while (hi_j > lo_j + 1 && out[hi_j - 1] == 0.0) --hi_j;
    f.logw.resize(hi_j - lo_j);
    for (std::size_t j = lo_j; j < hi_j; ++j) f.logw[j - lo_j] = std::log(out[j]);
    f.first = first + static_cast<long>(lo_j);
    f.k += 1;
    stats_.max_sites = std::max(stats_.max_sites, f.size());
    return log_c;
  }

  const FieldSource& field_;
  TransferOptions opts_;
  Space space_;
  bool lattice_;
  long horizon_;
  DiscreteStep step_;
  long cap_lo_ = std::numeric_limits<long>::min() / 4;
  long cap_hi_ = std::numeric_limits<long>::max() / 4;
  SweepStats stats_;
  std::vector<double> fbuf_;
};

void check_times(long m, long n) {
  if (n < m) throw PolymerError(ErrorKind::parameter, "transfer: need m <= n");
}

void check_finite(double log_z, long k) {
  if (!std::isfinite(log_z)) {
    std::ostringstream os;
    os << "transfer: partition function left (0, inf) at time " << k;
    throw PolymerError(ErrorKind::divergent, os.str());
  }
}

struct SweepResult {
  LogWeightField last;
  double log_z = 0.0;
  std::vector<Extent> extents;
  std::optional<LogWeightField> at_k;
  double log_z_at_k = 0.0;
};

SweepResult run(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                const TransferOptions& opts, std::optional<long> keep = std::nullopt,
                const SweepVisitor* visit = nullptr, SweepStats* stats = nullptr) {
  check_times(m, n);
  const long ia = site_index(field.space(), a);
  Engine e(kernel, field, opts, ia, n);
  SweepResult r;
  r.last = LogWeightField{m, field.space(), ia, e.stride(), {0.0}};
  CompensatedSum log_z;
  r.extents.push_back({r.last.first, r.last.size()});
  if (keep && *keep == m) r.at_k = r.last;  // log_z_at_k stays 0
  if (visit) (*visit)(r.last, 0.0);
  for (long k = m; k < n; ++k) {
    log_z.add(e.advance(r.last));
    check_finite(log_z.value(), k + 1);
    r.extents.push_back({r.last.first, r.last.size()});
    if (keep && *keep == k + 1) {
      r.at_k = r.last;
      r.log_z_at_k = log_z.value();
    }
    if (visit) (*visit)(r.last, log_z.value());
  }
  r.log_z = log_z.value();
  if (stats) *stats = e.stats();
  return r;
}

}  // namespace

double LogWeightField::at_index(long i) const noexcept {
  const long d = i - first;
  if (d < 0 || d % stride != 0) return kNegInf;
  const auto j = static_cast<std::size_t>(d / stride);
  return j < logw.size() ? logw[j] : kNegInf;
}

double LogWeightField::log_total() const { return log_sum_exp(logw); }

double EndpointMeasure::total() const {
  CompensatedSum s;
  for (double v : mass) s.add(v);
  return s.value();
}

EndpointMeasure EndpointMeasure::point_mass(Space space, long index, long time) {
  EndpointMeasure e;
  e.time = time;
  e.space = space;
  e.first = index;
  e.stride = space.lattice ? 2 : 1;
  e.mass = {1.0};
  return e;
}

EndpointMeasure EndpointMeasure::from_weights(Space space, long first, long stride, std::vector<double> weights,
                                              long time) {
  if (stride < 1) throw PolymerError(ErrorKind::parameter, "measure stride must be >= 1");
  CompensatedSum s;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw PolymerError(ErrorKind::input, "measure weights must be finite and nonnegative");
    s.add(w);
  }
  if (!(s.value() > 0.0)) throw PolymerError(ErrorKind::degenerate, "measure has no mass");
  const double inv = 1.0 / s.value();
  for (double& w : weights) w *= inv;
  EndpointMeasure e;
  e.time = time;
  e.space = space;
  e.first = first;
  e.stride = stride;
  e.mass = std::move(weights);
  return e;
}

EndpointMeasure EndpointMeasure::from_log_field(const LogWeightField& field) {
  double mx = kNegInf;
  for (double v : field.logw) mx = std::max(mx, v);
  if (mx == kNegInf) throw PolymerError(ErrorKind::degenerate, "endpoint measure: every weight is -inf");
  std::vector<double> w(field.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::exp(field.logw[j] - mx);
  auto e = from_weights(field.space, field.first, field.stride, std::move(w), field.k);
  e.log_normalizer = field.log_total();
  return e;
}

long site_index(const Space& space, double x) {
  if (!std::isfinite(x)) throw PolymerError(ErrorKind::input, "site must be finite");
  if (space.lattice) {
    if (x != std::floor(x)) throw PolymerError(ErrorKind::input, "lattice sites are integers");
    return static_cast<long>(x);
  }
  const double r = (x - space.origin) / space.spacing;
  const double i = std::round(r);
  if (std::abs(r - i) > 1e-9 * std::max(1.0, std::abs(r)))
    throw PolymerError(ErrorKind::input, "point is not on the grid");
  return static_cast<long>(i);
}

struct ForwardStepper::Impl {
  Impl(const StepKernel& kernel, const FieldSource& field, double a, long m, long n, const TransferOptions& opts)
      : ia(site_index(field.space(), a)), engine(kernel, field, opts, ia, n), n(n) {
    f = LogWeightField{m, field.space(), ia, engine.stride(), {0.0}};
  }
  long ia;
  Engine engine;
  long n;
  LogWeightField f;
  CompensatedSum log_z;
};

ForwardStepper::ForwardStepper(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                               const TransferOptions& opts) {
  check_times(m, n);
  impl_ = std::make_unique<Impl>(kernel, field, a, m, n, opts);
}
ForwardStepper::ForwardStepper(ForwardStepper&&) noexcept = default;
ForwardStepper& ForwardStepper::operator=(ForwardStepper&&) noexcept = default;
ForwardStepper::~ForwardStepper() = default;

const LogWeightField& ForwardStepper::log_rho() const noexcept { return impl_->f; }
double ForwardStepper::log_z() const noexcept { return impl_->log_z.value(); }
long ForwardStepper::time() const noexcept { return impl_->f.k; }
bool ForwardStepper::done() const noexcept { return impl_->f.k >= impl_->n; }

void ForwardStepper::step() {
  if (done()) throw PolymerError(ErrorKind::parameter, "forward stepper: horizon reached");
  impl_->log_z.add(impl_->engine.advance(impl_->f));
  check_finite(impl_->log_z.value(), impl_->f.k);
}

SweepStats forward_sweep(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                         const SweepVisitor& visit, const TransferOptions& opts) {
  SweepStats stats;
  run(kernel, field, a, m, n, opts, std::nullopt, &visit, &stats);
  return stats;
}

double point_to_line_logZ(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                          const TransferOptions& opts) {
  return run(kernel, field, a, m, n, opts).log_z;
}

LogWeightField point_to_point_field(const StepKernel& kernel, const FieldSource& field, double a, long m,
                                    long n, const TransferOptions& opts) {
  auto r = run(kernel, field, a, m, n, opts);
  LogWeightField out = std::move(r.last);
  double shift = r.log_z - out.log_total();
  if (!out.space.lattice) shift -= std::log(out.space.spacing);
  for (double& v : out.logw) v += shift;
  return out;
}

double point_to_point_logZ(const StepKernel& kernel, const FieldSource& field, double a, double u, long m,
                           long n, const TransferOptions& opts) {
  const long iu = site_index(field.space(), u);
  return point_to_point_field(kernel, field, a, m, n, opts).at_index(iu);
}

EndpointMeasure endpoint_distribution(const StepKernel& kernel, const FieldSource& field, double a, long m,
                                      long n, const TransferOptions& opts) {
  auto r = run(kernel, field, a, m, n, opts);
  auto e = EndpointMeasure::from_log_field(r.last);
  e.log_normalizer = r.log_z;
  return e;
}

EndpointMeasure time_marginal(const StepKernel& kernel, const FieldSource& field, double a, long m, long n,
                              long k, std::optional<double> pinned, const TransferOptions& opts) {
  check_times(m, n);
  if (k < m || k > n) throw PolymerError(ErrorKind::parameter, "time_marginal: need m <= k <= n");
  auto r = run(kernel, field, a, m, n, opts, k);
  const long ia = site_index(field.space(), a);
  Engine e(kernel, field, opts, ia, n);

  LogWeightField b = r.last;
  if (pinned) {
    const long iu = site_index(field.space(), *pinned);
    const double hit = r.last.at_index(iu);
    if (hit == kNegInf) throw PolymerError(ErrorKind::degenerate, "time_marginal: pinned endpoint unreachable");
    for (std::size_t j = 0; j < b.size(); ++j) b.logw[j] = b.index(j) == iu ? 0.0 : kNegInf;
  } else {
    std::fill(b.logw.begin(), b.logw.end(), 0.0);
  }
  for (long j = n - 1; j >= k; --j) e.retreat(b, r.extents[static_cast<std::size_t>(j - m)]);

  const LogWeightField& fwd = *r.at_k;
  LogWeightField joint = fwd;
  for (std::size_t j = 0; j < joint.size(); ++j) joint.logw[j] = fwd.logw[j] + b.logw[j];
  auto out = EndpointMeasure::from_log_field(joint);
  // log Z^{m,k} + log sum rho_k B_k - log sum rho_k
  double ln = r.log_z_at_k + joint.log_total() - fwd.log_total();
  if (pinned && !field.space().lattice) ln -= std::log(field.space().spacing);
  out.log_normalizer = ln;
  return out;
}

double normalized_logW(const StepKernel& kernel, const FieldSource& field, const EnvironmentSpec& spec,
                       double a, long m, long n, const TransferOptions& opts) {
  const double theta = annealed_exponent(spec).value;
  return point_to_line_logZ(kernel, field, a, m, n, opts) - theta * static_cast<double>(n - m);
}

void write_endpoint_csv(const EndpointMeasure& measure, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PolymerError(ErrorKind::input, "cannot open " + path.string());
  if (measure.space.lattice) {
    out << "site,mass\n";
    for (std::size_t j = 0; j < measure.size(); ++j) out << measure.index(j) << ',' << fmt17(measure.mass[j]) << '\n';
  } else {
    out << "x,mass,density\n";
    for (std::size_t j = 0; j < measure.size(); ++j)
      out << fmt17(measure.position(j)) << ',' << fmt17(measure.mass[j]) << ',' << fmt17(measure.density(j))
          << '\n';
  }
}

void write_trace_csv(std::span<const TraceRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PolymerError(ErrorKind::input, "cannot open " + path.string());
  out << "n,logZ,logW\n";
  for (const auto& r : rows) out << r.n << ',' << fmt17(r.log_z) << ',' << fmt17(r.log_w) << '\n';
}

}  // namespace polymer
