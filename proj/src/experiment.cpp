#include "polymer/experiment.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "polymer/parallel.hpp"
#include "polymer/verify.hpp"

namespace polymer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Checker {
  std::vector<ConfigIssue> issues;

  void fail(std::string field, std::string message) { issues.push_back({std::move(field), std::move(message)}); }

  void unknown_keys(const json& obj, const std::string& path, std::initializer_list<const char*> known) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
        fail(path + "/" + it.key(), "unknown field");
  }

  std::optional<double> number(const json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) return std::nullopt;
    if (!obj[key].is_number()) {
      fail(path, "must be a number");
      return std::nullopt;
    }
    return obj[key].get<double>();
  }

  std::optional<long> integer(const json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) return std::nullopt;
    if (!obj[key].is_number_integer()) {
      fail(path, "must be an integer");
      return std::nullopt;
    }
    return obj[key].get<long>();
  }
};

bool is_nonnegative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

bool is_integral(double x) { return std::isfinite(x) && x == std::floor(x); }

std::vector<long> default_fractional_ns(long horizon) {
  std::vector<long> ns;
  for (long n = 16; n <= horizon; n *= 2) ns.push_back(n);
  return ns;
}

// --- artifacts --------------------------------------------------------------

struct Artifacts {
  fs::path dir;
  std::string base;
  std::vector<fs::path> written;

  fs::path path(const std::string& suffix) const { return dir / (base + suffix); }

  void put(const std::string& suffix, const std::string& contents) {
    write_atomic(path(suffix), contents);
    written.push_back(path(suffix));
  }
  void put_json(const std::string& suffix, const json& j) { put(suffix, j.dump(2) + "\n"); }

  // For writers that take a path: write next to the target, then rename.
  template <class Fn>
  void put_with(const std::string& suffix, Fn write) {
    const fs::path target = path(suffix);
    const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
    write(tmp);
    fs::rename(tmp, target);
    written.push_back(target);
  }
};

// --- fields -----------------------------------------------------------------

class FieldFactory {
 public:
  FieldFactory(const ExperimentConfig& cfg, std::optional<fs::path> cache) : cfg_(cfg), cache_(std::move(cache)) {
    if (cache_ && !cfg_.lattice && !std::isfinite(cfg_.halfwidth)) {
      note_ = "slab cache skipped: the continuous model needs a finite grid.halfwidth";
      cache_.reset();
    }
    if (cache_) fs::create_directories(*cache_);
  }

  const std::string& note() const noexcept { return note_; }

  SlabWindow window() const {
    const auto [lo, hi] = std::minmax_element(cfg_.starts.begin(), cfg_.starts.end());
    SlabWindow w;
    w.m = 0;
    w.n = cfg_.horizon;
    if (cfg_.lattice) {
      w.space = Space::integers();
      w.first = static_cast<long>(*lo) - cfg_.horizon;
      w.count = static_cast<std::size_t>(static_cast<long>(*hi - *lo) + 2 * cfg_.horizon + 1);
    } else {
      w.space = Space::grid(0.0, cfg_.h);
      const long cells = static_cast<long>(std::floor(cfg_.halfwidth / cfg_.h));
      w.first = std::lround(*lo / cfg_.h) - cells;
      w.count = static_cast<std::size_t>(std::lround((*hi - *lo) / cfg_.h) + 2 * cells + 1);
    }
    return w;
  }

  std::unique_ptr<FieldSource> make(std::uint64_t seed) const {
    const EnvironmentSpec spec = cfg_.env.with_seed(seed);
    const Space space = cfg_.lattice ? Space::integers() : Space::grid(0.0, cfg_.h);
    if (!cache_ || spec.deterministic()) return std::make_unique<LazyField>(spec, space);
    const SlabWindow w = window();
    const std::string key = hex64(fnv1a64(spec.to_json().dump() + to_json(w).dump()));
    const fs::path csv = *cache_ / ("slab-" + key + ".csv");
    const fs::path header = *cache_ / ("slab-" + key + ".json");
    if (fs::exists(csv) && fs::exists(header)) return std::make_unique<EnvironmentSlab>(read_slab(csv, header));
    auto slab = std::make_unique<EnvironmentSlab>(generate_slab(spec, w));
    const std::string tag = ".tmp." + std::to_string(::getpid()) + "." + key;
    const fs::path tcsv = csv.string() + tag, thdr = header.string() + tag;
    write_slab(*slab, tcsv, thdr);
    fs::rename(thdr, header);
    fs::rename(tcsv, csv);
    return slab;
  }

 private:
  const ExperimentConfig& cfg_;
  std::optional<fs::path> cache_;
  std::string note_;
};

double theta_or_nan(const EnvironmentSpec& env) {
  try {
    return annealed_exponent(env).value;
  } catch (const PolymerError&) {
    return std::nan("");
  }
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

// --- simulate ---------------------------------------------------------------

struct SimulateReplica {
  std::vector<TraceRow> trace;
  EndpointMeasure endpoint;
  double mean_x = 0.0;
  double var_x = 0.0;
};

RunResult run_simulate(const ExperimentConfig& cfg, const RunOptions& opts, Artifacts& out, json& summary,
                       const FieldFactory& fields) {
  const auto seeds = cfg.seeds();
  const Model model = cfg.model();
  const double theta = theta_or_nan(cfg.env);
  const auto reps = parallel_map(seeds.size(), opts.jobs, [&](std::size_t r) {
    const auto field = fields.make(seeds[r]);
    SimulateReplica rep;
    ForwardStepper s(model.kernel, *field, model.start, 0, cfg.horizon, model.transfer);
    rep.trace.push_back({0, 0.0, 0.0});
    while (!s.done()) {
      s.step();
      rep.trace.push_back({s.time(), s.log_z(), s.log_z() - theta * static_cast<double>(s.time())});
    }
    rep.endpoint = EndpointMeasure::from_log_field(s.log_rho());
    CompensatedSum m1, m2;
    for (std::size_t j = 0; j < rep.endpoint.size(); ++j) {
      const double x = rep.endpoint.position(j);
      m1.add(rep.endpoint.mass[j] * x);
      m2.add(rep.endpoint.mass[j] * x * x);
    }
    rep.mean_x = m1.value();
    rep.var_x = m2.value() - rep.mean_x * rep.mean_x;
    return rep;
  });

  std::vector<double> per_n;
  json per_seed = json::array();
  for (std::size_t r = 0; r < reps.size(); ++r) {
    const double lz = reps[r].trace.back().log_z;
    per_n.push_back(lz / static_cast<double>(cfg.horizon));
    per_seed.push_back({{"seed", seeds[r]},
                        {"log_z", lz},
                        {"log_w", number_or_null(reps[r].trace.back().log_w)},
                        {"mean_x", reps[r].mean_x},
                        {"var_x", reps[r].var_x}});
  }
  const auto ms = mean_se(per_n);
  summary["theta"] = number_or_null(theta);
  summary["mean_log_z_over_n"] = ms.mean;
  summary["se"] = ms.se;
  summary["replicas"] = per_seed;

  if (opts.format == OutputFormat::csv) {
    std::ostringstream ep, tr;
    ep << "seed,x,mass\n";
    tr << "seed,n,logZ,logW\n";
    for (std::size_t r = 0; r < reps.size(); ++r) {
      const auto& e = reps[r].endpoint;
      for (std::size_t j = 0; j < e.size(); ++j)
        ep << seeds[r] << ',' << fmt17(e.position(j)) << ',' << fmt17(e.mass[j]) << '\n';
      for (const auto& row : reps[r].trace)
        tr << seeds[r] << ',' << row.n << ',' << fmt17(row.log_z) << ',' << fmt17(row.log_w) << '\n';
    }
    out.put(".csv", ep.str());
    out.put(".trace.csv", tr.str());
    out.put_json(".summary.json", summary);
  } else {
    json data = summary;
    data["endpoints"] = json::array();
    data["traces"] = json::array();
    for (std::size_t r = 0; r < reps.size(); ++r) {
      const auto& e = reps[r].endpoint;
      std::vector<double> xs;
      for (std::size_t j = 0; j < e.size(); ++j) xs.push_back(e.position(j));
      data["endpoints"].push_back({{"seed", seeds[r]}, {"x", xs}, {"mass", e.mass}});
      json rows = json::array();
      for (const auto& row : reps[r].trace) rows.push_back({row.n, row.log_z, number_or_null(row.log_w)});
      data["traces"].push_back({{"seed", seeds[r]}, {"columns", {"n", "logZ", "logW"}}, {"rows", rows}});
    }
    out.put_json(".json", data);
  }
  return {};
}

// --- localize / joint ---------------------------------------------------------

struct LocalizeReplica {
  LocalizationReport report;
  std::vector<double> overlaps;  // single-start runs only
  std::vector<std::string> warnings;
};

LocalizeReplica localize_one(const ExperimentConfig& cfg, const FieldSource& field, bool joint) {
  const Model model = cfg.model();
  std::vector<ForwardStepper> steppers;
  const std::size_t count = joint ? cfg.starts.size() : 1;
  for (std::size_t i = 0; i < count; ++i)
    steppers.emplace_back(model.kernel, field, cfg.starts[i], 0, cfg.horizon, model.transfer);
  LocalizationTracker tracker(cfg.localization);
  LocalizeReplica rep;
  std::vector<EndpointMeasure> family(count);
  for (long k = 1; k <= cfg.horizon; ++k) {
    for (std::size_t i = 0; i < count; ++i) {
      steppers[i].step();
      family[i] = EndpointMeasure::from_log_field(steppers[i].log_rho());
    }
    if (joint) {
      tracker.add_joint(k, family);
    } else {
      tracker.add(k, family.front());
      rep.overlaps.push_back(overlap(family.front(), cfg.overlap_r, &rep.warnings));
    }
  }
  rep.report = tracker.report();
  std::sort(rep.warnings.begin(), rep.warnings.end());
  rep.warnings.erase(std::unique(rep.warnings.begin(), rep.warnings.end()), rep.warnings.end());
  return rep;
}

RunResult run_localize(const ExperimentConfig& cfg, const RunOptions& opts, Artifacts& out, json& summary,
                       const FieldFactory& fields, bool joint) {
  const auto seeds = cfg.seeds();
  const auto reps = parallel_map(seeds.size(), opts.jobs, [&](std::size_t r) {
    const auto field = fields.make(seeds[r]);
    return localize_one(cfg, *field, joint);
  });

  std::vector<double> fractions, tails;
  std::size_t reached = 0, positive = 0;
  std::set<std::string> warnings;
  json per_seed = json::array();
  for (std::size_t r = 0; r < reps.size(); ++r) {
    const auto& rep = reps[r].report;
    fractions.push_back(rep.fraction);
    tails.push_back(rep.tail_fraction);
    reached += rep.fraction >= cfg.localization.theta_frac;
    positive += rep.fraction > 0.0;
    json s = rep.summary();
    s.erase("params");
    s["seed"] = seeds[r];
    if (joint) {
      double best = 0.0;
      for (const auto& rec : rep.records) best = std::max(best, rec.joint_mass.value_or(rec.mass));
      s["max_joint_mass"] = best;
    } else {
      s["mean_overlap"] = mean_se(reps[r].overlaps).mean;
    }
    per_seed.push_back(s);
    warnings.insert(reps[r].warnings.begin(), reps[r].warnings.end());
  }
  const auto f = mean_se(fractions), t = mean_se(tails);
  summary["localization"] = cfg.localization.to_json();
  summary["mean_fraction"] = f.mean;
  summary["fraction_se"] = f.se;
  summary["mean_tail_fraction"] = t.mean;
  summary["seeds_reaching_theta_frac"] = reached;
  summary["seeds_with_positive_fraction"] = positive;
  if (joint) summary["starts"] = cfg.starts;
  if (!warnings.empty()) summary["warnings"] = std::vector<std::string>(warnings.begin(), warnings.end());
  summary["replicas"] = per_seed;

  auto row_cells = [&](const LocalizeReplica& rep, std::size_t i, std::size_t hits) {
    const auto& rec = rep.report.records[i];
    const double running = static_cast<double>(hits) / static_cast<double>(i + 1);
    if (joint) return std::vector<std::string>{fmt17(rec.center), fmt17(rec.mass), fmt17(rec.joint_mass.value_or(rec.mass)),
                                               rec.indicator ? "1" : "0", fmt17(running)};
    return std::vector<std::string>{fmt17(rec.center), fmt17(rec.mass), rec.indicator ? "1" : "0", fmt17(running),
                                    fmt17(rep.overlaps[i])};
  };
  const std::vector<std::string> columns =
      joint ? std::vector<std::string>{"center", "min_single_mass", "joint_mass", "indicator", "running_fraction"}
            : std::vector<std::string>{"center", "mass", "indicator", "running_fraction", "overlap"};

  if (opts.format == OutputFormat::csv) {
    std::ostringstream csv;
    csv << "seed,k";
    for (const auto& c : columns) csv << ',' << c;
    csv << '\n';
    for (std::size_t r = 0; r < reps.size(); ++r) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < reps[r].report.records.size(); ++i) {
        hits += reps[r].report.records[i].indicator;
        csv << seeds[r] << ',' << reps[r].report.records[i].k;
        for (const auto& cell : row_cells(reps[r], i, hits)) csv << ',' << cell;
        csv << '\n';
      }
    }
    out.put(".csv", csv.str());
    out.put_json(".summary.json", summary);
  } else {
    json data = summary;
    data["columns"] = columns;
    data["columns"].insert(data["columns"].begin(), "k");
    data["records"] = json::array();
    for (std::size_t r = 0; r < reps.size(); ++r) {
      json rows = json::array();
      std::size_t hits = 0;
      for (std::size_t i = 0; i < reps[r].report.records.size(); ++i) {
        const auto& rec = reps[r].report.records[i];
        hits += rec.indicator;
        const double running = static_cast<double>(hits) / static_cast<double>(i + 1);
        if (joint)
          rows.push_back({rec.k, rec.center, rec.mass, rec.joint_mass.value_or(rec.mass), rec.indicator, running});
        else
          rows.push_back({rec.k, rec.center, rec.mass, rec.indicator, running, reps[r].overlaps[i]});
      }
      data["records"].push_back({{"seed", seeds[r]}, {"rows", rows}});
    }
    out.put_json(".json", data);
  }
  return {};
}

// --- disorder / shape / verify ------------------------------------------------

RunResult run_disorder(const ExperimentConfig& cfg, const RunOptions& opts, Artifacts& out, json& summary) {
  const auto seeds = cfg.seeds();
  Model model = cfg.model();
  model.jobs = opts.jobs;
  const auto trace = free_energy_trace(model, cfg.horizon, seeds);
  summary["trace"] = trace.to_json();
  summary["trace"].erase("spec");
  const auto ns = cfg.fractional_ns.empty() ? default_fractional_ns(cfg.horizon) : cfg.fractional_ns;
  std::optional<FractionalMoment> fm;
  if (ns.size() >= 3) {
    fm = fractional_moment(model, cfg.fractional_theta, ns, seeds);
    summary["fractional"] = fm->to_json();
  } else {
    summary["fractional"] = {{"skipped", "needs three moment times; raise the horizon to 64 or set fractional_ns"}};
  }
  if (opts.format == OutputFormat::csv) {
    out.put_with(".csv", [&](const fs::path& p) { trace.write_csv(p); });
    if (fm) {
      std::ostringstream csv;
      csv << "n,mean_W_theta,se\n";
      for (const auto& p : fm->points) csv << p.n << ',' << fmt17(p.mean) << ',' << fmt17(p.se) << '\n';
      out.put(".fractional.csv", csv.str());
    }
    out.put_json(".summary.json", summary);
  } else {
    out.put_json(".json", summary);
  }
  return {};
}

RunResult run_shape(const ExperimentConfig& cfg, const RunOptions& opts, Artifacts& out, json& summary) {
  Model model = cfg.model();
  model.jobs = opts.jobs;
  const auto res = shape_function(model, cfg.horizon, cfg.shape_v, cfg.seeds());
  summary["shape"] = res.to_json();
  if (opts.format == OutputFormat::csv) {
    std::ostringstream csv;
    csv << "v,x,lambda,se\n";
    for (const auto& p : res.points) csv << fmt17(p.v) << ',' << p.x << ',' << fmt17(p.lambda) << ',' << fmt17(p.se) << '\n';
    out.put(".csv", csv.str());
    out.put_json(".summary.json", summary);
  } else {
    out.put_json(".json", summary);
  }
  return {};
}

RunResult run_verify(const ExperimentConfig& cfg, Artifacts& out, json& summary) {
  auto outcomes = run_lattice_suite(cfg.seed_base);
  if (!cfg.lattice) {
    VerifyOptions g;
    g.backend = Backend::grid;
    g.seed_base = cfg.seed_base;
    g.kernel = cfg.kernel;
    g.h = cfg.h;
    outcomes.push_back(check_path_crossing(g));
    outcomes.push_back(check_endpoint_monotonicity(g));
    outcomes.push_back(check_disintegration(g));
  }
  std::size_t failed = 0;
  json checks = json::array();
  for (const auto& o : outcomes) {
    failed += !o.passed();
    checks.push_back({{"name", o.name}, {"instances", o.instances}, {"violations", o.violations}});
  }
  summary["checks"] = checks;
  summary["failed"] = failed;
  out.put_with(".json", [&](const fs::path& p) { write_outcomes_json(outcomes, p); });
  out.put_with(".junit.xml", [&](const fs::path& p) { write_junit_xml(outcomes, p); });
  out.put_json(".summary.json", summary);
  RunResult r;
  r.exit_code = failed ? 1 : 0;
  return r;
}

}  // namespace

// --- config -------------------------------------------------------------------

ConfigError::ConfigError(std::vector<ConfigIssue> issues)
    : std::runtime_error("invalid config"), issues_(std::move(issues)) {}

ConfigError::ConfigError(std::string field, std::string message)
    : ConfigError(std::vector<ConfigIssue>{{std::move(field), std::move(message)}}) {}

json ConfigError::to_json() const {
  json list = json::array();
  for (const auto& i : issues_) list.push_back({{"field", i.field}, {"message", i.message}});
  return {{"error", "invalid_config"}, {"issues", list}};
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  return seed_values ? *seed_values : seed_list(seed_base, seed_count);
}

Model ExperimentConfig::model() const {
  Model m;
  m.kernel = kernel;
  m.env = env;
  m.space = lattice ? Space::integers() : Space::grid(0.0, h);
  m.transfer.max_halfwidth = halfwidth;
  m.start = starts.front();
  return m;
}

json ExperimentConfig::canonical() const {
  json j;
  j["model"] = lattice ? "lattice" : "continuous";
  j["kernel"] = kernel.to_json();
  json e = env.to_json();
  e.erase("seed");
  j["environment"] = e;
  j["horizon"] = horizon;
  j["starts"] = starts;
  j["localization"] = localization.to_json();
  j["overlap_r"] = overlap_r;
  j["fractional"] = {{"theta", fractional_theta},
                     {"ns", fractional_ns.empty() ? default_fractional_ns(horizon) : fractional_ns}};
  j["seeds"] = seeds();
  j["shape_v"] = shape_v;
  if (!lattice) j["grid"] = {{"h", h}, {"halfwidth", number_or_null(halfwidth)}};
  return j;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical().dump())); }

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("", "config must be a JSON object");
  Checker c;
  ExperimentConfig cfg;
  c.unknown_keys(j, "", {"model", "kernel", "environment", "horizon", "starts", "localization", "overlap_r",
                         "fractional_theta", "fractional_ns", "seeds", "grid", "shape_v", "output"});

  if (j.contains("model")) {
    const auto& m = j["model"];
    if (m == "continuous")
      cfg.lattice = false;
    else if (m != "lattice")
      c.fail("/model", "must be \"lattice\" or \"continuous\"");
  }

  cfg.kernel = cfg.lattice ? StepKernel::ssrw() : StepKernel::gaussian(1.0);
  if (j.contains("kernel")) {
    try {
      cfg.kernel = StepKernel::from_json(j["kernel"]);
      if (cfg.lattice && !cfg.kernel.is_lattice()) c.fail("/kernel", "the lattice model uses the ssrw kernel");
      if (!cfg.lattice && cfg.kernel.is_lattice()) c.fail("/kernel", "the continuous model needs a density kernel");
    } catch (const PolymerError& e) {
      c.fail("/kernel", e.what());
    }
  }

  if (j.contains("environment")) {
    const auto& e = j["environment"];
    if (!e.is_object()) {
      c.fail("/environment", "must be an object");
    } else if (e.contains("seed")) {
      c.fail("/environment/seed", "environment seeds come from the top-level 'seeds' field");
    } else {
      try {
        cfg.env = EnvironmentSpec::from_json(e);
        cfg.env.validate();
      } catch (const PolymerError& err) {
        c.fail("/environment", err.what());
      }
    }
  }

  if (const auto n = c.integer(j, "horizon", "/horizon")) {
    if (*n < 1 || *n > 10'000'000)
      c.fail("/horizon", "must be in [1, 10000000]");
    else
      cfg.horizon = *n;
  }

  if (j.contains("grid")) {
    const auto& g = j["grid"];
    if (cfg.lattice) {
      c.fail("/grid", "only the continuous model uses a grid");
    } else if (!g.is_object()) {
      c.fail("/grid", "must be an object");
    } else {
      c.unknown_keys(g, "/grid", {"h", "halfwidth"});
      if (const auto h = c.number(g, "h", "/grid/h")) {
        if (!(*h > 0.0)) c.fail("/grid/h", "must be positive");
        else cfg.h = *h;
      }
      if (g.contains("halfwidth") && !g["halfwidth"].is_null()) {
        if (const auto w = c.number(g, "halfwidth", "/grid/halfwidth")) {
          if (!(*w > 0.0)) c.fail("/grid/halfwidth", "must be positive or null");
          else cfg.halfwidth = *w;
        }
      }
    }
  }

  if (j.contains("starts")) {
    const auto& s = j["starts"];
    if (!s.is_array() || s.empty() || s.size() > 64) {
      c.fail("/starts", "must be a list of 1 to 64 numbers");
    } else {
      std::vector<double> starts;
      bool ok = true;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::string path = "/starts/" + std::to_string(i);
        if (!s[i].is_number()) {
          c.fail(path, "must be a number");
          ok = false;
          continue;
        }
        const double a = s[i].get<double>();
        if (cfg.lattice && !is_integral(a)) {
          c.fail(path, "lattice starts must be integers");
          ok = false;
        } else if (!cfg.lattice && std::abs(a / cfg.h - std::round(a / cfg.h)) > 1e-9) {
          c.fail(path, "continuous starts must be grid points (multiples of grid.h)");
          ok = false;
        }
        starts.push_back(a);
      }
      if (ok && cfg.lattice) {
        const long p = static_cast<long>(starts.front()) & 1L;
        for (std::size_t i = 1; i < starts.size(); ++i)
          if ((static_cast<long>(starts[i]) & 1L) != p)
            c.fail("/starts/" + std::to_string(i), "lattice starts must share one parity");
      }
      if (ok && !cfg.lattice)
        for (auto& a : starts) a = std::round(a / cfg.h) * cfg.h;
      cfg.starts = starts;
    }
  }

  if (j.contains("localization")) {
    const auto& l = j["localization"];
    if (!l.is_object()) {
      c.fail("/localization", "must be an object");
    } else {
      c.unknown_keys(l, "/localization", {"delta", "K", "theta_frac"});
      if (const auto d = c.number(l, "delta", "/localization/delta")) {
        if (!(*d > 0.0 && *d < 1.0)) c.fail("/localization/delta", "must lie in (0, 1)");
        else cfg.localization.delta = *d;
      }
      if (const auto k = c.number(l, "K", "/localization/K")) {
        if (!(*k > 0.0)) c.fail("/localization/K", "must be positive");
        else cfg.localization.K = *k;
      }
      if (const auto t = c.number(l, "theta_frac", "/localization/theta_frac")) {
        if (!(*t > 0.0 && *t <= 1.0)) c.fail("/localization/theta_frac", "must lie in (0, 1]");
        else cfg.localization.theta_frac = *t;
      }
    }
  }

  if (const auto r = c.number(j, "overlap_r", "/overlap_r")) {
    if (cfg.lattice ? !(*r >= 0.0) : !(*r > 0.0))
      c.fail("/overlap_r", cfg.lattice ? "must be >= 0" : "must be positive on the continuous model");
    else
      cfg.overlap_r = *r;
  }

  if (const auto t = c.number(j, "fractional_theta", "/fractional_theta")) {
    if (!(*t > 0.0 && *t <= 1.0)) c.fail("/fractional_theta", "must lie in (0, 1]");
    else cfg.fractional_theta = *t;
  }

  if (j.contains("fractional_ns")) {
    const auto& ns = j["fractional_ns"];
    bool ok = ns.is_array() && ns.size() >= 3;
    std::vector<long> vals;
    if (ok)
      for (const auto& v : ns) {
        if (!v.is_number_integer() || v.get<long>() < 1 || (!vals.empty() && v.get<long>() <= vals.back())) {
          ok = false;
          break;
        }
        vals.push_back(v.get<long>());
      }
    if (ok) cfg.fractional_ns = vals;
    else c.fail("/fractional_ns", "must be at least three strictly increasing positive integers");
  }

  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    if (s.is_object()) {
      c.unknown_keys(s, "/seeds", {"base", "count"});
      if (s.contains("base")) {
        if (!is_nonnegative_integer(s["base"])) c.fail("/seeds/base", "must be a nonnegative integer");
        else cfg.seed_base = s["base"].get<std::uint64_t>();
      }
      if (const auto n = c.integer(s, "count", "/seeds/count")) {
        if (*n < 1 || *n > 1'000'000) c.fail("/seeds/count", "must be in [1, 1000000]");
        else cfg.seed_count = static_cast<std::size_t>(*n);
      }
    } else if (s.is_array() && !s.empty()) {
      std::vector<std::uint64_t> vals;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!is_nonnegative_integer(s[i])) c.fail("/seeds/" + std::to_string(i), "must be a nonnegative integer");
        else vals.push_back(s[i].get<std::uint64_t>());
      }
      cfg.seed_values = vals;
    } else {
      c.fail("/seeds", "must be {\"base\", \"count\"} or a nonempty list of seeds");
    }
  }

  if (j.contains("shape_v")) {
    const auto& v = j["shape_v"];
    if (!v.is_array() || v.empty()) {
      c.fail("/shape_v", "must be a nonempty list of numbers in [-1, 1]");
    } else {
      std::vector<double> vals;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number() || std::abs(v[i].get<double>()) > 1.0)
          c.fail("/shape_v/" + std::to_string(i), "must be a number in [-1, 1]");
        else
          vals.push_back(v[i].get<double>());
      }
      cfg.shape_v = vals;
    }
  }

  if (j.contains("output")) {
    if (!j["output"].is_string() || j["output"].get<std::string>().empty())
      c.fail("/output", "must be a nonempty path string");
    else
      cfg.output = j["output"].get<std::string>();
  }

  if (!c.issues.empty()) throw ConfigError(std::move(c.issues));
  return cfg;
}

// --- running ------------------------------------------------------------------

void write_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw PolymerError(ErrorKind::input, "cannot write " + tmp.string());
    out << contents;
    if (!out.flush()) throw PolymerError(ErrorKind::input, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string sizing_advice(const ExperimentConfig& cfg) {
  std::ostringstream os;
  double sites;
  if (cfg.lattice) {
    sites = 2.0 * static_cast<double>(cfg.horizon) + 1.0;
  } else if (std::isfinite(cfg.halfwidth)) {
    sites = 2.0 * cfg.halfwidth / cfg.h + 1.0;
  } else {
    sites = 0.0;
  }
  os << "a cached slab holds horizon x sites doubles";
  if (sites > 0.0)
    os << " (about " << static_cast<double>(cfg.horizon) * sites * 8.0 / 1e6 << " MB per seed here)";
  os << "; lower 'horizon'";
  if (!cfg.lattice) os << ", narrow 'grid.halfwidth' or raise 'grid.h'";
  os << ", or unset POLYMERLAB_CACHE so rows are generated on demand";
  return os.str();
}

RunResult run_experiment(const std::string& subcommand, const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), subcommand) == names.end())
    throw ConfigError("subcommand", "unknown subcommand '" + subcommand + "'");

  std::vector<ConfigIssue> issues;
  if (subcommand == "joint" && cfg.lattice)
    for (std::size_t i = 0; i < cfg.starts.size(); ++i)
      if (static_cast<long>(cfg.starts[i]) % 2 != 0)
        issues.push_back({"/starts/" + std::to_string(i), "joint starts on the lattice must be even"});
  if (subcommand == "joint" && cfg.starts.size() < 2)
    issues.push_back({"/starts", "joint needs at least two starts"});
  if (subcommand == "shape" && !cfg.lattice) issues.push_back({"/model", "shape runs on the lattice model"});
  if ((subcommand == "disorder" || subcommand == "shape") && cfg.seeds().size() < 2)
    issues.push_back({"/seeds", subcommand + " needs at least two seeds"});
  if (!issues.empty()) throw ConfigError(std::move(issues));

  fs::create_directories(cfg.output);
  Artifacts out{cfg.output, subcommand + "-" + cfg.hash(), {}};
  json summary{{"subcommand", subcommand}, {"config_hash", cfg.hash()}, {"model", cfg.lattice ? "lattice" : "continuous"}};

  FieldFactory fields(cfg, opts.cache);
  RunResult result;
  if (subcommand == "simulate") result = run_simulate(cfg, opts, out, summary, fields);
  else if (subcommand == "localize") result = run_localize(cfg, opts, out, summary, fields, false);
  else if (subcommand == "joint") result = run_localize(cfg, opts, out, summary, fields, true);
  else if (subcommand == "disorder") result = run_disorder(cfg, opts, out, summary);
  else if (subcommand == "shape") result = run_shape(cfg, opts, out, summary);
  else result = run_verify(cfg, out, summary);

  json manifest;
  manifest["polymerlab_version"] = kVersion;
  manifest["json_library"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                             std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                             std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  manifest["compiler"] = __VERSION__;
  manifest["subcommand"] = subcommand;
  manifest["config_hash"] = cfg.hash();
  manifest["config"] = cfg.canonical();
  manifest["format"] = opts.format == OutputFormat::csv ? "csv" : "json";
  manifest["seeds"] = cfg.seeds();
  if (!cfg.seed_values) manifest["seed_derivation"] = {{"base", cfg.seed_base}, {"count", cfg.seed_count}};
  const TransferOptions t;
  manifest["tolerances"] = {{"kernel_tail_mass", t.tail_mass},
                            {"truncation", t.truncation_tolerance},
                            {"verify_lattice", kLatticeTolerance},
                            {"verify_grid", kGridTolerance},
                            {"float_format", "%.17g"}};
  if (!fields.note().empty()) manifest["notes"] = {fields.note()};
  json files = json::array();
  for (const auto& p : out.written) files.push_back(p.filename().string());
  manifest["artifacts"] = files;
  out.put_json(".manifest.json", manifest);

  result.base = out.base;
  result.artifacts = out.written;
  result.summary = summary;
  return result;
}

}  // namespace polymer
