// polymerlab <subcommand> [--config PATH] [--seed-base N] [--jobs N] [--out DIR] [--format csv|json]
//
// Exit codes: 0 ok, 1 a verify check failed, 2 invalid config or usage,
// 3 capacity exceeded, 4 other numerical failure.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "polymer/experiment.hpp"

using nlohmann::json;
using namespace polymer;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed_base;
  unsigned jobs = 1;
  std::string out;
  std::string format = "csv";
};

int report_error(const json& err, int code) {
  std::cerr << err.dump(2) << '\n';
  return code;
}

json load_config(const Flags& f) {
  json j = json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError("--config", "cannot open " + f.config);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("--config", std::string("not valid JSON: ") + e.what());
    }
  }
  if (f.seed_base) {
    if (j.is_object() && j.contains("seeds") && j["seeds"].is_array())
      throw ConfigError("/seeds", "--seed-base cannot override an explicit seed list");
    if (j.is_object()) {
      if (!j.contains("seeds") || !j["seeds"].is_object()) j["seeds"] = json::object();
      j["seeds"]["base"] = *f.seed_base;
    }
  }
  if (!f.out.empty() && j.is_object()) j["output"] = f.out;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Directed polymer simulation and verification lab"};
  app.require_subcommand(1);
  Flags flags;
  for (const auto& name : subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", flags.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed-base", flags.seed_base, "base seed for {base, count} seeding");
    sub->add_option("--jobs", flags.jobs, "replica worker threads")->check(CLI::Range(1u, 1024u));
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--format", flags.format, "artifact format")->check(CLI::IsMember({"csv", "json"}));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error({{"error", "usage"}, {"message", e.what()}}, 2);
  }
  const std::string sub = app.get_subcommands().front()->get_name();

  RunOptions opts;
  opts.format = flags.format == "json" ? OutputFormat::json : OutputFormat::csv;
  opts.jobs = flags.jobs;
  if (const char* cache = std::getenv("POLYMERLAB_CACHE"); cache && *cache) opts.cache = cache;

  std::optional<ExperimentConfig> cfg;
  try {
    cfg = parse_config(load_config(flags));
    const auto res = run_experiment(sub, *cfg, opts);
    json files = json::array();
    for (const auto& p : res.artifacts) files.push_back(p.string());
    std::cout << json{{"status", res.exit_code == 0 ? "ok" : "checks_failed"}, {"base", res.base}, {"artifacts", files}}.dump(2)
              << '\n';
    return res.exit_code;
  } catch (const ConfigError& e) {
    return report_error(e.to_json(), 2);
  } catch (const PolymerError& e) {
    json err{{"error", to_string(e.kind())}, {"message", e.what()}};
    if (e.kind() == ErrorKind::capacity) {
      if (cfg) err["advice"] = sizing_advice(*cfg);
      return report_error(err, 3);
    }
    return report_error(err, 4);
  } catch (const std::exception& e) {
    return report_error({{"error", "internal"}, {"message", e.what()}}, 4);
  }
}
