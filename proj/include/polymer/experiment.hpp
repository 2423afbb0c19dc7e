#ifndef POLYMER_EXPERIMENT_HPP
#define POLYMER_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymer/disorder.hpp"
#include "polymer/localization.hpp"

namespace polymer {

struct ConfigIssue {
  std::string field;  // JSON pointer style, e.g. "/localization/delta"
  std::string message;
};

// Raised by parse_config with every problem found, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues);
  ConfigError(std::string field, std::string message);
  const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }
  nlohmann::json to_json() const;

 private:
  std::vector<ConfigIssue> issues_;
};

struct ExperimentConfig {
  bool lattice = true;
  StepKernel kernel = StepKernel::ssrw();
  EnvironmentSpec env = EnvironmentSpec::zero();
  long horizon = 100;
  std::vector<double> starts{0.0};
  LocalizationParams localization;
  double overlap_r = 0.0;
  double fractional_theta = 0.5;
  std::vector<long> fractional_ns;  // empty: powers of two from 16 up to the horizon
  // Either an explicit list of environment seeds or base + count through replica_seed.
  std::optional<std::vector<std::uint64_t>> seed_values;
  std::uint64_t seed_base = 1;
  std::size_t seed_count = 10;
  double h = 0.05;                  // continuous model only
  double halfwidth = kInf;          // continuous model only
  std::vector<double> shape_v{-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0};
  std::filesystem::path output = ".";

  std::vector<std::uint64_t> seeds() const;
  Model model() const;
  // All semantic fields with defaults filled in; excludes output and jobs.
  nlohmann::json canonical() const;
  // 16 hex digits of FNV-1a over canonical().dump().
  std::string hash() const;
};

// Missing fields take defaults; unknown fields are rejected.
ExperimentConfig parse_config(const nlohmann::json& j);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

enum class OutputFormat { csv, json };

struct RunOptions {
  OutputFormat format = OutputFormat::csv;
  unsigned jobs = 1;
  std::optional<std::filesystem::path> cache;  // slab cache directory
};

struct RunResult {
  int exit_code = 0;
  std::string base;  // <subcommand>-<hash>
  std::vector<std::filesystem::path> artifacts;
  nlohmann::json summary;
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"simulate", "localize", "joint", "disorder", "shape", "verify"};
  return names;
}

// Runs one pipeline and writes its artifacts into cfg.output. Exit code 1
// means the run completed but a check failed (verify only).
RunResult run_experiment(const std::string& subcommand, const ExperimentConfig& cfg, const RunOptions& opts = {});

// Writes through a temporary file in the same directory and renames it.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

// Advice attached to capacity errors.
std::string sizing_advice(const ExperimentConfig& cfg);

}  // namespace polymer

#endif  // POLYMER_EXPERIMENT_HPP
