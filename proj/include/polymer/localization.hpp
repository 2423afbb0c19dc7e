#ifndef POLYMER_LOCALIZATION_HPP
#define POLYMER_LOCALIZATION_HPP

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "polymer/transfer.hpp"

namespace polymer {

struct LocalizationParams {
  double delta = 0.5;       // in (0, 1)
  double K = 5.0;           // ball radius, > 0
  double theta_frac = 0.5;  // in (0, 1]
  void validate() const;
  nlohmann::json to_json() const;
};

struct BallMass {
  double center = 0.0;
  double mass = 0.0;
};

// Max over centers of nu([c - K, c + K]). Centers are support points and
// midpoints between neighbours; ties go to the leftmost center.
BallMass best_ball_mass(const EndpointMeasure& nu, double K);

// Max over centers of the min over the family of the closed-ball mass.
// All measures must live on the same Space.
BallMass joint_ball_mass(std::span<const EndpointMeasure> family, double K);

// Mass of the closed ball around a given center.
double ball_mass(const EndpointMeasure& nu, double center, double K);

struct LocalizationRecord {
  long k = 0;
  double center = 0.0;
  double mass = 0.0;                  // best single (first measure) ball mass
  std::optional<double> joint_mass;   // set for families of size > 1
  bool indicator = false;
};

struct LocalizationReport {
  LocalizationParams params;
  std::vector<LocalizationRecord> records;
  double fraction = 0.0;       // indicators / records
  double tail_fraction = 0.0;  // same over the last half of the records
  bool joint = false;

  nlohmann::json summary() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Streaming builder; one call per time step.
class LocalizationTracker {
 public:
  explicit LocalizationTracker(LocalizationParams params);
  void add(long k, const EndpointMeasure& nu);
  void add_joint(long k, std::span<const EndpointMeasure> family);
  LocalizationReport report() const;

 private:
  LocalizationParams params_;
  std::vector<LocalizationRecord> records_;
  bool joint_ = false;
};

LocalizationReport localization_fraction(std::span<const EndpointMeasure> measures,
                                         const LocalizationParams& params);

// nu x nu {|X - Y| < r}. On the lattice r = 0 means the exact-match overlap.
// On grids each mass is spread uniformly over its cell and the product
// measure is integrated exactly; r < h adds a warning.
double overlap(const EndpointMeasure& nu, double r, std::vector<std::string>* warnings = nullptr);
// Sum of squared masses.
double exact_match_overlap(const EndpointMeasure& nu);
// sup_x nu({y : |y - x| < r}), treating masses as atoms at their sites.
double sup_open_ball_mass(const EndpointMeasure& nu, double r);

enum class Dominance { mu_below, nu_below, equal, incomparable };
const char* to_string(Dominance d) noexcept;

// mu below nu iff F_mu >= F_nu - tol everywhere.
Dominance stochastic_dominance(const EndpointMeasure& mu, const EndpointMeasure& nu, double tol = 1e-10);

double total_variation(const EndpointMeasure& mu, const EndpointMeasure& nu);

// Same lattice flag, spacing and origin.
bool compatible(const EndpointMeasure& a, const EndpointMeasure& b) noexcept;

}  // namespace polymer

#endif  // POLYMER_LOCALIZATION_HPP
