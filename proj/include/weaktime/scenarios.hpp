#pragma once
// Scenario catalog, configuration, transmitted/reflected postselection and
// result emission.
//
// Config files are flat "key = value" lines; '#' starts a comment and key
// order does not matter. The schema is listed in README.md.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "weaktime/clocks.hpp"
#include "weaktime/meter.hpp"

namespace weaktime {

class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  std::vector<double> numbers(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Sorted key = value lines; the hash input.
  std::string canonical() const;
  // Hex SHA-256 of canonical().
  std::string hash() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

enum class PotentialKind { free, barrier, double_barrier, well };
enum class SystemKind { position, spin };

struct Scenario {
  std::string name;
  SystemKind system = SystemKind::position;

  // position systems
  int grid_n = 512;
  double x_min = -40.0;
  double dx = 5.0 / 32.0;
  PotentialKind potential = PotentialKind::free;
  double v0 = 0.0;
  double b_lo = 0.0, b_hi = 0.0;  // barrier or well extent
  double b_width = 0.0;           // double barrier: width of each wall
  bool stationary = false;        // packet = eigenstate of H0
  int level = 0;
  double x0 = 0.0, sigma = 1.0, k0 = 0.0;
  Window window{0.0, 1.0};
  double dt = 1e-3;
  PropagationMethod method = PropagationMethod::implicit_step;
  std::optional<Region> omega;  // nullopt: whole box
  std::string postselection = "none";  // none | transmitted_reflected | cell:<x>

  std::vector<std::string> pipelines{"sojourn"};
  int max_moment = 2;
  double pointer_width = 1.0;
  std::vector<double> couplings;  // meter ladder; empty: default

  // spin systems (two-level meter toys)
  double toy_coupling = 1.0;
  std::vector<double> toy_ratios{0.1, 0.3, 0.5, 2.0, 10.0, 100.0};

  int threads = 1;
  std::string config_hash;

  Grid grid() const;
  double x_max() const { return x_min + (grid_n - 1) * dx; }
  std::vector<double> potential_values() const;
  Region region() const;
  Setup setup() const;
  QuantumState initial_state() const;
  bool wants(const std::string& pipeline) const;
};

// Static checks; throws ValidationError. Returns warnings.
std::vector<std::string> validate(const Scenario& s);
// Largest mass found within 5% of either box edge during a free pre-run,
// sampled every 100 steps.
double boundary_budget(const Scenario& s);
inline constexpr double kBoundaryBudget = 1e-6;

Scenario scenario_from_config(const Config& c);
// (a) free, (b) well, (c) barrier, (d) beyond barrier, (e) two-level toy.
Scenario catalog(const std::string& name);
std::vector<std::string> catalog_names();
Config catalog_config(const std::string& name);

struct TransmittedReflected {
  QuantumState chi_t, chi_r;
  std::optional<QuantumState> chi_b;  // remainder inside the barrier, if any
  cplx p_t, p_r, p_b;                 // <chi_n|psi(t_f)>
  double residual;                    // |p_b|^2
};

inline constexpr double kBarrierBudget = 1e-3;

// Half-line projections of psi(t_f) beyond [b_lo, b_hi); throws TimingError
// when more than kBarrierBudget of the norm remains inside.
TransmittedReflected postselect_transmitted_reflected(const QuantumState& psi_final, double b_lo,
                                                      double b_hi);

struct ResultRow {
  std::string scenario;
  std::string method;
  std::string postselection;
  int l = 1;
  double value = 0.0;
  double tolerance = 0.0;
  double residual = 0.0;
  std::string flags;

  // NaN compares equal to NaN.
  bool operator==(const ResultRow&) const;
};

struct SweepData {
  std::string method;
  std::string postselection;
  std::vector<double> strengths;
  std::vector<cplx> readouts;
  cplx value;
  double order = 0.0;
  double residual = 0.0;

  bool operator==(const SweepData&) const;
};

struct ResultBundle {
  std::string scenario;
  std::string config_hash;
  std::string version;
  std::vector<std::string> warnings;
  std::vector<ResultRow> rows;
  std::vector<SweepData> sweeps;

  bool operator==(const ResultBundle&) const = default;
  const ResultRow* find(const std::string& method, const std::string& post, int l = 1) const;
};

ResultBundle run_scenario(const Scenario& s);

enum class Format { csv, json };

std::string to_csv(const ResultBundle& b);
std::string to_json(const ResultBundle& b);
ResultBundle bundle_from_json(const std::string& text);
// Writes <out_dir>/<scenario>.<csv|json>; returns the path.
std::filesystem::path emit(const ResultBundle& b, Format f, const std::filesystem::path& out_dir);

const char* library_version();

}  // namespace weaktime
