#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "dpf/dynamics.hpp"
#include "dpf/inverse.hpp"
#include "dpf/regression.hpp"
#include "dpf/statics.hpp"

namespace dpf::cli {

using Json = nlohmann::ordered_json;

// Parses JSON with // and /* */ comments. Syntax errors name line and column.
Json parse_config_text(const std::string& text, const std::string& origin);
Json load_config(const std::string& path);

// Field access with dotted-path diagnostics; unknown keys are rejected.
class Section {
 public:
  Section(const Json& j, std::string path);
  static Section child_or_empty(const Json& parent, const std::string& key, const std::string& path);

  bool has(const std::string& key) const;
  double number(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  std::string string(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const;
  Section child(const std::string& key) const;
  const Json& raw() const { return j_; }
  const std::string& path() const { return path_; }
  void allow(std::initializer_list<const char*> keys) const;

 private:
  const Json& field(const std::string& key) const;
  std::string at(const std::string& key) const;

  const Json& j_;
  std::string path_;
};

MaterialProps parse_material(const Json& root);
UnitCellGeometry parse_unit(const Json& root, bool require_height = true);
FingerGeometry parse_finger(const Json& root);
LatticeLayout parse_layout(const Json& root);
MinimizeOptions parse_minimize(const Json& root);
EnumerateOptions parse_enumerate(const Json& root);
PressureProfile parse_pressure(const Section& s);
DynamicsOptions parse_dynamics(const Section& s);

struct SimulateConfig {
  PressureProfile pressure;
  double t_end = 0;
  DynamicsOptions dynamics;
};
SimulateConfig parse_simulate(const Json& root);

struct MapConfig {
  double H_lo = 2.0, H_hi = 5.0;
  int H_steps = 31;
  double t_lo = 0.5, t_hi = 1.2;
  int t_steps = 15;
};
MapConfig parse_map(const Json& root);

struct FitConfig {
  std::string dataset;
  TargetKind target = TargetKind::Alpha;
  int n = 3, m = 2;
  double train_fraction = 0.7;
  RegressionOptions regression;
  std::size_t synthetic_rows = 0;
  double synthetic_noise = 0;
};
FitConfig parse_fit(const Json& root);

struct DesignConfig {
  Objective objective;
  DesignSpace space;
  OptimizerOptions optimizer;
  int min_segments = 1, max_segments = 8;
  double tie_abs = 0.1, tie_rel = 0.05;
};
DesignConfig parse_design(const Json& root);

// Config document reproducing a candidate: material, unit, finger, layout and,
// for grippers, the gripper section.
Json geometry_document(const Candidate& c, const LatticeLayout& layout);

}  // namespace dpf::cli
