#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dpf/dynamics.hpp"
#include "dpf/statics.hpp"

namespace dpf {

struct Range {
  double lo = 0, hi = 1;
  bool contains(double v, double tol = 1e-12) const { return v >= lo - tol && v <= hi + tol; }
  double at(double u) const { return lo + (hi - lo) * u; }
  double unit(double v) const { return (v - lo) / (hi - lo); }
};

struct DesignSpace {
  Range H{3.0, 5.0};
  Range U_sep{1.0, 5.0};
  Range U_L{5.5, 10.0};
  Range t{0.5, 1.0};
  Range t_lim{1.0, 2.0};
  Range base_length{20.0, 60.0};  // mm
  Range base_angle{0.0, 1.0};     // rad
  int max_segments = 8;
  UnitCellGeometry prototype;     // UC, r_b, t_ch, W_ch, t_mid and fixed fields
  MaterialProps material;
  LatticeLayout layout;

  void validate() const;
};

enum class ObjectiveKind { PositionOnly, PositionStiffness, DynamicReset, MultiAperture };
const char* to_string(ObjectiveKind k);
ObjectiveKind objective_kind_from_string(const std::string& s);

// Dome height order from base to tip.
enum class HeightOrder { NonIncreasing, NonDecreasing, Equal };

// Membership test for the metastable set: statically monostable with
// alpha <= max_alpha, snaps through under `load` and back after release.
struct MetastableTest {
  PressureProfile load = PressureProfile::ramp_hold_release(0.1, 0.1, 0.5, 0.05);
  double t_after_release = 4.0;  // s
  double max_alpha = 0.25;
  DynamicsOptions dynamics;
  MetastableTest();
};

struct ResetSpec {
  std::vector<double> fixed_heights{4.0, 4.5, 5.0, 5.0};  // bistable base units
  int metastable_units = 2;
  PressureProfile profile1 = PressureProfile::ramp_hold_release(0.1, 0.1, 0.5, 0.05);
  PressureProfile profile2 = PressureProfile::ramp_hold_release(0.1, 0.1, 2.0, 0.05);
  double t_after_release = 15.0;  // s
  std::optional<double> target_rt;  // s, replaces the RT difference term
  DynamicsOptions dynamics;
  ResetSpec();
};

struct Objective {
  ObjectiveKind kind = ObjectiveKind::PositionOnly;
  double target_x = 0, target_y = 0;  // mm
  // PositionOnly {w1}; PositionStiffness {w1, w2}; DynamicReset {w_stiffness, w_rt};
  // MultiAperture {w_1 .. w_N, w_stiffness}. Missing entries default to 1.
  std::vector<double> weights;
  double stiffness_ref = 0.1;  // N/mm, stiffness terms use (stiffness_ref / K)^2
  StiffnessOptions stiffness;
  std::vector<double> object_sizes;  // mm, one per sequential activation state
  int metastable_tail = 1;           // MultiAperture units at the tip required in G_M
  MetastableTest metastable;
  ResetSpec reset;

  double weight(std::size_t i) const { return i < weights.size() ? weights[i] : 1.0; }
  HeightOrder order() const;
  void validate() const;
};

struct Candidate {
  FingerGeometry finger;
  double base_length = 0;  // MultiAperture only
  double base_angle = 0;   // rad
};

struct Diagnostics {
  double tip_x = 0, tip_y = 0;
  double tip_error = 0;  // mm
  std::optional<double> stiffness;  // N/mm
  std::optional<double> rt1, rt2;   // s
  std::vector<double> apertures;    // mm
  std::string pattern;
};

struct Evaluation {
  double value = 0;
  Diagnostics diag;
};

// Metastable membership with results memoised on a 1e-6 mm grid.
class MetastableCache {
 public:
  bool contains(const UnitCellGeometry& g, const MaterialProps& mat, const MetastableTest& test,
                const LatticeLayout& layout);

 private:
  std::mutex mu_;
  std::map<std::array<long long, 2>, bool> memo_;
};

// Throws ConstraintViolation for bounds, ordering or equal-spacing breaches and
// InfeasibleState when a required state does not exist.
void check_constraints(const Objective& obj, const DesignSpace& space, const Candidate& c);
Evaluation evaluate_objective(const Objective& obj, const DesignSpace& space, const Candidate& c,
                              MetastableCache* cache = nullptr);

// Tip of a right-hand finger mounted at x = base_length / 2 and tilted
// outwards by base_angle; the aperture is twice its lateral coordinate.
double aperture(const Candidate& c, const LatticeModel& m, const Vec& q);
// States are numbered by how many bistable units are inverted, lowest domes first.
double aperture(const Candidate& c, int state, const LatticeLayout& layout = {},
                int metastable_tail = 0);
ActivationPattern sequential_pattern(const FingerGeometry& f, int state, int metastable_tail);

// Unit-cube parameterisation of the candidates for one objective and size.
class DesignEncoding {
 public:
  DesignEncoding(const Objective& obj, const DesignSpace& space, int n);
  std::size_t dim() const { return dim_; }
  int segments() const { return n_; }
  std::vector<double> project(std::vector<double> x) const;
  Candidate decode(const std::vector<double>& x) const;
  std::vector<double> encode(const Candidate& c) const;
  std::vector<std::string> names() const;

 private:
  Objective obj_;
  DesignSpace space_;
  int n_ = 0;
  std::size_t heights_ = 0;
  std::size_t dim_ = 0;
};

struct EvalRecord {
  std::vector<double> x;  // projected unit-cube point
  double value = 0;       // +inf when infeasible
  bool feasible = false;
  double best_so_far = 0;
  std::string note;
};

enum class Strategy { Bayesian, Random };

struct OptimizerOptions {
  Strategy strategy = Strategy::Bayesian;
  int budget = 300;
  int initial = 0;           // 0: max(10, 2 dim + 1)
  int candidates = 256;      // random acquisition starts
  int refine_starts = 3;     // Nelder-Mead refinements of the best starts
  int refit_every = 10;
  double local_fraction = 0.25;  // budget share of the final local polish
  double xi = 0.01;
  std::uint64_t seed = 42;
  unsigned threads = 0;
};

using UnitObjective = std::function<EvalRecord(const std::vector<double>&)>;
using Projection = std::function<std::vector<double>(std::vector<double>)>;

// Minimises over [0,1]^dim. Infeasible records carry value +inf.
std::vector<EvalRecord> minimize_box(const UnitObjective& f, std::size_t dim,
                                     const Projection& project, const OptimizerOptions& opt);

struct DesignResult {
  int segments = 0;
  Candidate best;
  std::vector<double> best_x;
  double objective = 0;
  Diagnostics diag;
  int evaluations = 0;
  int feasible_evaluations = 0;
  std::vector<EvalRecord> trace;
  std::vector<std::string> names;
};

DesignResult bayesian_optimize(const Objective& obj, const DesignSpace& space, int n,
                               const OptimizerOptions& opt);

struct SweepEntry {
  int segments = 0;
  std::optional<DesignResult> result;
  std::string error;
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  int best_segments = 0;
  double tie_abs = 0.1, tie_rel = 0.05;
  const DesignResult& best() const;
};

// Independent optimisations per n; the selected n is the smallest whose
// objective lies within max(tie_abs, tie_rel * min) of the overall minimum.
SweepResult segment_sweep(const Objective& obj, const DesignSpace& space, int min_n, int max_n,
                          const OptimizerOptions& opt, double tie_abs = 0.1, double tie_rel = 0.05);

}  // namespace dpf
