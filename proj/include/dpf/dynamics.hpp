#pragma once

#include <optional>
#include <vector>

#include "dpf/lattice.hpp"
#include "dpf/statics.hpp"

namespace dpf {

struct PressureProfile {
  std::vector<double> times;      // s, strictly increasing
  std::vector<double> pressures;  // MPa, >= 0
  double tau1 = 0;                // ramp time
  double tau2 = 0;                // hold time

  void validate() const;
  double at(double t) const;
  // Last time the pressure returns to zero; 0 for an all-zero profile.
  double release_time() const;

  static PressureProfile zero(double t_end);
  static PressureProfile ramp_hold_release(double peak, double tau1, double tau2,
                                           double tau_down, double t0 = 0.0);
};

// Optional creep of the dome springs: a fraction of k_b is referenced to an
// internal extension z with dz/dt = (xbar - z) / time_constant.
struct Relaxation {
  bool enabled = false;
  double fraction = 0.5;
  double time_constant = 0.5;  // s
};

struct DynamicsOptions {
  double rtol = 1e-6;
  double atol = 1e-9;
  double dt_out = 1e-3;     // s
  double min_step = 1e-12;  // s
  double max_step = 1e-3;   // s
  double mass_scale = 1.0;
  Relaxation relaxation;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<SystemState> states;
  std::vector<double> energies;   // kinetic + potential, N mm
  std::vector<double> pressures;  // MPa
  std::vector<std::vector<double>> creep;  // internal extensions, empty when relaxation is off
  double release_time = 0;
};

enum class EventKind { SnapThrough, SnapBack };
const char* to_string(EventKind k);

struct Event {
  int unit = 0;
  EventKind kind = EventKind::SnapThrough;
  double time = 0;
};

struct EventLog {
  std::vector<Event> events;
};

struct Simulation {
  Trajectory trajectory;
  EventLog log;
};

Vec external_pressure_force(const LatticeModel& m, const Vec& q, double p);
Vec external_pressure_force(const LatticeModel& m, const SystemState& s, double p);
Vec damping_forces(const LatticeModel& m, const Vec& q, const Vec& v);
Vec damping_forces(const LatticeModel& m, const SystemState& s);

double kinetic_energy(const LatticeModel& m, const Vec& v, double mass_scale = 1.0);

// Integrates M a + F_d + grad E = F_ext from s0 until t_end.
Simulation integrate(const LatticeModel& m, const SystemState& s0, const PressureProfile& load,
                     double t_end, const DynamicsOptions& opt = {});

SystemState rest_state(const LatticeModel& m);

// Time from load release to the unit's first snap-back after it; nullopt when
// the unit stays inverted until the end of the trajectory.
std::optional<double> resetting_time(const Trajectory& traj, const EventLog& log, int unit);

struct StiffnessOptions {
  double rate = 5.0;          // mm/min, sets the time axis of the samples
  double max_displacement = 0.1;  // mm
  int steps = 10;
  MinimizeOptions minimize;
};

struct StiffnessResult {
  double stiffness = 0;  // N/mm
  double r2_of_fit = 0;
  std::vector<double> displacement;  // mm
  std::vector<double> force;         // N
  std::vector<double> time;          // s
};

// Quasi-static follower force along (tip - probe_ref) applied in load steps.
StiffnessResult stiffness_at_state(const LatticeModel& m, const StableState& s,
                                   const StiffnessOptions& opt = {});

// Single-unit dynamic refinement of the static class: Metastable when the unit
// snaps through under `load` and back after release.
Stability classify_dynamic(const UnitCellGeometry& g, const MaterialProps& mat,
                           const PressureProfile& load, double t_end,
                           const DynamicsOptions& opt = {}, const LatticeLayout& layout = {});

}  // namespace dpf
