#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dpf/dynamics.hpp"
#include "dpf/error.hpp"
#include "dpf/random.hpp"

using namespace dpf;

namespace {

FingerGeometry finger(const std::vector<double>& H, double t = 0.8) {
  UnitCellGeometry u;
  u.t = t;
  return FingerGeometry::from_heights(H, u, MaterialProps::ninjaflex());
}

// Point mass on a linear spring along x.
LatticeModel oscillator(double k, double mass, double eta_iso = 0) {
  LatticeModel m;
  m.add_node(0, 0);
  m.add_node(10, 0, false, mass);
  m.add_spring(ElementKind::Linear, 0, 1, k);
  m.fix_node(0);
  m.fix_dof(3);
  m.tip_node = 1;
  m.probe_ref_node = 0;
  m.eta_isotropic = eta_iso;
  return m;
}

double mechanical_energy(const LatticeModel& m, const SystemState& s) {
  return total_energy(m, s.q) + kinetic_energy(m, s.v);
}

}  // namespace

TEST_SUITE("dynamics") {
  TEST_CASE("pressure profiles") {
    const auto p = PressureProfile::ramp_hold_release(0.1, 0.2, 0.5, 0.1, 0.3);
    CHECK_NOTHROW(p.validate());
    CHECK(p.at(0.0) == 0.0);
    CHECK(p.at(0.4) == doctest::Approx(0.05));
    CHECK(p.at(0.7) == doctest::Approx(0.1));
    CHECK(p.at(5.0) == 0.0);
    CHECK(p.release_time() == doctest::Approx(1.1));
    CHECK(p.tau1 == 0.2);
    CHECK(p.tau2 == 0.5);
    CHECK(PressureProfile::zero(2.0).release_time() == 0.0);
    PressureProfile bad;
    bad.times = {0.0, 1.0, 0.5};
    bad.pressures = {0, 0, 0};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.times = {0.0, 1.0};
    bad.pressures = {0.0, -1.0};
    CHECK_THROWS_AS(bad.validate(), Error);
  }

  TEST_CASE("pressure forces") {
    LatticeModel m;
    m.add_node(0, 0);
    m.add_node(15, 0);
    m.pressure_faces.push_back(PressureFace{0, 1, 15.0});
    const Vec q = m.rest_coordinates();
    CHECK(external_pressure_force(m, q, 0.0).isZero(0.0));
    const Vec f = external_pressure_force(m, q, 0.1);
    CHECK(std::hypot(f[0] + f[2], f[1] + f[3]) == doctest::Approx(22.5));
    CHECK(f[0] == doctest::Approx(f[2]));
    CHECK(f[1] == doctest::Approx(f[3]));
    const auto fm = build_lattice(finger({4.0, 4.5, 5.0}));
    Rng rng(4);
    Vec r = fm.rest_coordinates();
    for (int i = 0; i < r.size(); ++i) r[i] += rng.uniform(-0.3, 0.3);
    CHECK((external_pressure_force(fm, r, 0.2) - 2.0 * external_pressure_force(fm, r, 0.1)).isZero(0.0));
  }

  TEST_CASE("damping forces") {
    const auto m = build_lattice(finger({4.0, 4.5, 5.0}));
    const Vec q = m.rest_coordinates();
    CHECK(damping_forces(m, q, Vec::Zero(q.size())).isZero(0.0));
    Vec v(q.size());
    for (int i = 0; i < v.size(); i += 2) {
      v[i] = 2.0;
      v[i + 1] = -1.0;
    }
    const Vec f = damping_forces(m, q, v);
    for (int i = 0; i < v.size(); ++i) CHECK(f[i] == doctest::Approx(m.eta_isotropic * v[i]));
    Rng rng(17);
    for (int k = 0; k < 1000; ++k) {
      Vec qq = q, vv(q.size());
      for (int i = 0; i < q.size(); ++i) {
        qq[i] += rng.uniform(-0.5, 0.5);
        vv[i] = rng.uniform(-10, 10);
      }
      CHECK(vv.dot(damping_forces(m, qq, vv)) >= 0.0);
    }
  }

  TEST_CASE("undamped oscillator period and energy") {
    const double k = 2.0, mass = 1e-3;
    const auto m = oscillator(k, mass);
    SystemState s0 = rest_state(m);
    s0.q[2] += 0.5;
    const double T = 2 * std::numbers::pi * std::sqrt(mass / k);
    DynamicsOptions o;
    o.dt_out = T / 200;
    const auto sim = integrate(m, s0, PressureProfile::zero(10.5 * T), 10.5 * T, o);
    const auto& tr = sim.trajectory;
    std::vector<double> up;
    for (std::size_t i = 1; i < tr.times.size(); ++i) {
      const double a = tr.states[i - 1].q[2] - 10, b = tr.states[i].q[2] - 10;
      if (a < 0 && b >= 0) up.push_back(tr.times[i - 1] + (tr.times[i] - tr.times[i - 1]) * (-a) / (b - a));
    }
    REQUIRE(up.size() >= 10);
    const double period = (up.back() - up.front()) / static_cast<double>(up.size() - 1);
    CHECK(std::abs(period - T) / T < 1e-3);
    const double E0 = mechanical_energy(m, tr.states.front());
    for (const auto& s : tr.states) CHECK(std::abs(mechanical_energy(m, s) - E0) <= 1e-6 * E0);
  }

  TEST_CASE("damped unforced energy never increases") {
    const auto m = build_lattice(finger({4.5, 4.5, 4.5}));
    SystemState s0 = rest_state(m);
    Rng rng(21);
    for (int i : m.free_dofs()) s0.q[i] += rng.uniform(-0.2, 0.2);
    DynamicsOptions o;
    o.dt_out = 1e-3;
    const auto sim = integrate(m, s0, PressureProfile::zero(0.05), 0.05, o);
    double prev = mechanical_energy(m, sim.trajectory.states.front());
    for (const auto& s : sim.trajectory.states) {
      const double E = mechanical_energy(m, s);
      CHECK(E <= prev * (1 + 1e-8) + 1e-12);
      prev = E;
    }
  }

  TEST_CASE("zero load keeps the finger at rest") {
    const auto m = build_lattice(finger({4.5, 5.0}));
    DynamicsOptions o;
    o.dt_out = 0.01;
    const auto sim = integrate(m, rest_state(m), PressureProfile::zero(0.2), 0.2, o);
    CHECK(sim.log.events.empty());
    for (const auto& s : sim.trajectory.states)
      CHECK((s.q - m.rest_coordinates()).lpNorm<Eigen::Infinity>() < 1e-12);
  }

  TEST_CASE("five bistable units snap once each and settle on the static minimum") {
    const auto f = finger({5.0, 5.0, 5.0, 5.0, 5.0});
    const auto m = build_lattice(f);
    DynamicsOptions o;
    o.dt_out = 0.01;
    o.mass_scale = 1000;
    const auto load = PressureProfile::ramp_hold_release(0.1, 0.1, 0.5, 0.05);
    const auto sim = integrate(m, rest_state(m), load, 4.0, o);
    std::vector<int> through(5, 0);
    for (const auto& e : sim.log.events) {
      CHECK(e.kind == EventKind::SnapThrough);
      through[e.unit]++;
    }
    for (int c : through) CHECK(c == 1);
    const Vec qf = sim.trajectory.states.back().q;
    const auto ref = solve_pattern(m, all_inverted(5));
    CHECK((qf - ref.q).lpNorm<Eigen::Infinity>() < 1e-2);
    CHECK((minimize_energy(m, qf).q - qf).lpNorm<Eigen::Infinity>() < 1e-3);
    CHECK(resetting_time(sim.trajectory, sim.log, 0) == std::nullopt);
  }

  TEST_CASE("resetting time of a unit that never snapped") {
    const auto m = build_lattice(finger({4.5}));
    DynamicsOptions o;
    o.dt_out = 0.01;
    const auto sim = integrate(m, rest_state(m), PressureProfile::zero(0.1), 0.1, o);
    try {
      resetting_time(sim.trajectory, sim.log, 0);
      FAIL("expected UnitNeverSnapped");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnitNeverSnapped);
    }
  }

  TEST_CASE("metastable unit snaps back after release and events alternate") {
    const auto f = finger({3.0}, 0.9);
    const auto m = build_lattice(f);
    DynamicsOptions o;
    o.dt_out = 0.01;
    o.mass_scale = 1000;
    o.relaxation = {true, 0.5, 0.3};
    const auto load = PressureProfile::ramp_hold_release(0.1, 0.1, 0.5, 0.05);
    const auto sim = integrate(m, rest_state(m), load, load.release_time() + 10, o);
    REQUIRE(sim.log.events.size() == 2);
    CHECK(sim.log.events[0].kind == EventKind::SnapThrough);
    CHECK(sim.log.events[1].kind == EventKind::SnapBack);
    const auto rt = resetting_time(sim.trajectory, sim.log, 0);
    REQUIRE(rt);
    CHECK(*rt > 0);
    CHECK(classify_dynamic(f.units[0], f.material, load, load.release_time() + 10, o) ==
          Stability::Metastable);
  }

  TEST_CASE("stiffness of a single linear spring") {
    const auto m = oscillator(3.0, 1e-3);
    StableState s;
    s.q = m.rest_coordinates();
    const auto r = stiffness_at_state(m, s);
    CHECK(std::abs(r.stiffness - 3.0) / 3.0 < 5e-3);
    CHECK(r.r2_of_fit > 0.999);
    CHECK(r.displacement.size() == r.force.size());
  }

  TEST_CASE("stiffness is positive and grows with the limiting layer thickness") {
    auto f = finger({4.1, 4.3, 4.9}, 0.62);
    double prev = 0;
    for (double t_lim : {1.0, 1.5, 2.0}) {
      for (auto& u : f.units) u.t_lim = t_lim;
      const auto m = build_lattice(f);
      const auto s = solve_pattern(m, all_inverted(3));
      const double K = stiffness_at_state(m, s).stiffness;
      CHECK(K > prev);
      prev = K;
    }
  }
}
