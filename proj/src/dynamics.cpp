#include "dpf/dynamics.hpp"

#include <algorithm>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <sstream>

namespace dpf {

namespace ode = boost::numeric::odeint;

namespace {

using State = std::vector<double>;

Eigen::Vector2d pos(const Vec& q, int i) { return {q[2 * i], q[2 * i + 1]}; }

// Potential energy and gradient with the optional creep term on the dome springs.
struct Potential {
  const LatticeModel& m;
  double phi = 0;

  double energy(const Vec& q, const double* z) const {
    double e = total_energy(m, q);
    if (phi == 0) return e;
    for (std::size_t k = 0; k < m.nonlinear_elements.size(); ++k) {
      const auto& el = m.elements[m.nonlinear_elements[k]];
      const double x = element_length(m, q, m.nonlinear_elements[k]) - el.rest_length;
      e += phi * (0.5 * el.k * (x - z[k]) * (x - z[k]) - nonlinear_energy(x, el.k, el.alpha, el.d));
    }
    return e;
  }

  Vec gradient(const Vec& q, const double* z) const {
    Vec g = energy_gradient(m, q);
    if (phi == 0) return g;
    for (std::size_t k = 0; k < m.nonlinear_elements.size(); ++k) {
      const auto& el = m.elements[m.nonlinear_elements[k]];
      const int i = el.nodes[0], j = el.nodes[1];
      const Eigen::Vector2d x = pos(q, i) - pos(q, j);
      const double L = x.norm();
      const double xb = L - el.rest_length;
      const double f = phi * (el.k * (xb - z[k]) - nonlinear_force(xb, el.k, el.alpha, el.d));
      g.segment<2>(2 * i) += f * x / L;
      g.segment<2>(2 * j) -= f * x / L;
    }
    return g;
  }
};

struct Rhs {
  const LatticeModel& m;
  const PressureProfile& load;
  Potential pot;
  std::vector<char> mask;
  Vec inv_mass;
  double tau = 1;
  int n2 = 0;

  // Net force F_ext - F_d - grad E in one pass over the elements.
  void forces(const double* q, const double* v, const double* z, double p, double* f) const {
    const double eta = m.eta_internal;
    for (int i = 0; i < n2; ++i) f[i] = -m.eta_isotropic * v[i];
    std::size_t k_nl = 0;
    for (const auto& el : m.elements) {
      if (el.kind == ElementKind::Torsional) {
        const int c = el.nodes[0], a = el.nodes[1], b = el.nodes[2];
        const double e0x = q[2 * a] - q[2 * c], e0y = q[2 * a + 1] - q[2 * c + 1];
        const double e1x = q[2 * b] - q[2 * c], e1y = q[2 * b + 1] - q[2 * c + 1];
        const double l0 = e0x * e0x + e0y * e0y, l1 = e1x * e1x + e1y * e1y;
        const double th = std::atan2(e0x * e1y - e0y * e1x, e0x * e1x + e0y * e1y);
        const double tq = el.k * std::remainder(th - el.rest_angle, 2.0 * M_PI);
        const double gax = e0y / l0, gay = -e0x / l0, gbx = -e1y / l1, gby = e1x / l1;
        f[2 * a] -= tq * gax;
        f[2 * a + 1] -= tq * gay;
        f[2 * b] -= tq * gbx;
        f[2 * b + 1] -= tq * gby;
        f[2 * c] += tq * (gax + gbx);
        f[2 * c + 1] += tq * (gay + gby);
        continue;
      }
      const int i = el.nodes[0], j = el.nodes[1];
      const double xx = q[2 * i] - q[2 * j], xy = q[2 * i + 1] - q[2 * j + 1];
      const double L = std::sqrt(xx * xx + xy * xy);
      if (L < 1e-9) throw Error(ErrorCode::DegenerateElement, "coincident nodes");
      const double xb = L - el.rest_length;
      double fs;
      if (el.kind == ElementKind::Nonlinear) {
        fs = nonlinear_force(xb, el.k, el.alpha, el.d);
        if (pot.phi != 0) fs += pot.phi * (el.k * (xb - z[k_nl]) - fs);
        ++k_nl;
      } else {
        fs = el.k * xb;
      }
      double fx = fs * xx / L, fy = fs * xy / L;
      if (eta != 0) {
        const double dvx = v[2 * i] - v[2 * j], dvy = v[2 * i + 1] - v[2 * j + 1];
        const double s = el.rest_length;
        const double a1 = 1.0 - s / L, a2 = s / (L * L * L) * (xx * dvx + xy * dvy);
        fx += eta * (a1 * dvx + a2 * xx);
        fy += eta * (a1 * dvy + a2 * xy);
      }
      f[2 * i] -= fx;
      f[2 * i + 1] -= fy;
      f[2 * j] += fx;
      f[2 * j + 1] += fy;
    }
    if (p != 0) {
      for (const auto& face : m.pressure_faces) {
        const double ex = q[2 * face.b] - q[2 * face.a], ey = q[2 * face.b + 1] - q[2 * face.a + 1];
        const double Fx = 0.5 * p * face.width * ey, Fy = -0.5 * p * face.width * ex;
        f[2 * face.a] += Fx;
        f[2 * face.a + 1] += Fy;
        f[2 * face.b] += Fx;
        f[2 * face.b + 1] += Fy;
      }
    }
  }

  void operator()(const State& y, State& dy, double t) const {
    const double* q = y.data();
    const double* v = y.data() + n2;
    const double* z = y.data() + 2 * n2;
    forces(q, v, z, load.at(t), dy.data() + n2);
    for (int i = 0; i < n2; ++i) {
      dy[i] = mask[i] ? 0.0 : v[i];
      dy[n2 + i] *= inv_mass[i];
    }
    const std::size_t nz = y.size() - 2 * static_cast<std::size_t>(n2);
    for (std::size_t k = 0; k < nz; ++k) {
      const auto& el = m.elements[m.nonlinear_elements[k]];
      const int i = el.nodes[0], j = el.nodes[1];
      const double x = std::hypot(q[2 * i] - q[2 * j], q[2 * i + 1] - q[2 * j + 1]) - el.rest_length;
      dy[2 * n2 + k] = (x - z[k]) / tau;
    }
  }
};

}  // namespace

const char* to_string(EventKind k) {
  return k == EventKind::SnapThrough ? "SnapThrough" : "SnapBack";
}

void PressureProfile::validate() const {
  if (times.empty() || times.size() != pressures.size())
    throw Error(ErrorCode::InvalidInput, "pressure profile needs matching time and pressure samples");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(pressures[i] >= 0)) throw Error(ErrorCode::InvalidInput, "pressures must be non-negative");
    if (i > 0 && !(times[i] > times[i - 1]))
      throw Error(ErrorCode::InvalidInput, "profile times must be strictly increasing");
  }
}

double PressureProfile::at(double t) const {
  if (times.empty()) return 0;
  if (t <= times.front()) return pressures.front();
  if (t >= times.back()) return pressures.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - times.begin());
  const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
  return pressures[i - 1] + w * (pressures[i] - pressures[i - 1]);
}

double PressureProfile::release_time() const {
  double t = 0;
  for (std::size_t i = 1; i < times.size(); ++i)
    if (pressures[i] == 0 && pressures[i - 1] > 0) t = times[i];
  return t;
}

PressureProfile PressureProfile::zero(double t_end) {
  PressureProfile p;
  p.times = {0.0, t_end};
  p.pressures = {0.0, 0.0};
  return p;
}

PressureProfile PressureProfile::ramp_hold_release(double peak, double tau1, double tau2,
                                                   double tau_down, double t0) {
  PressureProfile p;
  p.tau1 = tau1;
  p.tau2 = tau2;
  p.times = {0.0};
  p.pressures = {0.0};
  if (t0 > 0) {
    p.times.push_back(t0);
    p.pressures.push_back(0.0);
  }
  p.times.insert(p.times.end(), {t0 + tau1, t0 + tau1 + tau2, t0 + tau1 + tau2 + tau_down});
  p.pressures.insert(p.pressures.end(), {peak, peak, 0.0});
  p.validate();
  return p;
}

Vec external_pressure_force(const LatticeModel& m, const Vec& q, double p) {
  Vec f = Vec::Zero(q.size());
  if (p == 0) return f;
  for (const auto& face : m.pressure_faces) {
    const Eigen::Vector2d e = pos(q, face.b) - pos(q, face.a);
    // p * |e| * width along the unit normal (e_y, -e_x) / |e|.
    const Eigen::Vector2d F = p * face.width * Eigen::Vector2d(e.y(), -e.x());
    f.segment<2>(2 * face.a) += 0.5 * F;
    f.segment<2>(2 * face.b) += 0.5 * F;
  }
  return f;
}

Vec external_pressure_force(const LatticeModel& m, const SystemState& s, double p) {
  return external_pressure_force(m, s.q, p);
}

Vec damping_forces(const LatticeModel& m, const Vec& q, const Vec& v) {
  Vec f = m.eta_isotropic * v;
  if (m.eta_internal == 0) return f;
  for (const auto& el : m.elements) {
    if (el.kind == ElementKind::Torsional) continue;
    const int i = el.nodes[0], j = el.nodes[1];
    const Eigen::Vector2d x = pos(q, i) - pos(q, j);
    const Eigen::Vector2d dv = pos(v, i) - pos(v, j);
    const double L = x.norm();
    if (L < 1e-9) throw Error(ErrorCode::DegenerateElement, "coincident nodes in damper");
    const double s = el.rest_length;
    const Eigen::Vector2d F =
        m.eta_internal * ((1.0 - s / L) * dv + s / (L * L * L) * x.dot(dv) * x);
    f.segment<2>(2 * i) += F;
    f.segment<2>(2 * j) -= F;
  }
  return f;
}

Vec damping_forces(const LatticeModel& m, const SystemState& s) {
  return damping_forces(m, s.q, s.v);
}

double kinetic_energy(const LatticeModel& m, const Vec& v, double mass_scale) {
  double k = 0;
  for (std::size_t i = 0; i < m.nodes.size(); ++i)
    k += 0.5 * mass_scale * m.masses[i] * (v[2 * i] * v[2 * i] + v[2 * i + 1] * v[2 * i + 1]);
  return k;
}

SystemState rest_state(const LatticeModel& m) {
  SystemState s;
  s.q = m.rest_coordinates();
  s.v = Vec::Zero(s.q.size());
  return s;
}

Simulation integrate(const LatticeModel& m, const SystemState& s0, const PressureProfile& load,
                     double t_end, const DynamicsOptions& opt) {
  if (!(t_end > s0.time)) throw Error(ErrorCode::InvalidInput, "t_end must exceed the start time");
  load.validate();
  const int n2 = static_cast<int>(m.dof());
  if (s0.q.size() != n2 || s0.v.size() != n2)
    throw Error(ErrorCode::InvalidInput, "state size does not match the model");
  const bool relax = opt.relaxation.enabled;
  const std::size_t nz = relax ? m.nonlinear_elements.size() : 0;

  Rhs rhs{m, load, Potential{m, relax ? opt.relaxation.fraction : 0.0}, m.fixed_mask(),
          Vec(n2), relax ? opt.relaxation.time_constant : 1.0, n2};
  for (int i = 0; i < n2; ++i) {
    const double mass = m.masses[i / 2] * opt.mass_scale;
    if (!rhs.mask[i] && !(mass > 0))
      throw Error(ErrorCode::InvalidInput, "free node without mass");
    rhs.inv_mass[i] = rhs.mask[i] ? 0.0 : 1.0 / mass;
  }

  State y(2 * n2 + nz);
  for (int i = 0; i < n2; ++i) {
    y[i] = s0.q[i];
    y[n2 + i] = rhs.mask[i] ? 0.0 : s0.v[i];
  }
  const auto ext0 = dome_extensions(m, s0.q);
  for (std::size_t k = 0; k < nz; ++k) y[2 * n2 + k] = ext0[k];

  std::vector<double> threshold;
  std::vector<char> inverted;
  for (std::size_t k = 0; k < m.nonlinear_elements.size(); ++k) {
    const auto& el = m.elements[m.nonlinear_elements[k]];
    threshold.push_back(snap_threshold(el.alpha, el.d));
    inverted.push_back(ext0[k] > threshold.back());
  }

  Simulation sim;
  auto& tr = sim.trajectory;
  tr.release_time = load.release_time();

  auto record = [&](double t, const State& x) {
    SystemState s;
    s.q = Eigen::Map<const Vec>(x.data(), n2);
    s.v = Eigen::Map<const Vec>(x.data() + n2, n2);
    s.time = t;
    tr.energies.push_back(rhs.pot.energy(s.q, x.data() + 2 * n2) +
                          kinetic_energy(m, s.v, opt.mass_scale));
    tr.pressures.push_back(load.at(t));
    if (nz) tr.creep.emplace_back(x.begin() + 2 * n2, x.end());
    tr.times.push_back(t);
    tr.states.push_back(std::move(s));
  };
  auto extensions = [&](const State& x) {
    return dome_extensions(m, Eigen::Map<const Vec>(x.data(), n2));
  };

  double max_dt = opt.max_step;
  for (std::size_t i = 1; i < load.times.size(); ++i)
    max_dt = std::min(max_dt, 0.25 * (load.times[i] - load.times[i - 1]));
  auto stepper = ode::make_dense_output(opt.atol, opt.rtol, max_dt, ode::runge_kutta_dopri5<State>());

  const double t0 = s0.time;
  stepper.initialize(y, t0, std::min(1e-7, max_dt));
  record(t0, y);
  std::size_t k_out = 1;
  State x(y.size());

  while (stepper.current_time() < t_end) {
    std::pair<double, double> span;
    try {
      span = stepper.do_step(rhs);
    } catch (const ode::step_adjustment_error& e) {
      throw Error(ErrorCode::StepSizeUnderflow, e.what());
    }
    if (stepper.current_time_step() < opt.min_step) {
      std::ostringstream os;
      os << "step " << stepper.current_time_step() << " s at t = " << stepper.current_time();
      throw Error(ErrorCode::StepSizeUnderflow, os.str());
    }
    const auto cur_ext = extensions(stepper.current_state());
    for (std::size_t k = 0; k < cur_ext.size(); ++k) {
      const bool now = cur_ext[k] > threshold[k];
      if (now == static_cast<bool>(inverted[k])) continue;
      // Bisect the crossing on the dense output.
      double lo = span.first, hi = span.second;
      for (int it = 0; it < 60 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        stepper.calc_state(mid, x);
        const bool side = extensions(x)[k] > threshold[k];
        (side == now ? hi : lo) = mid;
      }
      sim.log.events.push_back(
          Event{static_cast<int>(k), now ? EventKind::SnapThrough : EventKind::SnapBack, hi});
      inverted[k] = now;
    }
    for (;;) {
      const double t_out = t0 + static_cast<double>(k_out) * opt.dt_out;
      if (t_out > std::min(span.second, t_end) + 1e-12) break;
      stepper.calc_state(std::min(t_out, t_end), x);
      record(std::min(t_out, t_end), x);
      ++k_out;
    }
  }
  if (tr.times.back() < t_end - 1e-12) {
    stepper.calc_state(t_end, x);
    record(t_end, x);
  }
  std::stable_sort(sim.log.events.begin(), sim.log.events.end(),
                   [](const Event& a, const Event& b) { return a.time < b.time; });
  return sim;
}

std::optional<double> resetting_time(const Trajectory& traj, const EventLog& log, int unit) {
  bool seen = false;
  for (const auto& e : log.events) {
    if (e.unit != unit) continue;
    seen = true;
    if (e.kind == EventKind::SnapBack && e.time >= traj.release_time)
      return e.time - traj.release_time;
  }
  if (!seen) {
    std::ostringstream os;
    os << "unit " << unit << " never inverted";
    throw Error(ErrorCode::UnitNeverSnapped, os.str());
  }
  return std::nullopt;
}

StiffnessResult stiffness_at_state(const LatticeModel& m, const StableState& s,
                                   const StiffnessOptions& opt) {
  if (m.tip_node < 0 || m.probe_ref_node < 0)
    throw Error(ErrorCode::InvalidInput, "model has no probe nodes");
  const auto free = m.free_dofs();
  const Eigen::Vector2d tip0 = pos(s.q, m.tip_node);
  auto direction = [&](const Vec& q) {
    return Eigen::Vector2d(pos(q, m.tip_node) - pos(q, m.probe_ref_node)).normalized();
  };
  auto load_vector = [&](const Vec& q, double F) {
    Vec f = Vec::Zero(q.size());
    f.segment<2>(2 * m.tip_node) = F * direction(q);
    return f;
  };

  // Linearised compliance fixes the load increment.
  const Eigen::MatrixXd H = free_hessian(m, s.q);
  const Vec unit_load = load_vector(s.q, 1.0);
  Vec rhs(free.size());
  for (std::size_t i = 0; i < free.size(); ++i) rhs[i] = unit_load[free[i]];
  const Vec dq = H.ldlt().solve(rhs);
  Vec full = Vec::Zero(s.q.size());
  for (std::size_t i = 0; i < free.size(); ++i) full[free[i]] = dq[i];
  const double compliance = pos(full, m.tip_node).norm();
  if (!(compliance > 0) || !std::isfinite(compliance))
    throw Error(ErrorCode::SingularSystem, "probe compliance is not positive");
  const double F_max = opt.max_displacement / compliance;

  StiffnessResult r;
  r.displacement.push_back(0.0);
  r.force.push_back(0.0);
  r.time.push_back(0.0);
  Vec q = s.q;
  const auto pattern0 = s.pattern;
  for (int k = 1; k <= opt.steps; ++k) {
    const double F = F_max * k / opt.steps;
    MinimizeOptions mo = opt.minimize;
    Eigen::Vector2d dir = direction(q);
    for (int fp = 0; fp < 50; ++fp) {
      mo.external = load_vector(q, F);
      q = minimize_energy(m, q, mo).q;
      const Eigen::Vector2d nd = direction(q);
      const bool done = (nd - dir).norm() < 1e-12;
      dir = nd;
      if (done) break;
    }
    if (!pattern0.empty() && classify_pattern(m, q) != pattern0)
      throw Error(ErrorCode::SnapDuringProbe, "activation pattern changed under the probe load");
    const double disp = (pos(q, m.tip_node) - tip0).norm();
    r.displacement.push_back(disp);
    r.force.push_back(F);
    r.time.push_back(disp / (opt.rate / 60.0));
    if (disp > opt.max_displacement) break;
  }

  const Eigen::Index n = static_cast<Eigen::Index>(r.force.size());
  const Eigen::Map<const Vec> x(r.displacement.data(), n), f(r.force.data(), n);
  const double mx = x.mean(), mf = f.mean();
  const double sxx = (x.array() - mx).square().sum();
  const double sxf = ((x.array() - mx) * (f.array() - mf)).sum();
  r.stiffness = sxf / sxx;
  const double ss_res = (f.array() - mf - r.stiffness * (x.array() - mx)).square().sum();
  const double ss_tot = (f.array() - mf).square().sum();
  r.r2_of_fit = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  if (!std::isfinite(r.stiffness)) throw Error(ErrorCode::SingularSystem, "stiffness fit failed");
  return r;
}

Stability classify_dynamic(const UnitCellGeometry& g, const MaterialProps& mat,
                           const PressureProfile& load, double t_end,
                           const DynamicsOptions& opt, const LatticeLayout& layout) {
  FingerGeometry f;
  f.units = {g};
  f.material = mat;
  const auto m = build_lattice(f, layout);
  const auto sim = integrate(m, rest_state(m), load, t_end, opt);
  bool through = false, back_after = false;
  for (const auto& e : sim.log.events) {
    if (e.kind == EventKind::SnapThrough) through = true;
    if (e.kind == EventKind::SnapBack && through && e.time >= sim.trajectory.release_time)
      back_after = true;
  }
  if (!through) return Stability::Monostable;
  if (back_after) return Stability::Metastable;
  return sim.log.events.back().kind == EventKind::SnapThrough ? Stability::Bistable
                                                                : Stability::Monostable;
}

}  // namespace dpf
