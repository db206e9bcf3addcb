#include "dpf/statics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "dpf/parallel.hpp"
#include "dpf/random.hpp"

namespace dpf {

namespace {

Eigen::Vector2d pos(const Vec& q, int i) { return {q[2 * i], q[2 * i + 1]}; }

void rotate_about(Vec& q, int node, const Eigen::Vector2d& c, double phi) {
  const double cs = std::cos(phi), sn = std::sin(phi);
  const Eigen::Vector2d r = pos(q, node) - c;
  q[2 * node] = c.x() + cs * r.x() - sn * r.y();
  q[2 * node + 1] = c.y() + sn * r.x() + cs * r.y();
}

struct Objective {
  const LatticeModel& m;
  const Vec* ext;

  double energy(const Vec& q) const {
    double e = total_energy(m, q);
    if (ext) e -= ext->dot(q);
    return e;
  }
  Vec gradient(const Vec& q) const {
    Vec g = energy_gradient(m, q);
    if (ext) g -= *ext;
    return g;
  }
};

Vec gather(const Vec& full, const std::vector<int>& idx) {
  Vec out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = full[idx[i]];
  return out;
}

void scatter_add(Vec& full, const std::vector<int>& idx, const Vec& part, double s) {
  for (std::size_t i = 0; i < idx.size(); ++i) full[idx[i]] += s * part[i];
}

bool probe_curvature(const Objective& obj, const Vec& q, const std::vector<int>& free,
                     const MinimizeOptions& opt) {
  Rng rng(opt.probe_seed);
  const double e0 = obj.energy(q);
  const double h = opt.probe_step;
  for (int k = 0; k < opt.probe_directions; ++k) {
    Vec u(free.size());
    for (auto& x : u) x = rng.normal();
    u.normalize();
    Vec qp = q, qm = q;
    scatter_add(qp, free, u, h);
    scatter_add(qm, free, u, -h);
    const double c = (obj.energy(qp) - 2.0 * e0 + obj.energy(qm)) / (h * h);
    if (c < opt.probe_tol) return false;
  }
  return true;
}

Eigen::MatrixXd free_block(const Eigen::MatrixXd& H, const std::vector<int>& free) {
  const int nf = static_cast<int>(free.size());
  Eigen::MatrixXd out(nf, nf);
  for (int r = 0; r < nf; ++r)
    for (int c = 0; c < nf; ++c) out(r, c) = H(free[r], free[c]);
  return out;
}

}  // namespace

std::string pattern_string(const ActivationPattern& p) {
  std::string s;
  for (auto u : p) s += u == UnitState::Inverted ? 'I' : 'R';
  return s;
}

ActivationPattern pattern_from_bits(std::size_t n, std::uint64_t bits) {
  ActivationPattern p(n, UnitState::Rest);
  for (std::size_t i = 0; i < n; ++i)
    if (bits >> i & 1u) p[i] = UnitState::Inverted;
  return p;
}

ActivationPattern all_inverted(std::size_t n) { return ActivationPattern(n, UnitState::Inverted); }

Vec geometric_initial_guess(const LatticeModel& m, const ActivationPattern& p) {
  Vec q = m.rest_coordinates();
  const int n = static_cast<int>(m.nonlinear_elements.size());
  if (static_cast<int>(p.size()) != n)
    throw Error(ErrorCode::InvalidInput, "activation pattern length does not match the finger");
  for (int i = 0; i < n; ++i) {
    if (p[i] != UnitState::Inverted) continue;
    const auto& el = m.elements[m.nonlinear_elements[i]];
    const Eigen::Vector2d c = pos(q, m.base_nodes[i + 1]);
    const Eigen::Vector2d ra = pos(q, el.nodes[0]) - c;  // stays put
    const Eigen::Vector2d rb = pos(q, el.nodes[1]) - c;  // rotates with the downstream part
    const double a = ra.norm(), r = rb.norm();
    const double target = el.rest_length + el.d;
    double cg = (a * a + r * r - target * target) / (2.0 * a * r);
    cg = std::clamp(cg, -1.0, 1.0);
    const double gamma = std::acos(cg);
    // Signed angle from ra to rb; a CCW rotation of rb increases it.
    const double gamma0 = std::atan2(ra.x() * rb.y() - ra.y() * rb.x(), ra.dot(rb));
    const double phi = gamma - gamma0;
    std::vector<int> downstream;
    for (int j = i + 2; j < static_cast<int>(m.base_nodes.size()); ++j)
      downstream.push_back(m.base_nodes[j]);
    for (int j = i + 1; j < n; ++j) downstream.push_back(m.top_nodes[j]);
    downstream.push_back(m.tip_node);
    for (int node : downstream) rotate_about(q, node, c, phi);
  }
  return q;
}

Vec geometric_initial_guess(const FingerGeometry& f, const ActivationPattern& p,
                            const LatticeLayout& layout) {
  return geometric_initial_guess(build_lattice(f, layout), p);
}

Eigen::MatrixXd free_hessian(const LatticeModel& m, const Vec& q) {
  return free_block(energy_hessian(m, q), m.free_dofs());
}

ActivationPattern classify_pattern(const LatticeModel& m, const Vec& q) {
  const auto ext = dome_extensions(m, q);
  ActivationPattern p(ext.size(), UnitState::Rest);
  for (std::size_t i = 0; i < ext.size(); ++i) {
    const auto& el = m.elements[m.nonlinear_elements[i]];
    if (ext[i] > snap_threshold(el.alpha, el.d)) p[i] = UnitState::Inverted;
  }
  return p;
}

Eigen::Vector2d tip_position(const LatticeModel& m, const Vec& q) {
  if (m.tip_node < 0) return Eigen::Vector2d::Zero();
  return pos(q, m.tip_node);
}

Eigen::Vector2d tip_position(const StableState& s) { return {s.tip_x, s.tip_y}; }

StableState minimize_energy(const LatticeModel& m, const Vec& q0, const MinimizeOptions& opt) {
  if (q0.size() != static_cast<Eigen::Index>(m.dof()) || !q0.allFinite())
    throw Error(ErrorCode::InvalidInput, "initial coordinates must be finite and match the model");
  const Objective obj{m, opt.external.size() > 0 ? &opt.external : nullptr};
  const auto free = m.free_dofs();
  Vec q = q0;

  auto finish = [&](int it, double gn) {
    StableState s;
    s.q = q;
    s.energy = total_energy(m, q);
    s.grad_norm = gn;
    s.iterations = it;
    const auto tip = tip_position(m, q);
    s.tip_x = tip.x();
    s.tip_y = tip.y();
    if (!m.nonlinear_elements.empty()) s.pattern = classify_pattern(m, q);
    return s;
  };

  double e = obj.energy(q);
  double radius = opt.max_step;
  for (int it = 0; it < opt.max_iter; ++it) {
    const Vec g = gather(obj.gradient(q), free);
    const double gn = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    const Eigen::MatrixXd H = free_block(energy_hessian(m, q), free);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const Vec lam = es.eigenvalues();
    const double lam_max = lam.cwiseAbs().maxCoeff();

    if (gn < opt.grad_tol * (1.0 + std::fabs(e))) {
      if (lam.size() == 0 || lam[0] > -1e-9 * lam_max) {
        StableState s = finish(it, gn);
        s.curvature_ok = probe_curvature(obj, q, free, opt);
        s.admissible = is_admissible(m, q);
        return s;
      }
      // Saddle: leave along the most negative curvature direction.
      const Vec v = es.eigenvectors().col(0);
      const double step = 1e-2;
      Vec qp = q, qm = q;
      scatter_add(qp, free, v, step);
      scatter_add(qm, free, v, -step);
      const double ep = obj.energy(qp), em = obj.energy(qm);
      q = ep < em ? qp : qm;
      e = std::min(ep, em);
      continue;
    }

    // Trust-region step p(mu) = -(H + mu I)^-1 g in the eigenbasis: the shift
    // damps soft modes and leaves the stiff link corrections intact.
    const Vec gt = es.eigenvectors().transpose() * g;
    const double lam_min = lam.size() ? lam[0] : 0.0;
    auto step_for = [&](double mu) { return Vec(-gt.array() / (lam.array() + mu)); };
    double mu = 0;
    Vec pt;
    if (lam_min > 1e-12 * lam_max && (pt = step_for(0.0)).norm() <= radius) {
      mu = 0;
    } else {
      double lo = std::max(0.0, -lam_min) + 1e-12 * lam_max, hi = lo + gt.norm() / radius + lam_max;
      for (int k = 0; k < 200 && hi - lo > 1e-12 * hi; ++k) {
        const double mid = 0.5 * (lo + hi);
        (step_for(mid).norm() > radius ? lo : hi) = mid;
      }
      mu = hi;
      pt = step_for(mu);
    }
    const double pred = -(gt.dot(pt) + 0.5 * (lam.array() * pt.array().square()).sum());
    const Vec p = es.eigenvectors() * pt;
    Vec trial = q;
    scatter_add(trial, free, p, 1.0);
    const double et = obj.energy(trial);
    const double pn = pt.norm();
    if (!(pred > 1e-15 * (1.0 + std::fabs(e)))) {
      // Model decrease below rounding: accept a step that shrinks the gradient.
      const double gtn = gather(obj.gradient(trial), free).cwiseAbs().maxCoeff();
      if (std::isfinite(et) && gtn < gn) {
        q = trial;
        e = et;
        continue;
      }
      StableState best = finish(it, gn);
      throw NoConvergenceError("trust region collapsed", best);
    }
    const double rho = std::isfinite(et) ? (e - et) / pred : -1.0;
    if (rho > 1e-4) {
      q = trial;
      e = et;
    }
    if (rho < 0.25)
      radius = 0.25 * pn;
    else if (rho > 0.75 && pn > 0.99 * radius)
      radius = std::min(2.0 * radius, opt.max_step);
    if (radius < 1e-14) {
      StableState best = finish(it, gn);
      throw NoConvergenceError("trust region collapsed", best);
    }
  }
  const Vec g = gather(obj.gradient(q), free);
  StableState best = finish(opt.max_iter, g.size() ? g.cwiseAbs().maxCoeff() : 0.0);
  std::ostringstream os;
  os << "no convergence after " << opt.max_iter << " iterations";
  throw NoConvergenceError(os.str(), best);
}

bool is_admissible(const LatticeModel& m, const Vec& q) {
  const Vec r = m.rest_coordinates();
  auto area = [](const Vec& x, int a, int b, int c) {
    return (x[2 * b] - x[2 * a]) * (x[2 * c + 1] - x[2 * a + 1]) -
           (x[2 * b + 1] - x[2 * a + 1]) * (x[2 * c] - x[2 * a]);
  };
  const std::size_t n = m.top_nodes.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int b0 = m.base_nodes[i], b1 = m.base_nodes[i + 1], t = m.top_nodes[i];
    const int next = i + 1 < n ? m.top_nodes[i + 1] : m.tip_node;
    for (const auto& tri : {std::array<int, 3>{b0, b1, t}, std::array<int, 3>{b1, t, next}}) {
      if (area(r, tri[0], tri[1], tri[2]) * area(q, tri[0], tri[1], tri[2]) <= 0) return false;
    }
  }
  return true;
}

namespace {

// Newton on one rotation per hinge (downstream part about b_{i+1}) with all
// link lengths held; a cheap seed close to the full minimum.
Vec relax_hinges(const LatticeModel& m, const Vec& q0, const MinimizeOptions& opt) {
  const int n = static_cast<int>(m.nonlinear_elements.size());
  if (n == 0 || m.tip_node < 0 || opt.external.size() > 0) return q0;
  std::vector<std::vector<int>> down(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 2; j < static_cast<int>(m.base_nodes.size()); ++j) down[i].push_back(m.base_nodes[j]);
    for (int j = i + 1; j < n; ++j) down[i].push_back(m.top_nodes[j]);
    down[i].push_back(m.tip_node);
  }
  auto perp = [](const Eigen::Vector2d& v) { return Eigen::Vector2d(-v.y(), v.x()); };
  Vec q = q0;
  double e = total_energy(m, q);
  double radius = 0.5;  // rad
  for (int it = 0; it < 100; ++it) {
    const Vec g = energy_gradient(m, q);
    const Eigen::MatrixXd H = energy_hessian(m, q);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(q.size(), n);
    std::vector<Eigen::Vector2d> c(n);
    for (int i = 0; i < n; ++i) {
      c[i] = pos(q, m.base_nodes[i + 1]);
      for (int r : down[i]) J.block<2, 1>(2 * r, i) = perp(pos(q, r) - c[i]);
    }
    const Vec G = J.transpose() * g;
    Eigen::MatrixXd Hr = J.transpose() * H * J;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        double s2 = 0;
        for (int r : down[j]) s2 -= g.segment<2>(2 * r).dot(pos(q, r) - c[j]);
        Hr(i, j) += s2;
        if (i != j) Hr(j, i) += s2;
      }
    if (G.cwiseAbs().maxCoeff() < 1e-10 * (1.0 + std::fabs(e))) break;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hr);
    const Vec lam = es.eigenvalues();
    const Vec gt = es.eigenvectors().transpose() * G;
    const double lmax = lam.cwiseAbs().maxCoeff();
    auto step_for = [&](double mu) { return Vec(-gt.array() / (lam.array() + mu)); };
    Vec pt;
    if (!(lam[0] > 1e-12 * lmax) || (pt = step_for(0.0)).norm() > radius) {
      double lo = std::max(0.0, -lam[0]) + 1e-12 * lmax, hi = lo + gt.norm() / radius + lmax;
      for (int k = 0; k < 200 && hi - lo > 1e-12 * hi; ++k) {
        const double mid = 0.5 * (lo + hi);
        (step_for(mid).norm() > radius ? lo : hi) = mid;
      }
      pt = step_for(hi);
    }
    const double pred = -(gt.dot(pt) + 0.5 * (lam.array() * pt.array().square()).sum());
    if (!(pred > 1e-15 * (1.0 + std::fabs(e)))) break;
    const Vec phi = es.eigenvectors() * pt;
    Vec trial = q;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d ci = pos(trial, m.base_nodes[i + 1]);
      for (int r : down[i]) rotate_about(trial, r, ci, phi[i]);
    }
    const double et = total_energy(m, trial);
    const double rho = std::isfinite(et) ? (e - et) / pred : -1.0;
    if (rho > 1e-4) {
      q = trial;
      e = et;
    }
    if (rho < 0.25)
      radius = 0.25 * pt.norm();
    else if (rho > 0.75 && pt.norm() > 0.99 * radius)
      radius = std::min(2.0 * radius, 1.0);
    if (radius < 1e-12) break;
  }
  return q;
}

}  // namespace

StableState solve_pattern(const LatticeModel& m, const ActivationPattern& p,
                          const MinimizeOptions& opt) {
  return minimize_energy(m, relax_hinges(m, geometric_initial_guess(m, p), opt), opt);
}

bool insert_distinct(std::vector<StableState>& states, const StableState& s, double tol) {
  for (auto& t : states) {
    if ((t.q - s.q).cwiseAbs().maxCoeff() < tol) {
      if (s.energy < t.energy) t = s;
      return false;
    }
  }
  states.push_back(s);
  return true;
}

Enumeration enumerate_stable_states(const LatticeModel& m, const EnumerateOptions& opt) {
  const std::size_t n = m.nonlinear_elements.size();
  if (n > opt.max_units) {
    std::ostringstream os;
    os << n << " units exceeds the enumeration cap of " << opt.max_units;
    throw Error(ErrorCode::InvalidInput, os.str());
  }
  const std::size_t count = std::size_t{1} << n;
  std::vector<std::optional<StableState>> found(count);
  std::vector<std::string> errors(count);
  parallel_for(count, opt.threads, [&](std::size_t b) {
    try {
      auto s = solve_pattern(m, pattern_from_bits(n, b), opt.minimize);
      if (s.admissible)
        found[b] = std::move(s);
      else
        errors[b] = pattern_string(pattern_from_bits(n, b)) + ": folded configuration discarded";
    } catch (const Error& e) {
      errors[b] = pattern_string(pattern_from_bits(n, b)) + ": " + e.what();
    }
  });
  Enumeration out;
  for (std::size_t b = 0; b < count; ++b) {
    if (found[b]) insert_distinct(out.states, *found[b], opt.dedup_tol);
    if (!errors[b].empty()) out.failures.push_back(errors[b]);
  }
  std::stable_sort(out.states.begin(), out.states.end(),
                   [](const StableState& a, const StableState& b) {
                     if (a.energy != b.energy) return a.energy < b.energy;
                     return pattern_string(a.pattern) < pattern_string(b.pattern);
                   });
  return out;
}

Enumeration enumerate_stable_states(const FingerGeometry& f, const LatticeLayout& layout,
                                    const EnumerateOptions& opt) {
  return enumerate_stable_states(build_lattice(f, layout), opt);
}

}  // namespace dpf
