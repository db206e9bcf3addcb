#include "dpf/lattice.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "dpf/error.hpp"

namespace dpf {

namespace {

constexpr double kMinLength = 1e-9;

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

Eigen::Vector2d pos(const Vec& q, int i) { return {q[2 * i], q[2 * i + 1]}; }

void degenerate(int e, const char* why) {
  std::ostringstream os;
  os << "element " << e << ": " << why;
  throw Error(ErrorCode::DegenerateElement, os.str());
}

}  // namespace

const char* to_string(ElementKind k) {
  switch (k) {
    case ElementKind::Linear: return "Linear";
    case ElementKind::Nonlinear: return "Nonlinear";
    case ElementKind::Torsional: return "Torsional";
    case ElementKind::Rigid: return "Rigid";
  }
  return "Unknown";
}

int LatticeModel::add_node(double x, double y, bool on_limiting_layer, double mass) {
  const int id = static_cast<int>(nodes.size());
  nodes.push_back(Node{id, x, y, on_limiting_layer});
  masses.push_back(mass);
  return id;
}

int LatticeModel::add_spring(ElementKind kind, int a, int b, double k, int unit) {
  Element e;
  e.kind = kind;
  e.nodes = {a, b, -1};
  e.k = k;
  e.unit = unit;
  e.rest_length = std::hypot(nodes.at(a).x - nodes.at(b).x, nodes.at(a).y - nodes.at(b).y);
  if (!(e.rest_length > 0))
    throw Error(ErrorCode::GeometryInfeasible, "element with non-positive rest length");
  elements.push_back(e);
  return static_cast<int>(elements.size()) - 1;
}

int LatticeModel::add_nonlinear(int a, int b, double k_b, double alpha, double d, int unit) {
  const int id = add_spring(ElementKind::Nonlinear, a, b, k_b, unit);
  elements[id].alpha = alpha;
  elements[id].d = d;
  nonlinear_elements.push_back(id);
  return id;
}

int LatticeModel::add_torsion(int vertex, int a, int b, double k, int unit) {
  Element e;
  e.kind = ElementKind::Torsional;
  e.nodes = {vertex, a, b};
  e.k = k;
  e.unit = unit;
  elements.push_back(e);
  const int id = static_cast<int>(elements.size()) - 1;
  elements[id].rest_angle = element_angle(*this, rest_coordinates(), id);
  return id;
}

void LatticeModel::fix_node(int id) {
  fix_dof(2 * id);
  fix_dof(2 * id + 1);
}

void LatticeModel::fix_dof(int dof) {
  for (int f : fixed_dof)
    if (f == dof) return;
  fixed_dof.push_back(dof);
}

Vec LatticeModel::rest_coordinates() const {
  Vec q(dof());
  for (const auto& n : nodes) {
    q[2 * n.id] = n.x;
    q[2 * n.id + 1] = n.y;
  }
  return q;
}

std::vector<char> LatticeModel::fixed_mask() const {
  std::vector<char> mask(dof(), 0);
  for (int f : fixed_dof) mask.at(f) = 1;
  return mask;
}

std::vector<int> LatticeModel::free_dofs() const {
  const auto mask = fixed_mask();
  std::vector<int> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) out.push_back(static_cast<int>(i));
  return out;
}

void LatticeModel::validate() const {
  if (fixed_dof.size() < 3)
    throw Error(ErrorCode::InvalidInput, "lattice needs at least 3 fixed coordinates");
  const int n = static_cast<int>(nodes.size());
  for (const auto& e : elements) {
    const int used = e.kind == ElementKind::Torsional ? 3 : 2;
    for (int j = 0; j < used; ++j)
      if (e.nodes[j] < 0 || e.nodes[j] >= n)
        throw Error(ErrorCode::InvalidInput, "element references a missing node");
  }
  if (masses.size() != nodes.size())
    throw Error(ErrorCode::InvalidInput, "one mass per node required");
}

LatticeModel build_lattice(const FingerGeometry& f, const LatticeLayout& layout) {
  f.validate();
  const int n = static_cast<int>(f.n());
  LatticeModel m;

  std::vector<SpringParams> sp;
  for (const auto& u : f.units) sp.push_back(spring_params(u, f.material));

  double k_max = 0;
  for (const auto& p : sp) k_max = std::max({k_max, p.k_l, p.k_b});
  const double k_rigid = layout.rigid_factor * k_max;

  auto top_h = [&](int i) {
    return layout.top_height ? *layout.top_height : f.units[i].H + f.units[i].t_ch;
  };
  const double tip_h = layout.tip_height ? *layout.tip_height : top_h(n - 1);

  // Base nodes along the limiting layer.
  double x = layout.origin_x;
  const double y0 = layout.origin_y;
  for (int i = 0; i <= n; ++i) {
    m.base_nodes.push_back(m.add_node(x, y0, true));
    if (i < n) x += f.units[i].U_L + f.units[i].U_sep;
  }
  // Top node over each unit's mid-span.
  for (int i = 0; i < n; ++i) {
    const auto& a = m.nodes[m.base_nodes[i]];
    const auto& b = m.nodes[m.base_nodes[i + 1]];
    m.top_nodes.push_back(m.add_node(0.5 * (a.x + b.x), y0 - top_h(i)));
  }
  m.tip_node = m.add_node(m.nodes[m.base_nodes[n]].x, y0 - tip_h);
  m.probe_ref_node = m.base_nodes[n];

  for (const auto& node : m.nodes)
    if (!(node.y < y0) && !node.on_limiting_layer)
      throw Error(ErrorCode::GeometryInfeasible, "node heights must be positive");

  for (int i = 0; i < n; ++i) {
    const int b0 = m.base_nodes[i], b1 = m.base_nodes[i + 1], t = m.top_nodes[i];
    m.add_spring(ElementKind::Linear, b0, b1, sp[i].k_l, i);
    m.add_spring(ElementKind::Rigid, b0, t, k_rigid, i);
    m.add_spring(ElementKind::Rigid, b1, t, k_rigid, i);
  }
  m.add_spring(ElementKind::Rigid, m.base_nodes[n], m.tip_node, k_rigid, n - 1);
  for (int i = 0; i < n; ++i) {
    const int next = i + 1 < n ? m.top_nodes[i + 1] : m.tip_node;
    m.add_nonlinear(m.top_nodes[i], next, sp[i].k_b, sp[i].alpha, sp[i].d, i);
  }
  // Two rotational springs per unit between the limiting layer and the rigid links.
  for (int i = 0; i < n; ++i) {
    const int b0 = m.base_nodes[i], b1 = m.base_nodes[i + 1], t = m.top_nodes[i];
    m.add_torsion(b0, b1, t, sp[i].k_theta, i);
    m.add_torsion(b1, b0, t, sp[i].k_theta, i);
  }

  // Chamber walls loaded by pressure: the front wall of unit i and the back
  // wall of the next unit (the tip link for the last unit).
  // The tip face is widened so its area equals that of a full wall.
  for (int i = 0; i < n; ++i) {
    const double w = f.units[i].W_ch;
    const int b1 = m.base_nodes[i + 1];
    const bool last = i + 1 == n;
    const int next = last ? m.tip_node : m.top_nodes[i + 1];
    const double wall = std::hypot(m.nodes[b1].x - m.nodes[m.top_nodes[i]].x,
                                   m.nodes[b1].y - m.nodes[m.top_nodes[i]].y);
    const double edge = std::hypot(m.nodes[b1].x - m.nodes[next].x, m.nodes[b1].y - m.nodes[next].y);
    m.pressure_faces.push_back(PressureFace{next, b1, last ? w * wall / edge : w});
    m.pressure_faces.push_back(PressureFace{b1, m.top_nodes[i], w});
  }

  // Lumped masses: segment volume shared by the nodes of the segment.
  for (int i = 0; i < n; ++i) {
    const auto& u = f.units[i];
    const double vol = u.UC * u.U_L * (u.t_ch + u.t_lim + 2.0 * u.t);
    const double mass = vol * f.material.density;
    std::vector<int> seg{m.base_nodes[i], m.top_nodes[i], m.base_nodes[i + 1]};
    if (i == n - 1) seg.push_back(m.tip_node);
    for (int id : seg) m.masses[id] += mass / static_cast<double>(seg.size());
  }

  m.fix_node(m.base_nodes[0]);
  m.fix_node(m.top_nodes[0]);
  m.unit_params = sp;
  m.eta_internal = f.material.eta_internal;
  m.eta_isotropic = f.material.eta_isotropic;
  m.validate();
  return m;
}

double element_length(const LatticeModel& m, const Vec& q, int e) {
  const auto& el = m.elements[e];
  return (pos(q, el.nodes[0]) - pos(q, el.nodes[1])).norm();
}

double element_angle(const LatticeModel& m, const Vec& q, int e) {
  const auto& el = m.elements[e];
  const Eigen::Vector2d c = pos(q, el.nodes[0]);
  const Eigen::Vector2d e0 = pos(q, el.nodes[1]) - c;
  const Eigen::Vector2d e1 = pos(q, el.nodes[2]) - c;
  return std::atan2(e0.x() * e1.y() - e0.y() * e1.x(), e0.dot(e1));
}

double element_energy(const LatticeModel& m, const Vec& q, int e) {
  const auto& el = m.elements[e];
  switch (el.kind) {
    case ElementKind::Linear:
    case ElementKind::Rigid: {
      const double x = element_length(m, q, e) - el.rest_length;
      return 0.5 * el.k * x * x;
    }
    case ElementKind::Nonlinear:
      return nonlinear_energy(element_length(m, q, e) - el.rest_length, el.k, el.alpha, el.d);
    case ElementKind::Torsional: {
      const double dth = wrap_angle(element_angle(m, q, e) - el.rest_angle);
      return 0.5 * el.k * dth * dth;
    }
  }
  return 0;
}

double total_energy(const LatticeModel& m, const Vec& q) {
  double E = 0;
  for (int e = 0; e < static_cast<int>(m.elements.size()); ++e) E += element_energy(m, q, e);
  return E;
}

double total_energy(const LatticeModel& m, const SystemState& s) { return total_energy(m, s.q); }

Vec energy_gradient(const LatticeModel& m, const Vec& q) {
  Vec g = Vec::Zero(q.size());
  for (int e = 0; e < static_cast<int>(m.elements.size()); ++e) {
    const auto& el = m.elements[e];
    if (el.kind == ElementKind::Torsional) {
      const int c = el.nodes[0], a = el.nodes[1], b = el.nodes[2];
      const Eigen::Vector2d e0 = pos(q, a) - pos(q, c);
      const Eigen::Vector2d e1 = pos(q, b) - pos(q, c);
      const double l0 = e0.squaredNorm(), l1 = e1.squaredNorm();
      if (l0 < kMinLength * kMinLength || l1 < kMinLength * kMinLength)
        degenerate(e, "torsional arm of zero length");
      const double th = std::atan2(e0.x() * e1.y() - e0.y() * e1.x(), e0.dot(e1));
      const double tq = el.k * wrap_angle(th - el.rest_angle);
      const Eigen::Vector2d ga(e0.y() / l0, -e0.x() / l0);
      const Eigen::Vector2d gb(-e1.y() / l1, e1.x() / l1);
      g.segment<2>(2 * a) += tq * ga;
      g.segment<2>(2 * b) += tq * gb;
      g.segment<2>(2 * c) -= tq * (ga + gb);
      continue;
    }
    const int i = el.nodes[0], j = el.nodes[1];
    const Eigen::Vector2d x = pos(q, i) - pos(q, j);
    const double L = x.norm();
    if (L < kMinLength) degenerate(e, "coincident nodes");
    const double xb = L - el.rest_length;
    const double f = el.kind == ElementKind::Nonlinear ? nonlinear_force(xb, el.k, el.alpha, el.d)
                                                       : el.k * xb;
    const Eigen::Vector2d fi = f * x / L;
    g.segment<2>(2 * i) += fi;
    g.segment<2>(2 * j) -= fi;
  }
  return g;
}

Vec energy_gradient(const LatticeModel& m, const SystemState& s) { return energy_gradient(m, s.q); }

namespace {

// Jacobian of G(v) = (v.y, -v.x) / |v|^2.
Eigen::Matrix2d angle_gradient_jacobian(const Eigen::Vector2d& v) {
  const double l2 = v.squaredNorm();
  Eigen::Matrix2d J;
  J << 0.0, 1.0, -1.0, 0.0;
  J /= l2;
  J -= 2.0 * Eigen::Vector2d(v.y(), -v.x()) * v.transpose() / (l2 * l2);
  return J;
}

}  // namespace

Eigen::MatrixXd energy_hessian(const LatticeModel& m, const Vec& q) {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(q.size(), q.size());
  for (int e = 0; e < static_cast<int>(m.elements.size()); ++e) {
    const auto& el = m.elements[e];
    if (el.kind == ElementKind::Torsional) {
      const int nodes[3] = {el.nodes[1], el.nodes[2], el.nodes[0]};  // a, b, c
      const Eigen::Vector2d e0 = pos(q, nodes[0]) - pos(q, nodes[2]);
      const Eigen::Vector2d e1 = pos(q, nodes[1]) - pos(q, nodes[2]);
      const double l0 = e0.squaredNorm(), l1 = e1.squaredNorm();
      if (l0 < kMinLength * kMinLength || l1 < kMinLength * kMinLength)
        degenerate(e, "torsional arm of zero length");
      const double th = std::atan2(e0.x() * e1.y() - e0.y() * e1.x(), e0.dot(e1));
      const double dth = wrap_angle(th - el.rest_angle);
      Eigen::Matrix<double, 6, 4> D = Eigen::Matrix<double, 6, 4>::Zero();
      D.block<2, 2>(0, 0).setIdentity();
      D.block<2, 2>(2, 2).setIdentity();
      D.block<2, 2>(4, 0) = -Eigen::Matrix2d::Identity();
      D.block<2, 2>(4, 2) = -Eigen::Matrix2d::Identity();
      Eigen::Vector4d g;
      g << e0.y() / l0, -e0.x() / l0, -e1.y() / l1, e1.x() / l1;
      Eigen::Matrix4d J = Eigen::Matrix4d::Zero();
      J.block<2, 2>(0, 0) = angle_gradient_jacobian(e0);
      J.block<2, 2>(2, 2) = -angle_gradient_jacobian(e1);
      const Eigen::Matrix<double, 6, 1> gn = D * g;
      const Eigen::Matrix<double, 6, 6> K =
          el.k * (gn * gn.transpose() + dth * D * J * D.transpose());
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          H.block<2, 2>(2 * nodes[r], 2 * nodes[c]) += K.block<2, 2>(2 * r, 2 * c);
      continue;
    }
    const int i = el.nodes[0], j = el.nodes[1];
    const Eigen::Vector2d x = pos(q, i) - pos(q, j);
    const double L = x.norm();
    if (L < kMinLength) degenerate(e, "coincident nodes");
    const double xb = L - el.rest_length;
    const bool nl = el.kind == ElementKind::Nonlinear;
    const double f = nl ? nonlinear_force(xb, el.k, el.alpha, el.d) : el.k * xb;
    const double df = nl ? nonlinear_stiffness(xb, el.k, el.alpha, el.d) : el.k;
    const Eigen::Vector2d u = x / L;
    const Eigen::Matrix2d P = u * u.transpose();
    const Eigen::Matrix2d K = df * P + (f / L) * (Eigen::Matrix2d::Identity() - P);
    H.block<2, 2>(2 * i, 2 * i) += K;
    H.block<2, 2>(2 * j, 2 * j) += K;
    H.block<2, 2>(2 * i, 2 * j) -= K;
    H.block<2, 2>(2 * j, 2 * i) -= K;
  }
  return H;
}

std::vector<double> dome_extensions(const LatticeModel& m, const Vec& q) {
  std::vector<double> out;
  for (int e : m.nonlinear_elements) out.push_back(element_length(m, q, e) - m.elements[e].rest_length);
  return out;
}

void write_lattice(std::ostream& os, const LatticeModel& m, const Vec& q) {
  os << "record\tid\tkind\ta\tb\tc\tx\ty\tvalue\n";
  for (const auto& n : m.nodes) {
    os << "node\t" << n.id << '\t' << (n.on_limiting_layer ? "layer" : "body") << "\t\t\t\t"
       << q[2 * n.id] << '\t' << q[2 * n.id + 1] << '\t' << m.masses[n.id] << '\n';
  }
  for (int e = 0; e < static_cast<int>(m.elements.size()); ++e) {
    const auto& el = m.elements[e];
    os << "element\t" << e << '\t' << to_string(el.kind) << '\t' << el.nodes[0] << '\t'
       << el.nodes[1] << '\t';
    if (el.kind == ElementKind::Torsional) os << el.nodes[2];
    os << "\t\t\t" << el.k << '\n';
  }
}

}  // namespace dpf
