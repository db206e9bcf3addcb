#include "dpf/model.hpp"

#include <cmath>
#include <sstream>

#include "dpf/error.hpp"

namespace dpf {

const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::NonPositiveD: return "NonPositiveD";
    case ErrorCode::GeometryInfeasible: return "GeometryInfeasible";
    case ErrorCode::DegenerateElement: return "DegenerateElement";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::StepSizeUnderflow: return "StepSizeUnderflow";
    case ErrorCode::UnitNeverSnapped: return "UnitNeverSnapped";
    case ErrorCode::SnapDuringProbe: return "SnapDuringProbe";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::ConstraintViolation: return "ConstraintViolation";
    case ErrorCode::InfeasibleState: return "InfeasibleState";
    case ErrorCode::NoFeasiblePoint: return "NoFeasiblePoint";
  }
  return "Unknown";
}

const char* to_string(Stability s) {
  switch (s) {
    case Stability::Monostable: return "Monostable";
    case Stability::Metastable: return "Metastable";
    case Stability::Bistable: return "Bistable";
  }
  return "Unknown";
}

MaterialProps MaterialProps::ninjaflex() {
  MaterialProps m;
  m.youngs_modulus = 12.0;
  return m;
}

MaterialProps MaterialProps::cheetah() {
  MaterialProps m;
  m.youngs_modulus = 26.0;
  return m;
}

bool MaterialProps::validate() const {
  auto bad = [](const std::string& f) { throw Error(ErrorCode::InvalidInput, "material." + f); };
  if (!(youngs_modulus > 0)) bad("youngs_modulus must be positive");
  if (!(poisson_ratio > 0 && poisson_ratio < 0.5)) bad("poisson_ratio must lie in (0, 0.5)");
  if (!(density > 0)) bad("density must be positive");
  if (!(eta_internal >= 0)) bad("eta_internal must be non-negative");
  if (!(eta_isotropic >= 0)) bad("eta_isotropic must be non-negative");
  return youngs_modulus >= 5.0 && youngs_modulus <= 40.0;
}

void UnitCellGeometry::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"H", H},         {"t", t},       {"r_b", r_b},     {"UC", UC},     {"U_L", U_L},
      {"U_sep", U_sep}, {"t_ch", t_ch}, {"t_lim", t_lim}, {"W_ch", W_ch}, {"t_mid", t_mid}};
  for (const auto& [name, v] : fields) {
    if (!(v > 0) || !std::isfinite(v))
      throw Error(ErrorCode::InvalidInput, std::string("unit.") + name + " must be positive");
  }
  if (!(t < H)) throw Error(ErrorCode::InvalidInput, "unit.t must be smaller than unit.H");
}

void FingerGeometry::validate() const {
  if (units.empty()) throw Error(ErrorCode::InvalidInput, "finger needs at least one unit");
  material.validate();
  const auto& u0 = units.front();
  for (std::size_t i = 0; i < units.size(); ++i) {
    units[i].validate();
    if (units[i].UC != u0.UC || units[i].t != u0.t || units[i].t_lim != u0.t_lim) {
      std::ostringstream os;
      os << "unit " << i << " differs from unit 0 in UC, t or t_lim";
      throw Error(ErrorCode::InvalidInput, os.str());
    }
  }
}

FingerGeometry FingerGeometry::from_heights(const std::vector<double>& heights,
                                            const UnitCellGeometry& proto,
                                            const MaterialProps& material) {
  FingerGeometry f;
  f.material = material;
  for (double h : heights) {
    UnitCellGeometry u = proto;
    u.H = h;
    f.units.push_back(u);
  }
  return f;
}

double curvature_radius(const UnitCellGeometry& g) {
  return (g.r_b * g.r_b + g.H * g.H) / (2.0 * g.H);
}

DimensionlessGroups dimensionless_groups(const UnitCellGeometry& g) {
  const double R = curvature_radius(g);
  DimensionlessGroups p;
  p.pi1 = g.t / g.H;
  p.pi3 = g.H / R;
  p.pi2 = p.pi1 * p.pi3;
  return p;
}

double kb_closed_form(double E, double H, double t, double R) {
  const double t2 = t * t, t3 = t2 * t, t4 = t3 * t, t5 = t4 * t;
  const double H2 = H * H, H3 = H2 * H;
  const double R2 = R * R;
  const double poly = -1.97 * R * t5 / H3 + 7.4 * H2 * t3 / R2 + 3.5 * R * t4 / H2 +
                      0.37 * H2 * t2 / R + 42.2 * t5 / H2 - 35.8 * H * t4 / R2 +
                      71.8 * t5 / (H * R) - 3.4 * R * t3 / H - 67.7 * t4 / H + 4.2 * R * t2 +
                      11.1 * t3;
  return E / R2 * poly;
}

double alpha_closed_form(double H, double t, double R) {
  const double t2 = t * t, t3 = t2 * t;
  const double H2 = H * H, H3 = H2 * H;
  const double R2 = R * R, R3 = R2 * R;
  return 0.4 * H3 / R3 - 0.6 * t3 / H3 - 2.9 * H2 * t / R3 - 0.9 * H2 / R2 -
         9.0 * t3 / (H2 * R) + 1.5 * t2 / H2 - 3.9 * t3 / (H * R2) + 9.2 * H * t / R2 +
         17.4 * t2 / (H * R) + 0.6 * H / R + 17.8 * t3 / R3 - 19.5 * t2 / R2 - 6.1 * t / R;
}

double inversion_travel(double H, double t, double U_sep, double t_ch) {
  return 2.14 * H + 0.25 * t - H - U_sep - t_ch / 2.0 - t / 2.0;
}

NonlinearParams nonlinear_spring_params(const UnitCellGeometry& g, const MaterialProps& m) {
  const double R = curvature_radius(g);
  NonlinearParams p;
  p.d = inversion_travel(g.H, g.t, g.U_sep, g.t_ch);
  if (!(p.d > 0)) {
    std::ostringstream os;
    os << "inversion travel d = " << p.d << " mm";
    throw Error(ErrorCode::NonPositiveD, os.str());
  }
  p.k_b = kb_closed_form(m.youngs_modulus, g.H, g.t, R);
  p.alpha = alpha_closed_form(g.H, g.t, R);
  return p;
}

LimitingLayerParams limiting_layer_params(const UnitCellGeometry& g, const MaterialProps& m) {
  LimitingLayerParams p;
  const double E = m.youngs_modulus, nu = m.poisson_ratio;
  p.k_l = E * g.t_lim * g.UC / g.U_L;
  p.k_theta = E * g.t_lim * g.t_lim * g.t_lim / (12.0 * (1.0 - nu * nu)) * g.UC / g.U_sep;
  return p;
}

SpringParams spring_params(const UnitCellGeometry& g, const MaterialProps& m) {
  const auto nl = nonlinear_spring_params(g, m);
  const auto ll = limiting_layer_params(g, m);
  return SpringParams{nl.k_b, nl.alpha, nl.d, ll.k_l, ll.k_theta};
}

double nonlinear_energy(double x, double k_b, double alpha, double d) {
  const double beta = 1.0 - alpha;
  return 0.5 * k_b * x * x * (1.0 + beta * (x * x / (d * d) - 2.0 * x / d));
}

double nonlinear_force(double x, double k_b, double alpha, double d) {
  const double beta = 1.0 - alpha;
  return k_b * x * (1.0 + beta * (2.0 * x * x / (d * d) - 3.0 * x / d));
}

double nonlinear_stiffness(double x, double k_b, double alpha, double d) {
  const double beta = 1.0 - alpha;
  return k_b * (1.0 + beta * (6.0 * x * x / (d * d) - 6.0 * x / d));
}

bool nonlinear_roots(double alpha, double& u_barrier, double& u_well) {
  const double beta = 1.0 - alpha;
  if (!(alpha < 1.0 / 9.0)) return false;
  const double disc = 9.0 * beta * beta - 8.0 * beta;
  if (!(disc > 0)) return false;
  const double s = std::sqrt(disc);
  u_barrier = (3.0 * beta - s) / (4.0 * beta);
  u_well = (3.0 * beta + s) / (4.0 * beta);
  return true;
}

StabilityClass classify_stability(const SpringParams& p) {
  StabilityClass c;
  double ub = 0, uw = 0;
  if (!nonlinear_roots(p.alpha, ub, uw)) return c;
  const double eb = nonlinear_energy(ub * p.d, p.k_b, p.alpha, p.d);
  const double ew = nonlinear_energy(uw * p.d, p.k_b, p.alpha, p.d);
  c.barrier_extension = ub * p.d;
  c.well_extension = uw * p.d;
  c.energy_barrier = eb;
  c.second_well_energy = ew;
  if (ew < eb) c.kind = Stability::Bistable;
  return c;
}

double snap_threshold(double alpha, double d) {
  double ub = 0, uw = 0;
  if (nonlinear_roots(alpha, ub, uw)) return ub * d;
  return 0.5 * d;
}

}  // namespace dpf
