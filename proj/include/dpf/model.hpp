#pragma once

#include <optional>
#include <string>
#include <vector>

namespace dpf {

// Unit system: mm, N, MPa, ton, s.

struct MaterialProps {
  double youngs_modulus = 12.0;  // MPa
  double poisson_ratio = 0.45;
  double density = 1.2e-9;       // ton/mm^3
  double eta_internal = 0.05;    // ton/s
  double eta_isotropic = 1e-3;   // ton/s

  static MaterialProps ninjaflex();
  static MaterialProps cheetah();

  // Throws on hard violations, returns false when E is outside [5, 40] MPa.
  bool validate() const;
};

struct UnitCellGeometry {
  double H = 4.0;       // dome height
  double t = 0.8;       // dome thickness
  double r_b = 8.0;     // dome base radius
  double UC = 15.0;     // unit cell size
  double U_L = 7.0;     // unit length
  double U_sep = 1.0;   // unit separation
  double t_ch = 1.0;    // chamber wall thickness
  double t_lim = 1.5;   // limiting layer thickness
  double W_ch = 3.0;    // channel width
  double t_mid = 1.0;   // mid thickness

  void validate() const;
};

struct FingerGeometry {
  std::vector<UnitCellGeometry> units;
  MaterialProps material;

  std::size_t n() const { return units.size(); }
  void validate() const;

  // Finger of len(heights) units sharing every field of `proto` except H.
  static FingerGeometry from_heights(const std::vector<double>& heights,
                                     const UnitCellGeometry& proto,
                                     const MaterialProps& material);
};

struct DimensionlessGroups {
  double pi1 = 0;  // t/H
  double pi2 = 0;  // t/R
  double pi3 = 0;  // H/R
};

struct NonlinearParams {
  double k_b = 0;
  double alpha = 0;
  double d = 0;
};

struct LimitingLayerParams {
  double k_l = 0;
  double k_theta = 0;
};

struct SpringParams {
  double k_b = 0;      // N/mm
  double alpha = 0;
  double d = 0;        // mm
  double k_l = 0;      // N/mm
  double k_theta = 0;  // N mm/rad
};

enum class Stability { Monostable, Metastable, Bistable };
const char* to_string(Stability s);

struct StabilityClass {
  Stability kind = Stability::Monostable;
  double energy_barrier = 0;      // N mm, energy at the barrier extension
  double second_well_energy = 0;  // N mm
  std::optional<double> barrier_extension;  // mm
  std::optional<double> well_extension;     // mm
};

double curvature_radius(const UnitCellGeometry& g);
DimensionlessGroups dimensionless_groups(const UnitCellGeometry& g);

double kb_closed_form(double E, double H, double t, double R);
double alpha_closed_form(double H, double t, double R);
double inversion_travel(double H, double t, double U_sep, double t_ch);

NonlinearParams nonlinear_spring_params(const UnitCellGeometry& g, const MaterialProps& m);
LimitingLayerParams limiting_layer_params(const UnitCellGeometry& g, const MaterialProps& m);
SpringParams spring_params(const UnitCellGeometry& g, const MaterialProps& m);

// Energy and axial force of the dome spring at extension xbar.
double nonlinear_energy(double xbar, double k_b, double alpha, double d);
double nonlinear_force(double xbar, double k_b, double alpha, double d);
double nonlinear_stiffness(double xbar, double k_b, double alpha, double d);

// Normalised stationary points u = xbar/d of the dome spring other than u = 0.
// Returns false when they are complex or coincide (alpha >= 1/9).
bool nonlinear_roots(double alpha, double& u_barrier, double& u_well);

StabilityClass classify_stability(const SpringParams& p);

// Extension at which a dome counts as snapped: the barrier when one exists,
// otherwise half the inversion travel.
double snap_threshold(double alpha, double d);

}  // namespace dpf
