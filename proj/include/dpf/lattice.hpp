#pragma once

#include <Eigen/Dense>
#include <array>
#include <iosfwd>
#include <optional>
#include <vector>

#include "dpf/model.hpp"

namespace dpf {

using Vec = Eigen::VectorXd;

enum class ElementKind { Linear, Nonlinear, Torsional, Rigid };
const char* to_string(ElementKind k);

struct Node {
  int id = 0;
  double x = 0, y = 0;
  bool on_limiting_layer = false;
};

struct Element {
  ElementKind kind = ElementKind::Linear;
  std::array<int, 3> nodes{-1, -1, -1};  // torsional: (vertex, arm a, arm b)
  double rest_length = 0;
  double rest_angle = 0;
  double k = 0;      // k_l, k_b, k_theta or k_rigid
  double alpha = 0;  // nonlinear only
  double d = 0;      // nonlinear only
  int unit = -1;
};

// Pressure acts on segment (a, b) along its normal (dy, -dx)/|ab|.
struct PressureFace {
  int a = 0, b = 0;
  double width = 0;
};

// Placement of the finger nodes. Heights are measured from the limiting layer
// into the chamber side (-y). The limiting layer sits at y = origin_y.
struct LatticeLayout {
  std::optional<double> top_height = 10.0;  // nullopt: H + t_ch of each unit
  std::optional<double> tip_height = 4.0;   // nullopt: same as the last top node
  double origin_x = 0.0;
  double origin_y = 14.0;
  double rigid_factor = 1e4;
};

struct LatticeModel {
  std::vector<Node> nodes;
  std::vector<Element> elements;
  std::vector<int> fixed_dof;
  std::vector<double> masses;
  std::vector<PressureFace> pressure_faces;

  double eta_internal = 0;   // ton/s, dashpot on every two-node element
  double eta_isotropic = 0;  // ton/s, per node

  std::vector<int> nonlinear_elements;  // in insertion order, one per finger unit

  int tip_node = -1;
  int probe_ref_node = -1;  // probe force acts along (tip - probe_ref)

  // Finger bookkeeping, empty for hand-built models.
  std::vector<int> base_nodes;
  std::vector<int> top_nodes;
  std::vector<SpringParams> unit_params;

  int add_node(double x, double y, bool on_limiting_layer = false, double mass = 0.0);
  int add_spring(ElementKind kind, int a, int b, double k, int unit = -1);
  int add_nonlinear(int a, int b, double k_b, double alpha, double d, int unit = -1);
  int add_torsion(int vertex, int a, int b, double k, int unit = -1);
  void fix_node(int id);
  void fix_dof(int dof);

  std::size_t dof() const { return 2 * nodes.size(); }
  Vec rest_coordinates() const;
  std::vector<char> fixed_mask() const;
  std::vector<int> free_dofs() const;
  void validate() const;
};

struct SystemState {
  Vec q;
  Vec v;
  double time = 0;
};

// Node count 2n + 2; elements: n linear, 2n + 1 rigid, n nonlinear, 2n torsional.
LatticeModel build_lattice(const FingerGeometry& f, const LatticeLayout& layout = {});

double element_length(const LatticeModel& m, const Vec& q, int e);
double element_angle(const LatticeModel& m, const Vec& q, int e);
double element_energy(const LatticeModel& m, const Vec& q, int e);

double total_energy(const LatticeModel& m, const Vec& q);
double total_energy(const LatticeModel& m, const SystemState& s);
Vec energy_gradient(const LatticeModel& m, const Vec& q);
Vec energy_gradient(const LatticeModel& m, const SystemState& s);
// Analytic Hessian over all coordinates, assembled element by element.
Eigen::MatrixXd energy_hessian(const LatticeModel& m, const Vec& q);

// Extension xbar of every finger dome spring, ordered by unit.
std::vector<double> dome_extensions(const LatticeModel& m, const Vec& q);

// Tab-separated record stream: one node or element per line.
void write_lattice(std::ostream& os, const LatticeModel& m, const Vec& q);

}  // namespace dpf
