#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "commands.hpp"
#include "dpf/dynamics.hpp"
#include "dpf/inverse.hpp"
#include "dpf/regression.hpp"
#include "dpf/statics.hpp"

namespace py = pybind11;
using namespace dpf;

namespace {

py::dict state_dict(const StableState& s) {
  py::dict d;
  d["pattern"] = pattern_string(s.pattern);
  d["energy"] = s.energy;
  d["tip"] = py::make_tuple(s.tip_x, s.tip_y);
  d["q"] = s.q;
  d["curvature_ok"] = s.curvature_ok;
  return d;
}

ActivationPattern parse_pattern(const std::string& s) {
  ActivationPattern p;
  for (char c : s) {
    if (c == 'I') p.push_back(UnitState::Inverted);
    else if (c == 'R') p.push_back(UnitState::Rest);
    else throw Error(ErrorCode::InvalidInput, "pattern letters must be R or I");
  }
  return p;
}

}  // namespace

PYBIND11_MODULE(dpf, m) {
  m.doc() = "Lattice model of soft fingers with bistable dome units";
  m.attr("__version__") = DPF_VERSION;

  py::register_exception<Error>(m, "DpfError", PyExc_RuntimeError);

  py::class_<MaterialProps>(m, "MaterialProps")
      .def(py::init<>())
      .def_readwrite("E", &MaterialProps::youngs_modulus)
      .def_readwrite("nu", &MaterialProps::poisson_ratio)
      .def_readwrite("density", &MaterialProps::density)
      .def_readwrite("eta_internal", &MaterialProps::eta_internal)
      .def_readwrite("eta_isotropic", &MaterialProps::eta_isotropic)
      .def_static("ninjaflex", &MaterialProps::ninjaflex)
      .def_static("cheetah", &MaterialProps::cheetah);

  py::class_<UnitCellGeometry>(m, "UnitCellGeometry")
      .def(py::init<>())
      .def(py::init([](py::kwargs kw) {
        UnitCellGeometry g;
        py::object o = py::cast(&g, py::return_value_policy::reference);
        for (auto item : kw) {
          const auto key = item.first.cast<std::string>();
          if (!py::hasattr(o, key.c_str())) throw py::type_error("unknown field " + key);
          py::setattr(o, key.c_str(), item.second);
        }
        return g;
      }))
      .def_readwrite("H", &UnitCellGeometry::H)
      .def_readwrite("t", &UnitCellGeometry::t)
      .def_readwrite("r_b", &UnitCellGeometry::r_b)
      .def_readwrite("UC", &UnitCellGeometry::UC)
      .def_readwrite("U_L", &UnitCellGeometry::U_L)
      .def_readwrite("U_sep", &UnitCellGeometry::U_sep)
      .def_readwrite("t_ch", &UnitCellGeometry::t_ch)
      .def_readwrite("t_lim", &UnitCellGeometry::t_lim)
      .def_readwrite("W_ch", &UnitCellGeometry::W_ch)
      .def_readwrite("t_mid", &UnitCellGeometry::t_mid);

  py::class_<FingerGeometry>(m, "FingerGeometry")
      .def(py::init([](const std::vector<double>& heights, const UnitCellGeometry& proto,
                       const MaterialProps& mat) { return FingerGeometry::from_heights(heights, proto, mat); }),
           py::arg("heights"), py::arg("unit") = UnitCellGeometry{}, py::arg("material") = MaterialProps{})
      .def_readwrite("units", &FingerGeometry::units)
      .def_readwrite("material", &FingerGeometry::material)
      .def_property_readonly("n", &FingerGeometry::n);

  m.def(
      "spring_params",
      [](const UnitCellGeometry& g, const MaterialProps& mat) {
        const auto p = spring_params(g, mat);
        py::dict d;
        d["k_b"] = p.k_b;
        d["alpha"] = p.alpha;
        d["d"] = p.d;
        d["k_l"] = p.k_l;
        d["k_theta"] = p.k_theta;
        d["stability"] = to_string(classify_stability(p).kind);
        return d;
      },
      py::arg("unit"), py::arg("material") = MaterialProps{});

  m.def("nonlinear_energy", &nonlinear_energy, py::arg("x"), py::arg("k_b"), py::arg("alpha"), py::arg("d"));
  m.def("nonlinear_force", &nonlinear_force, py::arg("x"), py::arg("k_b"), py::arg("alpha"), py::arg("d"));

  m.def(
      "stable_states",
      [](const FingerGeometry& f) {
        py::list out;
        for (const auto& s : enumerate_stable_states(f).states) out.append(state_dict(s));
        return out;
      },
      py::arg("finger"), "Distinct stable states sorted by energy");

  m.def(
      "solve_pattern",
      [](const FingerGeometry& f, const std::string& pattern) {
        return state_dict(solve_pattern(build_lattice(f), parse_pattern(pattern)));
      },
      py::arg("finger"), py::arg("pattern"), "Minimum reached from the seed of a pattern such as 'RII'");

  m.def(
      "stiffness",
      [](const FingerGeometry& f, const std::string& pattern, double max_displacement) {
        const auto lat = build_lattice(f);
        StiffnessOptions o;
        o.max_displacement = max_displacement;
        return stiffness_at_state(lat, solve_pattern(lat, parse_pattern(pattern)), o).stiffness;
      },
      py::arg("finger"), py::arg("pattern"), py::arg("max_displacement") = 0.1, "Tip stiffness in N/mm");

  m.def(
      "simulate",
      [](const FingerGeometry& f, double peak, double tau1, double tau2, double tau_down, double t_end,
         double dt_out, double mass_scale) {
        const auto lat = build_lattice(f);
        DynamicsOptions o;
        o.dt_out = dt_out;
        o.mass_scale = mass_scale;
        const auto sim = integrate(lat, rest_state(lat), PressureProfile::ramp_hold_release(peak, tau1, tau2, tau_down),
                                   t_end, o);
        const auto& tr = sim.trajectory;
        Eigen::MatrixXd q(tr.states.size(), lat.dof());
        for (std::size_t i = 0; i < tr.states.size(); ++i) q.row(i) = tr.states[i].q.transpose();
        py::list events;
        for (const auto& e : sim.log.events) events.append(py::make_tuple(e.unit, to_string(e.kind), e.time));
        py::dict d;
        d["t"] = Eigen::VectorXd(Eigen::VectorXd::Map(tr.times.data(), tr.times.size()));
        d["q"] = q;
        d["events"] = events;
        d["tip_node"] = lat.tip_node;
        return d;
      },
      py::arg("finger"), py::arg("peak") = 0.1, py::arg("tau1") = 0.1, py::arg("tau2") = 0.5,
      py::arg("tau_down") = 0.05, py::arg("t_end") = 2.0, py::arg("dt_out") = 0.01, py::arg("mass_scale") = 1000.0);

  m.def(
      "fit_synthetic",
      [](const std::string& target, std::size_t rows, std::uint64_t seed) {
        const auto kind = target_kind_from_string(target);
        const auto lib = FeatureLibrary::make(3, 2);
        const auto r = fit_dataset(lib, synthetic_dataset(kind, rows, seed), 0.7, RegressionOptions{});
        py::dict d;
        d["features"] = r.names;
        d["weights"] = r.weights;
        d["intercept"] = r.intercept;
        d["r2_test"] = r.r2_test;
        return d;
      },
      py::arg("target"), py::arg("rows") = 400, py::arg("seed") = 42);

  m.def(
      "design_position",
      [](double x, double y, int segments, int budget, std::uint64_t seed) {
        Objective obj;
        obj.target_x = x;
        obj.target_y = y;
        OptimizerOptions o;
        o.budget = budget;
        o.seed = seed;
        const auto r = bayesian_optimize(obj, DesignSpace{}, segments, o);
        std::vector<double> H;
        for (const auto& u : r.best.finger.units) H.push_back(u.H);
        py::dict d;
        d["heights"] = H;
        d["objective"] = r.objective;
        d["tip"] = py::make_tuple(r.diag.tip_x, r.diag.tip_y);
        d["tip_error"] = r.diag.tip_error;
        d["finger"] = r.best.finger;
        return d;
      },
      py::arg("x"), py::arg("y"), py::arg("segments"), py::arg("budget") = 300, py::arg("seed") = 42);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one subcommand; returns (exit_code, stdout, stderr)");
}
