#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dpf::cli {

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::InvalidInput, what); }

const Json& empty_object() {
  static const Json e = Json::object();
  return e;
}

const std::set<std::string> kRootKeys = {"material", "unit",     "finger", "layout", "minimize",
                                         "enumerate", "map",     "simulate", "fit",  "design",
                                         "gripper"};

}  // namespace

Json parse_config_text(const std::string& text, const std::string& origin) {
  Json j;
  try {
    j = Json::parse(text, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    const auto p = msg.find("syntax error");
    bad(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
        (p == std::string::npos ? msg : msg.substr(p)));
  }
  if (!j.is_object()) bad(origin + ": top level must be an object");
  for (const auto& [k, v] : j.items())
    if (!kRootKeys.count(k)) bad(origin + ": unknown section '" + k + "'");
  return j;
}

Json load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) bad("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

Section::Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) bad(path_ + ": expected an object");
}

Section Section::child_or_empty(const Json& parent, const std::string& key, const std::string& path) {
  if (parent.is_object() && parent.contains(key)) return Section(parent.at(key), path);
  return Section(empty_object(), path);
}

std::string Section::at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

bool Section::has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

const Json& Section::field(const std::string& key) const {
  if (!j_.contains(key)) bad(at(key) + ": missing required field");
  return j_.at(key);
}

double Section::number(const std::string& key) const {
  const Json& v = field(key);
  if (!v.is_number()) bad(at(key) + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad(at(key) + ": must be finite");
  return d;
}

double Section::number(const std::string& key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

int Section::integer(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const Json& v = j_.at(key);
  if (!v.is_number_integer()) bad(at(key) + ": expected an integer");
  return v.get<int>();
}

bool Section::boolean(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const Json& v = j_.at(key);
  if (!v.is_boolean()) bad(at(key) + ": expected true or false");
  return v.get<bool>();
}

std::string Section::string(const std::string& key) const {
  const Json& v = field(key);
  if (!v.is_string()) bad(at(key) + ": expected a string");
  return v.get<std::string>();
}

std::string Section::string(const std::string& key, const std::string& fallback) const {
  return has(key) ? string(key) : fallback;
}

std::vector<double> Section::numbers(const std::string& key) const {
  const Json& v = field(key);
  if (!v.is_array()) bad(at(key) + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) bad(at(key) + ": expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<double> Section::numbers(const std::string& key, const std::vector<double>& fallback) const {
  return has(key) ? numbers(key) : fallback;
}

Section Section::child(const std::string& key) const {
  if (!has(key)) return Section(empty_object(), at(key));
  return Section(j_.at(key), at(key));
}

void Section::allow(std::initializer_list<const char*> keys) const {
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j_.items())
    if (!ok.count(k)) bad(at(k) + ": unknown field");
}

MaterialProps parse_material(const Json& root) {
  const Section s = Section::child_or_empty(root, "material", "material");
  s.allow({"preset", "E", "nu", "density", "eta_internal", "eta_isotropic"});
  const std::string preset = s.string("preset", "ninjaflex");
  MaterialProps m;
  if (preset == "ninjaflex") {
    m = MaterialProps::ninjaflex();
  } else if (preset == "cheetah") {
    m = MaterialProps::cheetah();
  } else if (preset != "custom") {
    bad("material.preset: expected ninjaflex, cheetah or custom");
  }
  m.youngs_modulus = s.number("E", m.youngs_modulus);
  m.poisson_ratio = s.number("nu", m.poisson_ratio);
  m.density = s.number("density", m.density);
  m.eta_internal = s.number("eta_internal", m.eta_internal);
  m.eta_isotropic = s.number("eta_isotropic", m.eta_isotropic);
  m.validate();
  return m;
}

UnitCellGeometry parse_unit(const Json& root, bool require_height) {
  if (!root.contains("unit")) bad("unit: missing required section");
  const Section s(root.at("unit"), "unit");
  s.allow({"H", "t", "r_b", "UC", "U_L", "U_sep", "t_ch", "t_lim", "W_ch", "t_mid"});
  UnitCellGeometry g;
  g.H = require_height ? s.number("H") : s.number("H", g.H);
  g.t = s.number("t");
  g.r_b = s.number("r_b");
  g.UC = s.number("UC", g.UC);
  g.U_L = s.number("U_L", g.U_L);
  g.U_sep = s.number("U_sep", g.U_sep);
  g.t_ch = s.number("t_ch", g.t_ch);
  g.t_lim = s.number("t_lim", g.t_lim);
  g.W_ch = s.number("W_ch", g.W_ch);
  g.t_mid = s.number("t_mid", g.t_mid);
  g.validate();
  return g;
}

FingerGeometry parse_finger(const Json& root) {
  if (!root.contains("finger")) bad("finger: missing required section");
  const Section s(root.at("finger"), "finger");
  s.allow({"heights"});
  const auto H = s.numbers("heights");
  if (H.empty()) bad("finger.heights: needs at least one unit");
  const UnitCellGeometry proto = parse_unit(root, false);
  auto f = FingerGeometry::from_heights(H, proto, parse_material(root));
  f.validate();
  return f;
}

LatticeLayout parse_layout(const Json& root) {
  const Section s = Section::child_or_empty(root, "layout", "layout");
  s.allow({"top_height", "tip_height", "origin_x", "origin_y", "rigid_factor"});
  LatticeLayout l;
  auto opt = [&](const char* key, std::optional<double>& dst) {
    if (!s.raw().contains(key)) return;
    if (s.raw().at(key).is_null())
      dst.reset();
    else
      dst = s.number(key);
  };
  opt("top_height", l.top_height);
  opt("tip_height", l.tip_height);
  l.origin_x = s.number("origin_x", l.origin_x);
  l.origin_y = s.number("origin_y", l.origin_y);
  l.rigid_factor = s.number("rigid_factor", l.rigid_factor);
  if (!(l.rigid_factor > 0)) bad("layout.rigid_factor: must be positive");
  return l;
}

MinimizeOptions parse_minimize(const Json& root) {
  const Section s = Section::child_or_empty(root, "minimize", "minimize");
  s.allow({"max_iter", "grad_tol", "max_step", "probe_directions", "probe_step", "probe_tol"});
  MinimizeOptions o;
  o.max_iter = s.integer("max_iter", o.max_iter);
  o.grad_tol = s.number("grad_tol", o.grad_tol);
  o.max_step = s.number("max_step", o.max_step);
  o.probe_directions = s.integer("probe_directions", o.probe_directions);
  o.probe_step = s.number("probe_step", o.probe_step);
  o.probe_tol = s.number("probe_tol", o.probe_tol);
  if (o.max_iter < 1 || !(o.grad_tol > 0) || !(o.max_step > 0))
    bad("minimize: iteration counts and tolerances must be positive");
  return o;
}

EnumerateOptions parse_enumerate(const Json& root) {
  const Section s = Section::child_or_empty(root, "enumerate", "enumerate");
  s.allow({"dedup_tol", "max_units"});
  EnumerateOptions o;
  o.minimize = parse_minimize(root);
  o.dedup_tol = s.number("dedup_tol", o.dedup_tol);
  o.max_units = static_cast<std::size_t>(s.integer("max_units", static_cast<int>(o.max_units)));
  return o;
}

PressureProfile parse_pressure(const Section& s) {
  s.allow({"peak", "tau1", "tau2", "tau_down", "t0", "times", "pressures"});
  PressureProfile p;
  if (s.has("times") || s.has("pressures")) {
    p.times = s.numbers("times");
    p.pressures = s.numbers("pressures");
  } else if (s.has("peak")) {
    p = PressureProfile::ramp_hold_release(s.number("peak"), s.number("tau1"), s.number("tau2"),
                                           s.number("tau_down"), s.number("t0", 0.0));
  } else {
    bad(s.path() + ": give either peak, tau1, tau2, tau_down or times and pressures");
  }
  try {
    p.validate();
  } catch (const Error& e) {
    bad(s.path() + ": " + e.what());
  }
  return p;
}

DynamicsOptions parse_dynamics(const Section& s) {
  DynamicsOptions o;
  o.rtol = s.number("rtol", o.rtol);
  o.atol = s.number("atol", o.atol);
  o.dt_out = s.number("dt_out", o.dt_out);
  o.min_step = s.number("min_step", o.min_step);
  o.max_step = s.number("max_step", o.max_step);
  o.mass_scale = s.number("mass_scale", o.mass_scale);
  const Section r = s.child("relaxation");
  r.allow({"enabled", "fraction", "time_constant"});
  o.relaxation.enabled = r.boolean("enabled", o.relaxation.enabled);
  o.relaxation.fraction = r.number("fraction", o.relaxation.fraction);
  o.relaxation.time_constant = r.number("time_constant", o.relaxation.time_constant);
  if (!(o.rtol > 0) || !(o.atol > 0) || !(o.dt_out > 0) || !(o.max_step > 0) || !(o.mass_scale > 0))
    bad(s.path() + ": tolerances, steps and mass_scale must be positive");
  if (!(o.relaxation.fraction >= 0 && o.relaxation.fraction < 1))
    bad(s.path() + ".relaxation.fraction: must lie in [0, 1)");
  if (!(o.relaxation.time_constant > 0)) bad(s.path() + ".relaxation.time_constant: must be positive");
  return o;
}

namespace {

DynamicsOptions dynamics_over(const Section& s, DynamicsOptions base) {
  if (!s.has("dynamics")) return base;
  const Section d = s.child("dynamics");
  d.allow({"rtol", "atol", "dt_out", "min_step", "max_step", "mass_scale", "relaxation"});
  DynamicsOptions o = base;
  o.rtol = d.number("rtol", base.rtol);
  o.atol = d.number("atol", base.atol);
  o.dt_out = d.number("dt_out", base.dt_out);
  o.min_step = d.number("min_step", base.min_step);
  o.max_step = d.number("max_step", base.max_step);
  o.mass_scale = d.number("mass_scale", base.mass_scale);
  const Section r = d.child("relaxation");
  r.allow({"enabled", "fraction", "time_constant"});
  o.relaxation.enabled = r.boolean("enabled", base.relaxation.enabled);
  o.relaxation.fraction = r.number("fraction", base.relaxation.fraction);
  o.relaxation.time_constant = r.number("time_constant", base.relaxation.time_constant);
  return o;
}

}  // namespace

SimulateConfig parse_simulate(const Json& root) {
  if (!root.contains("simulate")) bad("simulate: missing required section");
  const Section s(root.at("simulate"), "simulate");
  s.allow({"t_end", "pressure", "rtol", "atol", "dt_out", "min_step", "max_step", "mass_scale",
           "relaxation"});
  SimulateConfig c;
  c.t_end = s.number("t_end");
  if (!(c.t_end > 0)) bad("simulate.t_end: must be positive");
  if (!s.has("pressure")) bad("simulate.pressure: missing required field");
  c.pressure = parse_pressure(s.child("pressure"));
  c.dynamics = parse_dynamics(s);
  return c;
}

MapConfig parse_map(const Json& root) {
  const Section s = Section::child_or_empty(root, "map", "map");
  s.allow({"H", "t"});
  MapConfig m;
  auto grid = [&](const char* key, double& lo, double& hi, int& steps) {
    if (!s.has(key)) return;
    const auto v = s.numbers(key);
    if (v.size() != 3 || !(v[0] < v[1]) || v[2] < 2 || v[2] != std::floor(v[2]))
      bad(std::string("map.") + key + ": expected [lo, hi, steps] with lo < hi and steps >= 2");
    lo = v[0];
    hi = v[1];
    steps = static_cast<int>(v[2]);
  };
  grid("H", m.H_lo, m.H_hi, m.H_steps);
  grid("t", m.t_lo, m.t_hi, m.t_steps);
  return m;
}

FitConfig parse_fit(const Json& root) {
  const Section s = Section::child_or_empty(root, "fit", "fit");
  s.allow({"dataset", "target", "n", "m", "lambda", "penalty", "folds", "train_fraction",
           "fit_intercept", "r2_band", "synthetic"});
  FitConfig c;
  c.dataset = s.string("dataset", "");
  c.target = target_kind_from_string(s.string("target", "alpha"));
  c.n = s.integer("n", c.n);
  c.m = s.integer("m", c.m);
  c.train_fraction = s.number("train_fraction", c.train_fraction);
  c.regression.lambda = s.number("lambda", c.regression.lambda);
  const std::string pen = s.string("penalty", "ridge");
  if (pen == "ridge")
    c.regression.penalty = Penalty::Ridge;
  else if (pen == "lasso")
    c.regression.penalty = Penalty::Lasso;
  else
    bad("fit.penalty: expected ridge or lasso");
  c.regression.folds = s.integer("folds", c.regression.folds);
  c.regression.fit_intercept = s.boolean("fit_intercept", c.regression.fit_intercept);
  c.regression.r2_band = s.number("r2_band", c.regression.r2_band);
  if (s.has("synthetic")) {
    const Section y = s.child("synthetic");
    y.allow({"rows", "noise"});
    const int rows = y.integer("rows", 200);
    if (rows < 10) bad("fit.synthetic.rows: at least 10 rows required");
    c.synthetic_rows = static_cast<std::size_t>(rows);
    c.synthetic_noise = y.number("noise", 0.0);
  }
  if (c.regression.lambda < 0) bad("fit.lambda: must be >= 0");
  return c;
}

namespace {

Range parse_range(const Section& s, const char* key, Range fallback) {
  if (!s.has(key)) return fallback;
  const auto v = s.numbers(key);
  if (v.size() != 2 || !(v[0] < v[1]))
    bad(s.path() + "." + key + ": expected [lo, hi] with lo < hi");
  return {v[0], v[1]};
}

}  // namespace

DesignConfig parse_design(const Json& root) {
  if (!root.contains("design")) bad("design: missing required section");
  const Section s(root.at("design"), "design");
  s.allow({"objective", "target", "weights", "segments", "budget", "strategy", "initial",
           "candidates", "refit_every", "local_fraction", "tie_abs", "tie_rel", "stiffness_ref",
           "stiffness", "bounds", "max_segments", "object_sizes", "metastable_tail", "metastable",
           "reset"});
  DesignConfig c;
  Objective& o = c.objective;
  o.kind = objective_kind_from_string(s.string("objective", "position"));
  if (s.has("target")) {
    const auto t = s.numbers("target");
    if (t.size() != 2) bad("design.target: expected [x, y]");
    o.target_x = t[0];
    o.target_y = t[1];
  } else if (o.kind == ObjectiveKind::PositionOnly || o.kind == ObjectiveKind::PositionStiffness) {
    bad("design.target: missing required field");
  }
  o.weights = s.numbers("weights", {});
  o.stiffness_ref = s.number("stiffness_ref", o.stiffness_ref);
  {
    const Section k = s.child("stiffness");
    k.allow({"rate", "max_displacement", "steps"});
    o.stiffness.rate = k.number("rate", o.stiffness.rate);
    o.stiffness.max_displacement = k.number("max_displacement", o.stiffness.max_displacement);
    o.stiffness.steps = k.integer("steps", o.stiffness.steps);
    o.stiffness.minimize = parse_minimize(root);
  }
  o.object_sizes = s.numbers("object_sizes", {});
  o.metastable_tail = s.integer("metastable_tail", o.metastable_tail);
  if (s.has("metastable")) {
    const Section m = s.child("metastable");
    m.allow({"load", "t_after_release", "max_alpha", "dynamics"});
    if (m.has("load")) o.metastable.load = parse_pressure(m.child("load"));
    o.metastable.t_after_release = m.number("t_after_release", o.metastable.t_after_release);
    o.metastable.max_alpha = m.number("max_alpha", o.metastable.max_alpha);
    o.metastable.dynamics = dynamics_over(m, o.metastable.dynamics);
  }
  if (s.has("reset")) {
    const Section r = s.child("reset");
    r.allow({"fixed_heights", "metastable_units", "profile1", "profile2", "t_after_release",
             "target_rt", "dynamics"});
    o.reset.fixed_heights = r.numbers("fixed_heights", o.reset.fixed_heights);
    o.reset.metastable_units = r.integer("metastable_units", o.reset.metastable_units);
    if (r.has("profile1")) o.reset.profile1 = parse_pressure(r.child("profile1"));
    if (r.has("profile2")) o.reset.profile2 = parse_pressure(r.child("profile2"));
    o.reset.t_after_release = r.number("t_after_release", o.reset.t_after_release);
    if (r.has("target_rt")) o.reset.target_rt = r.number("target_rt");
    o.reset.dynamics = dynamics_over(r, o.reset.dynamics);
  }

  DesignSpace& sp = c.space;
  sp.material = parse_material(root);
  sp.prototype = parse_unit(root, false);
  sp.layout = parse_layout(root);
  sp.max_segments = s.integer("max_segments", sp.max_segments);
  {
    const Section b = s.child("bounds");
    b.allow({"H", "U_sep", "U_L", "t", "t_lim", "base_length", "base_angle_deg"});
    sp.H = parse_range(b, "H", sp.H);
    sp.U_sep = parse_range(b, "U_sep", sp.U_sep);
    sp.U_L = parse_range(b, "U_L", sp.U_L);
    sp.t = parse_range(b, "t", sp.t);
    sp.t_lim = parse_range(b, "t_lim", sp.t_lim);
    sp.base_length = parse_range(b, "base_length", sp.base_length);
    Range deg{sp.base_angle.lo * 180.0 / M_PI, sp.base_angle.hi * 180.0 / M_PI};
    deg = parse_range(b, "base_angle_deg", deg);
    sp.base_angle = {deg.lo * M_PI / 180.0, deg.hi * M_PI / 180.0};
  }

  OptimizerOptions& op = c.optimizer;
  op.budget = s.integer("budget", op.budget);
  const std::string strat = s.string("strategy", "bayesian");
  if (strat == "bayesian")
    op.strategy = Strategy::Bayesian;
  else if (strat == "random")
    op.strategy = Strategy::Random;
  else
    bad("design.strategy: expected bayesian or random");
  op.initial = s.integer("initial", op.initial);
  op.candidates = s.integer("candidates", op.candidates);
  op.refit_every = s.integer("refit_every", op.refit_every);
  op.local_fraction = s.number("local_fraction", op.local_fraction);
  if (op.local_fraction < 0 || op.local_fraction >= 1) bad("design.local_fraction: must lie in [0, 1)");
  if (op.refit_every < 1 || op.candidates < 1) bad("design: refit_every and candidates must be positive");
  c.tie_abs = s.number("tie_abs", c.tie_abs);
  c.tie_rel = s.number("tie_rel", c.tie_rel);

  if (s.has("segments")) {
    const Json& v = s.raw().at("segments");
    if (v.is_number_integer()) {
      c.min_segments = c.max_segments = v.get<int>();
    } else {
      const auto r = s.numbers("segments");
      if (r.size() != 2 || r[0] != std::floor(r[0]) || r[1] != std::floor(r[1]))
        bad("design.segments: expected an integer or [min, max]");
      c.min_segments = static_cast<int>(r[0]);
      c.max_segments = static_cast<int>(r[1]);
    }
  } else {
    c.max_segments = sp.max_segments;
  }
  if (o.kind == ObjectiveKind::MultiAperture && !s.has("segments"))
    c.min_segments = c.max_segments = static_cast<int>(o.object_sizes.size()) + o.metastable_tail;
  if (o.kind == ObjectiveKind::DynamicReset)
    c.min_segments = c.max_segments =
        static_cast<int>(o.reset.fixed_heights.size()) + o.reset.metastable_units;
  try {
    o.validate();
    sp.validate();
  } catch (const Error& e) {
    bad(std::string("design: ") + e.what());
  }
  return c;
}

Json geometry_document(const Candidate& c, const LatticeLayout& layout) {
  Json doc = Json::object();
  const auto& m = c.finger.material;
  doc["material"] = {{"preset", "custom"},
                     {"E", m.youngs_modulus},
                     {"nu", m.poisson_ratio},
                     {"density", m.density},
                     {"eta_internal", m.eta_internal},
                     {"eta_isotropic", m.eta_isotropic}};
  const auto& u = c.finger.units.front();
  doc["unit"] = {{"t", u.t},         {"r_b", u.r_b},     {"UC", u.UC},     {"U_L", u.U_L},
                 {"U_sep", u.U_sep}, {"t_ch", u.t_ch},   {"t_lim", u.t_lim}, {"W_ch", u.W_ch},
                 {"t_mid", u.t_mid}};
  Json H = Json::array();
  for (const auto& x : c.finger.units) H.push_back(x.H);
  doc["finger"] = {{"heights", H}};
  Json l = Json::object();
  l["top_height"] = layout.top_height ? Json(*layout.top_height) : Json(nullptr);
  l["tip_height"] = layout.tip_height ? Json(*layout.tip_height) : Json(nullptr);
  l["origin_x"] = layout.origin_x;
  l["origin_y"] = layout.origin_y;
  l["rigid_factor"] = layout.rigid_factor;
  doc["layout"] = l;
  if (c.base_length != 0 || c.base_angle != 0)
    doc["gripper"] = {{"base_length", c.base_length}, {"base_angle_deg", c.base_angle * 180.0 / M_PI}};
  return doc;
}

}  // namespace dpf::cli
