#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "commands.hpp"
#include "dpf/dynamics.hpp"
#include "dpf/inverse.hpp"
#include "dpf/parallel.hpp"
#include "dpf/random.hpp"
#include "dpf/regression.hpp"
#include "dpf/statics.hpp"

using namespace dpf;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-6;
constexpr double kGradRuntime = 10.0;       // s
constexpr double kWellLocTol = 1e-3;        // fraction of d
constexpr int kScanPoints = 10000;
constexpr int kAlphaValues = 50;
constexpr int kFingerDraws = 20;
constexpr int kMultistartSeeds = 500;
constexpr double kDedupTol = 1e-3;          // mm
constexpr double kPeriodTol = 1e-3;         // relative
constexpr double kSettleTol = 1e-3;         // mm
constexpr double kDesignTipTol = 1.0;       // mm
constexpr double kForwardTipTol = 3.0;      // mm
constexpr double kDesignRuntime = 600.0;    // s
constexpr double kStiffnessGain = 1.1;
constexpr double kR2Gate = 0.99;
constexpr double kSolveRuntime = 1.0;       // s
constexpr double kPerUnitGrowth = 1.5;      // allowed growth of time per unit from n = 2 to 6
constexpr int kTimingSamples = 21;          // median over samples
constexpr int kTimingBatch = 50;            // solves per sample

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

FingerGeometry finger(const std::vector<double>& H, double t = 0.8) {
  UnitCellGeometry u;
  u.t = t;
  return FingerGeometry::from_heights(H, u, MaterialProps::ninjaflex());
}

fs::path scratch_root() {
  static const fs::path root = fs::temp_directory_path() / ("dpf_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(root);
  return root;
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  return cli::run(args, out, err);
}

std::map<std::string, std::string> read_report(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

// 1. Analytic gradient against central differences.
Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0;
  for (int n : {1, 2, 5}) {
    for (int k = 0; k < 100; ++k) {
      std::vector<double> H;
      for (int i = 0; i < n; ++i) H.push_back(rng.uniform(3.0, 5.0));
      const auto m = build_lattice(finger(H, rng.uniform(0.6, 1.0)));
      Vec q = geometric_initial_guess(m, pattern_from_bits(n, rng.index(std::size_t{1} << n)));
      for (int i = 0; i < q.size(); ++i) q[i] += rng.uniform(-0.5, 0.5);
      const Vec g = energy_gradient(m, q);
      const double h = 1e-6;
      double err = 0;
      for (int i = 0; i < q.size(); ++i) {
        Vec a = q, b = q;
        a[i] += h;
        b[i] -= h;
        err = std::max(err, std::abs((total_energy(m, a) - total_energy(m, b)) / (2 * h) - g[i]));
      }
      worst = std::max(worst, err / std::max(1.0, g.lpNorm<Eigen::Infinity>()));
    }
  }
  const double dt = seconds_since(t0);
  return {worst < kGradRelTol && dt < kGradRuntime,
          fmt("300 states n in {1,2,5}: max rel err %.2e (< %.0e), %.2f s (< %.0f s)", worst, kGradRelTol,
              dt, kGradRuntime)};
}

// 2. Static classifier against dense scans of the dome spring energy.
Outcome bistability_oracle() {
  Rng rng(202);
  int agree = 0;
  double worst_loc = 0;
  for (int i = 0; i < kAlphaValues; ++i) {
    const double alpha = 0.5 * i / (kAlphaValues - 1.0);
    const double k_b = rng.uniform(0.5, 5.0), d = rng.uniform(0.5, 4.0);
    SpringParams p;
    p.k_b = k_b;
    p.alpha = alpha;
    p.d = d;
    const auto c = classify_stability(p);
    std::vector<double> E(kScanPoints);
    for (int j = 0; j < kScanPoints; ++j) E[j] = nonlinear_energy(1.5 * d * j / (kScanPoints - 1.0), k_b, alpha, d);
    std::vector<double> wells;
    if (E[1] > E[0]) wells.push_back(0.0);
    for (int j = 1; j + 1 < kScanPoints; ++j)
      if (E[j] < E[j - 1] && E[j] <= E[j + 1]) wells.push_back(1.5 * d * j / (kScanPoints - 1.0));
    const std::size_t expected = c.kind == Stability::Bistable ? 2 : 1;
    bool ok = wells.size() == expected && wells[0] == 0.0;
    if (ok && expected == 2) {
      const double loc = std::abs(wells[1] - *c.well_extension) / d;
      worst_loc = std::max(worst_loc, loc);
      ok = loc < kWellLocTol;
    }
    agree += ok;
  }
  return {agree == kAlphaValues,
          fmt("%d/%d alpha values agree on well count, worst well offset %.1e d (< %.0e d)", agree,
              kAlphaValues, worst_loc, kWellLocTol)};
}

// 3. Enumeration bounded by 2^n and complete against random multistart.
Outcome state_enumeration() {
  Rng rng(303);
  const DesignSpace space;
  int max_states = 0, missed = 0, found_total = 0, draws = 0;
  while (draws < kFingerDraws) {
    UnitCellGeometry u;
    u.t = space.t.at(rng.uniform());
    u.U_sep = space.U_sep.at(rng.uniform());
    u.U_L = space.U_L.at(rng.uniform());
    u.t_lim = space.t_lim.at(rng.uniform());
    std::vector<double> H;
    for (int i = 0; i < 3; ++i) H.push_back(space.H.at(rng.uniform()));
    LatticeModel m;
    try {
      m = build_lattice(FingerGeometry::from_heights(H, u, MaterialProps::ninjaflex()));
    } catch (const Error&) {
      continue;
    }
    ++draws;
    const auto en = enumerate_stable_states(m);
    max_states = std::max<int>(max_states, static_cast<int>(en.states.size()));
    std::vector<Vec> seeds;
    for (int k = 0; k < kMultistartSeeds; ++k) {
      Vec q = geometric_initial_guess(m, pattern_from_bits(3, rng.index(8)));
      const double amp = rng.uniform(0.2, 1.5);
      for (int i : m.free_dofs()) q[i] += rng.uniform(-amp, amp);
      seeds.push_back(q);
    }
    std::vector<int> miss(seeds.size(), 0);
    parallel_for(seeds.size(), 0, [&](std::size_t k) {
      StableState s;
      try {
        s = minimize_energy(m, seeds[k]);
      } catch (const Error&) {
        return;
      }
      if (!s.curvature_ok || !s.admissible) return;
      for (const auto& t : en.states)
        if ((t.q - s.q).lpNorm<Eigen::Infinity>() < kDedupTol) return;
      miss[k] = 1;
    });
    for (int v : miss) missed += v;
    found_total += static_cast<int>(en.states.size());
  }
  return {max_states <= 8 && missed == 0,
          fmt("%d fingers, max %d distinct minima (<= 8), %d of %d multistart minima missed by seeding",
              kFingerDraws, max_states, missed, kFingerDraws * kMultistartSeeds)};
}

// 4. Oscillator period, damped energy decay and dynamic settling.
Outcome dynamics_sanity() {
  LatticeModel osc;
  const double k = 2.0, mass = 1e-3;
  osc.add_node(0, 0);
  osc.add_node(10, 0, false, mass);
  osc.add_spring(ElementKind::Linear, 0, 1, k);
  osc.fix_node(0);
  osc.fix_dof(3);
  osc.tip_node = 1;
  osc.probe_ref_node = 0;
  SystemState s0 = rest_state(osc);
  s0.q[2] += 0.5;
  const double T = 2 * std::numbers::pi * std::sqrt(mass / k);
  DynamicsOptions o;
  o.dt_out = T / 200;
  const auto sim = integrate(osc, s0, PressureProfile::zero(10.5 * T), 10.5 * T, o);
  std::vector<double> up;
  const auto& tr = sim.trajectory;
  for (std::size_t i = 1; i < tr.times.size(); ++i) {
    const double a = tr.states[i - 1].q[2] - 10, b = tr.states[i].q[2] - 10;
    if (a < 0 && b >= 0) up.push_back(tr.times[i - 1] + (tr.times[i] - tr.times[i - 1]) * (-a) / (b - a));
  }
  const double period = up.size() > 1 ? (up.back() - up.front()) / (up.size() - 1.0) : 0.0;
  const double period_err = std::abs(period - T) / T;

  const auto m3 = build_lattice(finger({4.5, 4.5, 4.5}));
  SystemState p0 = rest_state(m3);
  Rng rng(404);
  for (int i : m3.free_dofs()) p0.q[i] += rng.uniform(-0.2, 0.2);
  o.dt_out = 1e-3;
  const auto damped = integrate(m3, p0, PressureProfile::zero(0.05), 0.05, o);
  int rises = 0;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& s : damped.trajectory.states) {
    const double E = total_energy(m3, s.q) + kinetic_energy(m3, s.v);
    if (E > prev * (1 + 1e-8) + 1e-12) ++rises;
    prev = E;
  }

  const auto m5 = build_lattice(finger({5.0, 5.0, 5.0, 5.0, 5.0}));
  DynamicsOptions od;
  od.dt_out = 0.05;
  od.mass_scale = 100;
  const auto load = PressureProfile::ramp_hold_release(0.1, 0.1, 0.5, 0.05);
  const auto settle = integrate(m5, rest_state(m5), load, 4.0, od);
  const Vec qf = settle.trajectory.states.back().q;
  const auto ref = solve_pattern(m5, classify_pattern(m5, qf));
  const double gap = (qf - ref.q).lpNorm<Eigen::Infinity>();
  return {period_err < kPeriodTol && rises == 0 && gap < kSettleTol,
          fmt("period err %.1e (< %.0e), damped energy rises %d, 5-unit settle gap %.1e mm (< %.0e) in %s",
              period_err, kPeriodTol, rises, gap, kSettleTol, pattern_string(ref.pattern).c_str())};
}

struct PrintedDesign {
  std::vector<double> H;
  double U_sep, U_L, t, t_lim;
  double tip_x, tip_y;
};

// 5. Segment sweeps through the design subcommand and forward evaluation of
// the printed NinjaFlex geometries.
Outcome design_regression() {
  const auto t0 = std::chrono::steady_clock::now();
  struct Case {
    double x, y;
    int segments;
  };
  std::string detail;
  bool pass = true;
  for (const Case& c : {Case{25, 20, 3}, Case{35, 45, 5}}) {
    const fs::path dir = scratch_root() / fmt("design_%g_%g", c.x, c.y);
    fs::create_directories(dir);
    const fs::path cfg = dir / "config.json";
    std::ofstream(cfg) << fmt(R"({ "material": {"preset": "ninjaflex"}, "unit": {"H": 4.0, "t": 0.8, "r_b": 8},
      "design": {"objective": "position", "target": [%g, %g], "segments": [1, 8], "budget": 300} })",
                              c.x, c.y);
    const int code = cli({"design", "--config", cfg.string(), "--out", (dir / "out").string()});
    auto kv = read_report(dir / "out" / "design_report.txt");
    const int n = code == 0 ? std::stoi(kv["selected_segments"]) : -1;
    const double err = code == 0 ? std::stod(kv["tip_error"]) : INFINITY;
    const bool ok = code == 0 && n == c.segments && err < kDesignTipTol;
    pass &= ok;
    detail += fmt("(%g,%g): n=%d (want %d) tip err %.3f mm; ", c.x, c.y, n, c.segments, err);
  }
  const std::vector<PrintedDesign> rows = {
      {{4.5, 4.7, 4.8, 5.0}, 2.0, 9.9, 0.6, 1.5, 46.85, 31.22},
      {{4.1, 4.3, 4.9}, 1.0, 7.0, 0.62, 1.3, 25.34, 20.34},
      {{4.8, 4.8, 4.9, 4.9, 5.0}, 1.0, 7.3, 0.68, 1.2, 30.10, 40.70},
      {{4.5, 4.7, 5.0, 5.0}, 1.0, 7.0, 0.62, 1.4, 28.76, 29.87},
      {{4.35, 4.35, 4.72, 4.87, 4.95}, 1.01, 8.99, 0.75, 1.25, 37.98, 44.36},
  };
  double worst = 0;
  for (const auto& r : rows) {
    UnitCellGeometry u;
    u.U_sep = r.U_sep;
    u.U_L = r.U_L;
    u.t = r.t;
    u.t_lim = r.t_lim;
    const auto m = build_lattice(FingerGeometry::from_heights(r.H, u, MaterialProps::ninjaflex()));
    const auto s = solve_pattern(m, all_inverted(r.H.size()));
    worst = std::max(worst, std::hypot(s.tip_x - r.tip_x, s.tip_y - r.tip_y));
  }
  const double dt = seconds_since(t0);
  pass &= worst <= kForwardTipTol && dt < kDesignRuntime;
  detail += fmt("forward tips worst %.2f mm (<= %.0f); %.0f s (< %.0f s)", worst, kForwardTipTol, dt,
                kDesignRuntime);
  return {pass, detail};
}

// 6. Stiffness gain of the co-designed finger over the position-only design.
Outcome stiffness_codesign() {
  DesignSpace space;
  space.material = MaterialProps::ninjaflex();
  Objective pos;
  pos.kind = ObjectiveKind::PositionOnly;
  pos.target_x = 25;
  pos.target_y = 20;
  Objective stf = pos;
  stf.kind = ObjectiveKind::PositionStiffness;
  OptimizerOptions o;
  o.budget = 300;
  const int n = 3;
  const auto rp = bayesian_optimize(pos, space, n, o);
  const auto rs = bayesian_optimize(stf, space, n, o);
  const auto m = build_lattice(rp.best.finger, space.layout);
  const auto s = solve_pattern(m, all_inverted(n));
  double Kp = 0;
  std::string note;
  try {
    Kp = stiffness_at_state(m, s, pos.stiffness).stiffness;
  } catch (const Error& e) {
    note = e.what();
  }
  const double Ks = rs.diag.stiffness.value_or(0.0);
  const double gain = Kp > 0 ? Ks / Kp : 0.0;
  return {Kp > 0 && gain >= kStiffnessGain,
          fmt("target (25,20), n=3: K_pos %.4f N/mm (tip err %.2f), K_stf %.4f N/mm (tip err %.2f), gain %.2f "
              "(>= %.1f)%s",
              Kp, rp.diag.tip_error, Ks, rs.diag.tip_error, gain, kStiffnessGain,
              note.empty() ? "" : (" probe: " + note).c_str())};
}

// 7. Resetting time ordering in hold time and dome height.
Outcome resetting_trends() {
  struct Run {
    double H, hold;
  };
  const std::vector<Run> runs = {{2.8, 0.5}, {2.8, 1.0}, {2.8, 2.0}, {2.6, 1.0}, {3.0, 1.0}};
  std::vector<double> rt(runs.size(), -1);
  std::vector<std::string> errs(runs.size());
  parallel_for(runs.size(), 0, [&](std::size_t i) {
    UnitCellGeometry u;
    u.H = runs[i].H;
    u.t = 0.8;
    u.r_b = 6.5;
    u.U_sep = 1.0;
    u.U_L = 7.0;
    FingerGeometry f;
    f.units = {u};
    f.material = MaterialProps::ninjaflex();
    const auto m = build_lattice(f);
    const auto prof = PressureProfile::ramp_hold_release(0.1, 0.1, runs[i].hold, 0.05);
    DynamicsOptions o;
    o.mass_scale = 100;
    o.dt_out = 0.01;
    o.relaxation = {true, 0.5, 0.3};
    try {
      const auto sim = integrate(m, rest_state(m), prof, prof.release_time() + 15.0, o);
      const auto r = resetting_time(sim.trajectory, sim.log, 0);
      rt[i] = r ? *r : INFINITY;
    } catch (const Error& e) {
      errs[i] = e.what();
    }
  });
  bool ok = true;
  for (double v : rt) ok &= v >= 0 && std::isfinite(v);
  const bool hold_mono = rt[0] <= rt[1] && rt[1] <= rt[2];
  const bool height_mono = rt[3] <= rt[1] && rt[1] <= rt[4];
  return {ok && hold_mono && height_mono,
          fmt("H 2.8 hold {0.5,1,2}: RT %.3f %.3f %.3f s; hold 1, H {2.6,2.8,3.0}: RT %.3f %.3f %.3f s", rt[0],
              rt[1], rt[2], rt[3], rt[1], rt[4])};
}

// 8. Feature recovery and closed-form fits.
Outcome regression_pipeline() {
  const auto lib = FeatureLibrary::make(3, 2);
  const auto data = synthetic_dataset(TargetKind::Alpha, 300, 808);
  const Eigen::MatrixXd X = build_feature_matrix(lib, data);
  const std::size_t active = 7;
  const Eigen::VectorXd y = 2.5 * X.col(active);
  const auto r = rfe(X, y, RegressionOptions{});
  const bool exact = r.selected.size() == 1 && r.selected[0] == active &&
                     std::abs(r.weights[0] - 2.5) < 1e-6 * 2.5;
  std::string detail = fmt("single feature %s: selected {%s}; ", lib.name(active).c_str(),
                           [&] {
                             std::string s;
                             for (auto j : r.selected) s += (s.empty() ? "" : ",") + lib.name(j);
                             return s;
                           }()
                               .c_str());
  bool pass = exact;
  for (auto kind : {TargetKind::Alpha, TargetKind::Kb, TargetKind::D}) {
    const auto d = synthetic_dataset(kind, 400, 42);
    const auto fr = fit_dataset(lib, d, 0.7, RegressionOptions{});
    double best = 0;
    for (const auto& s : fr.path) best = std::max(best, s.cv_r2);
    pass &= best > kR2Gate;
    detail += fmt("%s cv r2 %.5f; ", to_string(kind), best);
  }
  detail += fmt("(gate > %.2f)", kR2Gate);
  return {pass, detail};
}

// 9. Single solve runtime and its growth with the segment count.
Outcome performance() {
  std::vector<double> med;
  for (int n = 2; n <= 6; ++n) {
    std::vector<double> H;
    for (int i = 0; i < n; ++i) H.push_back(4.0 + 0.2 * i);
    const auto f = finger(H, 0.8);
    std::vector<double> ts;
    for (int r = 0; r < kTimingSamples; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int b = 0; b < kTimingBatch; ++b) {
        const auto m = build_lattice(f);
        const auto s = solve_pattern(m, all_inverted(n));
        (void)s;
      }
      ts.push_back(seconds_since(t0) / kTimingBatch);
    }
    std::sort(ts.begin(), ts.end());
    med.push_back(ts[ts.size() / 2]);
  }
  const double t5 = med[3];
  const double growth = (med[4] / 6.0) / (med[0] / 2.0);
  std::string series;
  for (std::size_t i = 0; i < med.size(); ++i) series += fmt("%s%.3f", i ? " " : "", med[i] * 1e3);
  return {t5 < kSolveRuntime && growth <= kPerUnitGrowth,
          fmt("median ms per solve n=2..6: %s; n=5 %.4f s (< %.0f s); per-unit time growth n=2->6 %.2fx (<= %.1fx)",
              series.c_str(), t5, kSolveRuntime, growth, kPerUnitGrowth)};
}

// 10. Byte-identical result tables across reruns and thread counts.
Outcome determinism() {
  const fs::path dir = scratch_root() / "determinism";
  fs::create_directories(dir);
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << R"({
    "material": {"preset": "ninjaflex"},
    "unit": {"H": 3.0, "t": 0.9, "r_b": 8},
    "finger": {"heights": [4.0, 4.5, 5.0]},
    "map": {"H": [2.5, 5.0, 6], "t": [0.6, 1.0, 5]},
    "simulate": {"t_end": 1.0, "dt_out": 0.01, "mass_scale": 1000,
                 "pressure": {"peak": 0.1, "tau1": 0.1, "tau2": 0.3, "tau_down": 0.05}},
    "fit": {"target": "alpha", "synthetic": {"rows": 120, "noise": 0.01}},
    "design": {"objective": "position", "target": [25, 20]}
  })";
  const std::vector<std::vector<std::string>> subs = {
      {"unit", "--map"}, {"states"}, {"simulate", "--reset-times"}, {"fit"}, {"design", "--segments", "1-2", "--budget", "60"}};
  int identical = 0;
  std::string failed;
  for (const auto& sub : subs) {
    std::string digest[2];
    int codes[2];
    for (int k = 0; k < 2; ++k) {
      const fs::path out = dir / (sub[0] + std::to_string(k));
      std::vector<std::string> args = sub;
      args.insert(args.end(), {"--config", cfg.string(), "--out", out.string(), "--seed", "11", "--threads",
                               k == 0 ? "1" : "4"});
      codes[k] = cli(args);
      std::ifstream in(out / "manifest.json");
      digest[k] = nlohmann::json::parse(in)["results_sha256"].get<std::string>();
    }
    const bool same = codes[0] == 0 && codes[1] == 0 && digest[0] == digest[1] && !digest[0].empty();
    identical += same;
    if (!same) failed += " " + sub[0];
  }
  return {identical == static_cast<int>(subs.size()),
          fmt("%d/%zu subcommands byte-identical across reruns (threads 1 vs 4)%s%s", identical, subs.size(),
              failed.empty() ? "" : "; differing:", failed.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_check},
      {"bistability oracle", bistability_oracle},
      {"state enumeration", state_enumeration},
      {"dynamics sanity", dynamics_sanity},
      {"inverse design regression", design_regression},
      {"stiffness co-design trend", stiffness_codesign},
      {"resetting-time trends", resetting_trends},
      {"regression pipeline", regression_pipeline},
      {"performance", performance},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] "
              << o.detail << fmt(" (%.1f s)", seconds_since(t0)) << std::endl;
  }
  std::error_code ec;
  fs::remove_all(scratch_root(), ec);
  return failures == 0 ? 0 : 1;
}
