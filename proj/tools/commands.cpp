#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "config.hpp"
#include "dpf/parallel.hpp"

#ifndef DPF_VERSION
#define DPF_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace dpf::cli {

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v == 0.0 ? 0.0 : v);
  return buf;
}

namespace {

std::string fmt(double v) { return format_number(v); }
std::string fmt(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct Options {
  std::string subcommand;
  std::string config;
  std::string out = "run";
  std::uint64_t seed = 42;
  unsigned threads = 0;
  bool map = false;
  bool reset_times = false;
  std::optional<int> budget;
  std::string segments;
  std::string dataset;
};

class Run {
 public:
  Run(const Options& o, std::ostream& out) : opt(o), out_(out) {}

  const Options& opt;
  Json config = Json::object();
  std::string config_text;

  // Writes an artifact through `body` and records it for the manifest.
  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    std::ostringstream ss;
    body(ss);
    const fs::path p = fs::path(opt.out) / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorCode::InvalidInput, "cannot write '" + p.string() + "'");
    f << ss.str();
    outputs_.push_back({name, sha256_hex(ss.str()), ss.str().size()});
  }

  std::ostream& out() { return out_; }

  Json manifest_outputs(std::string& results_digest) const {
    Json a = Json::array();
    std::string cat;
    for (const auto& o : outputs_) {
      a.push_back({{"path", o.name}, {"sha256", o.digest}, {"bytes", o.bytes}});
      cat += o.name + ":" + o.digest + "\n";
    }
    results_digest = sha256_hex(cat);
    return a;
  }

 private:
  struct Output {
    std::string name, digest;
    std::size_t bytes;
  };
  std::ostream& out_;
  std::vector<Output> outputs_;
};

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidInput:
    case ErrorCode::NonPositiveD:
    case ErrorCode::GeometryInfeasible:
      return kConfigError;
    case ErrorCode::NoFeasiblePoint:
    case ErrorCode::ConstraintViolation:
    case ErrorCode::InfeasibleState:
      return kInfeasibleDesign;
    default:
      return kNumericalError;
  }
}

void write_kv(std::ostream& os, const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; }
void write_kv(std::ostream& os, const std::string& k, double v) { write_kv(os, k, fmt(v)); }
std::string quoted(const std::string& s) { return "\"" + s + "\""; }

std::string join(const std::vector<double>& v, const char* sep = ",") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + fmt(v[i]);
  return s;
}

// ---- unit ------------------------------------------------------------------

void unit_report(std::ostream& os, const UnitCellGeometry& g, const MaterialProps& mat) {
  const auto groups = dimensionless_groups(g);
  const auto sp = spring_params(g, mat);
  const auto cls = classify_stability(sp);
  write_kv(os, "H", g.H);
  write_kv(os, "t", g.t);
  write_kv(os, "r_b", g.r_b);
  write_kv(os, "E", mat.youngs_modulus);
  write_kv(os, "R", curvature_radius(g));
  write_kv(os, "pi1", groups.pi1);
  write_kv(os, "pi2", groups.pi2);
  write_kv(os, "pi3", groups.pi3);
  write_kv(os, "k_b", sp.k_b);
  write_kv(os, "alpha", sp.alpha);
  write_kv(os, "d", sp.d);
  write_kv(os, "k_l", sp.k_l);
  write_kv(os, "k_theta", sp.k_theta);
  write_kv(os, "class", quoted(to_string(cls.kind)));
  write_kv(os, "energy_barrier", cls.energy_barrier);
  write_kv(os, "second_well_energy", cls.second_well_energy);
  write_kv(os, "barrier_extension", fmt(cls.barrier_extension));
  write_kv(os, "well_extension", fmt(cls.well_extension));
  write_kv(os, "material_in_calibrated_range", mat.validate() ? "true" : "false");
}

int cmd_unit(Run& run) {
  const MaterialProps mat = parse_material(run.config);
  const UnitCellGeometry g = parse_unit(run.config);
  std::optional<MapConfig> map;
  if (run.opt.map) map = parse_map(run.config);
  run.write("unit_report.txt", [&](std::ostream& os) { unit_report(os, g, mat); });
  unit_report(run.out(), g, mat);
  if (map) {
    run.write("phase_map.tsv", [&](std::ostream& os) {
      os << "H\tt\talpha\td\tclass\n";
      for (int i = 0; i < map->H_steps; ++i) {
        const double H = map->H_lo + (map->H_hi - map->H_lo) * i / (map->H_steps - 1);
        for (int j = 0; j < map->t_steps; ++j) {
          const double t = map->t_lo + (map->t_hi - map->t_lo) * j / (map->t_steps - 1);
          UnitCellGeometry u = g;
          u.H = H;
          u.t = t;
          os << fmt(H) << '\t' << fmt(t) << '\t';
          try {
            const auto sp = spring_params(u, mat);
            os << fmt(sp.alpha) << '\t' << fmt(sp.d) << '\t' << to_string(classify_stability(sp).kind)
               << "\n";
          } catch (const Error& e) {
            os << "NA\tNA\t" << to_string(e.code()) << "\n";
          }
        }
      }
    });
  }
  return kOk;
}

// ---- states ----------------------------------------------------------------

int cmd_states(Run& run) {
  const FingerGeometry f = parse_finger(run.config);
  const LatticeLayout layout = parse_layout(run.config);
  EnumerateOptions eo = parse_enumerate(run.config);
  eo.threads = run.opt.threads;
  const LatticeModel m = build_lattice(f, layout);
  const Enumeration en = enumerate_stable_states(m, eo);
  run.write("states.tsv", [&](std::ostream& os) {
    os << "state\tpattern\tenergy\ttip_x\ttip_y\tgrad_norm\titerations\n";
    for (std::size_t i = 0; i < en.states.size(); ++i) {
      const auto& s = en.states[i];
      os << i << '\t' << pattern_string(s.pattern) << '\t' << fmt(s.energy) << '\t' << fmt(s.tip_x)
         << '\t' << fmt(s.tip_y) << '\t' << fmt(s.grad_norm) << '\t' << s.iterations << "\n";
    }
  });
  run.write("shapes.tsv", [&](std::ostream& os) {
    os << "state\tpattern\tnode\tx\ty\n";
    for (std::size_t i = 0; i < en.states.size(); ++i) {
      const auto& s = en.states[i];
      for (std::size_t k = 0; k < m.nodes.size(); ++k)
        os << i << '\t' << pattern_string(s.pattern) << '\t' << k << '\t' << fmt(s.q[2 * k]) << '\t'
           << fmt(s.q[2 * k + 1]) << "\n";
    }
  });
  run.out() << "states = " << en.states.size() << "\n";
  for (const auto& s : en.states)
    run.out() << pattern_string(s.pattern) << "  tip = (" << fmt(s.tip_x) << ", " << fmt(s.tip_y)
              << ")\n";
  for (const auto& msg : en.failures) std::cerr << "warning: " << msg << "\n";
  if (en.states.empty()) throw Error(ErrorCode::NoConvergence, "no stable state converged");
  return kOk;
}

// ---- simulate --------------------------------------------------------------

int cmd_simulate(Run& run) {
  const FingerGeometry f = parse_finger(run.config);
  const LatticeLayout layout = parse_layout(run.config);
  const SimulateConfig sc = parse_simulate(run.config);
  const LatticeModel m = build_lattice(f, layout);
  const Simulation sim = integrate(m, rest_state(m), sc.pressure, sc.t_end, sc.dynamics);
  const auto& tr = sim.trajectory;
  const std::size_t n = f.n();

  run.write("trajectory.tsv", [&](std::ostream& os) {
    os << "time\tpressure\tenergy\ttip_x\ttip_y";
    for (std::size_t u = 0; u < n; ++u) os << "\text_" << u;
    os << "\n";
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      const auto tip = tip_position(m, tr.states[i].q);
      os << fmt(tr.times[i]) << '\t' << fmt(tr.pressures[i]) << '\t' << fmt(tr.energies[i]) << '\t'
         << fmt(tip.x()) << '\t' << fmt(tip.y());
      for (double e : dome_extensions(m, tr.states[i].q)) os << '\t' << fmt(e);
      os << "\n";
    }
  });
  run.write("events.tsv", [&](std::ostream& os) {
    os << "time\tunit\tkind\n";
    for (const auto& e : sim.log.events) os << fmt(e.time) << '\t' << e.unit << '\t' << to_string(e.kind) << "\n";
  });
  run.write("units.tsv", [&](std::ostream& os) {
    os << "unit\tH\talpha\tclass\tsnap_through\tsnap_back";
    if (run.opt.reset_times) os << "\treset_time";
    os << "\n";
    for (std::size_t u = 0; u < n; ++u) {
      int through = 0, back = 0;
      for (const auto& e : sim.log.events) {
        if (e.unit != static_cast<int>(u)) continue;
        (e.kind == EventKind::SnapThrough ? through : back)++;
      }
      const auto& sp = m.unit_params[u];
      os << u << '\t' << fmt(f.units[u].H) << '\t' << fmt(sp.alpha) << '\t'
         << to_string(classify_stability(sp).kind) << '\t' << through << '\t' << back;
      if (run.opt.reset_times) {
        try {
          os << '\t' << fmt(resetting_time(tr, sim.log, static_cast<int>(u)));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::UnitNeverSnapped) throw;
          os << "\tnever_snapped";
        }
      }
      os << "\n";
    }
  });
  run.out() << "samples = " << tr.times.size() << "\nevents = " << sim.log.events.size() << "\n";
  for (const auto& e : sim.log.events)
    run.out() << fmt(e.time) << "  unit " << e.unit << "  " << to_string(e.kind) << "\n";
  return kOk;
}

// ---- fit -------------------------------------------------------------------

int cmd_fit(Run& run) {
  FitConfig fc = parse_fit(run.config);
  fc.regression.seed = run.opt.seed;
  fc.regression.threads = run.opt.threads;
  std::string path = run.opt.dataset;
  if (path.empty() && !fc.dataset.empty()) {
    path = fc.dataset;
    if (fs::path(path).is_relative() && !run.opt.config.empty())
      path = (fs::path(run.opt.config).parent_path() / path).string();
  }
  Dataset data;
  if (!path.empty()) {
    data = read_dataset_file(path, fc.target);
  } else if (fc.synthetic_rows > 0) {
    data = synthetic_dataset(fc.target, fc.synthetic_rows, run.opt.seed, fc.synthetic_noise);
    run.write("dataset.csv", [&](std::ostream& os) { write_dataset(os, data); });
  } else {
    throw Error(ErrorCode::InvalidInput, "fit.dataset: missing (give a dataset path or fit.synthetic)");
  }
  const FeatureLibrary lib = FeatureLibrary::make(fc.n, fc.m);
  const FitResult r = fit_dataset(lib, data, fc.train_fraction, fc.regression);
  run.write("fit_report.txt", [&](std::ostream& os) { write_fit_report(os, r, lib, fc.target); });
  run.write("weights.tsv", [&](std::ostream& os) { write_weight_table(os, r, lib); });
  run.write("cv_curve.tsv", [&](std::ostream& os) { write_cv_curve(os, r); });
  write_fit_report(run.out(), r, lib, fc.target);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  return kOk;
}

// ---- design ----------------------------------------------------------------

void parse_segments_flag(const std::string& s, int& lo, int& hi) {
  const auto dash = s.find_first_of("-:");
  try {
    std::size_t used = 0;
    if (dash == std::string::npos) {
      lo = hi = std::stoi(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
    } else {
      lo = std::stoi(s.substr(0, dash), &used);
      hi = std::stoi(s.substr(dash + 1));
    }
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidInput, "--segments: expected N or MIN-MAX, got '" + s + "'");
  }
  if (lo < 1 || hi < lo) throw Error(ErrorCode::InvalidInput, "--segments: expected 1 <= MIN <= MAX");
}

void diag_lines(std::ostream& os, const Diagnostics& d) {
  write_kv(os, "tip_x", d.tip_x);
  write_kv(os, "tip_y", d.tip_y);
  write_kv(os, "tip_error", d.tip_error);
  write_kv(os, "stiffness", fmt(d.stiffness));
  write_kv(os, "rt1", fmt(d.rt1));
  write_kv(os, "rt2", fmt(d.rt2));
  write_kv(os, "apertures", "[" + join(d.apertures, ", ") + "]");
  write_kv(os, "pattern", quoted(d.pattern));
}

int cmd_design(Run& run) {
  DesignConfig dc = parse_design(run.config);
  dc.optimizer.seed = run.opt.seed;
  dc.optimizer.threads = run.opt.threads;
  if (run.opt.budget) dc.optimizer.budget = *run.opt.budget;
  if (!run.opt.segments.empty()) parse_segments_flag(run.opt.segments, dc.min_segments, dc.max_segments);
  if (dc.max_segments > dc.space.max_segments) dc.space.max_segments = dc.max_segments;

  const SweepResult sweep = segment_sweep(dc.objective, dc.space, dc.min_segments, dc.max_segments,
                                          dc.optimizer, dc.tie_abs, dc.tie_rel);
  const DesignResult& best = sweep.best();

  run.write("best_geometry.json", [&](std::ostream& os) {
    os << geometry_document(best.best, dc.space.layout).dump(2) << "\n";
  });
  run.write("objective_curve.tsv", [&](std::ostream& os) {
    os << "segments\tobjective\ttip_error\tstiffness\tevaluations\tfeasible\tstatus\n";
    for (const auto& e : sweep.entries) {
      os << e.segments << '\t';
      if (e.result) {
        os << fmt(e.result->objective) << '\t' << fmt(e.result->diag.tip_error) << '\t'
           << fmt(e.result->diag.stiffness) << '\t' << e.result->evaluations << '\t'
           << e.result->feasible_evaluations << "\tok\n";
      } else {
        os << "inf\tNA\tNA\t0\t0\t" << e.error << "\n";
      }
    }
  });
  run.write("trace.tsv", [&](std::ostream& os) {
    os << "segments\teval\tvalue\tfeasible\tbest_so_far\tx\tnote\n";
    for (const auto& e : sweep.entries) {
      if (!e.result) continue;
      for (std::size_t i = 0; i < e.result->trace.size(); ++i) {
        const auto& r = e.result->trace[i];
        os << e.segments << '\t' << i << '\t' << fmt(r.value) << '\t' << (r.feasible ? 1 : 0) << '\t'
           << fmt(r.best_so_far) << '\t' << join(r.x) << '\t' << r.note << "\n";
      }
    }
  });
  auto report = [&](std::ostream& os) {
    write_kv(os, "objective_kind", quoted(to_string(dc.objective.kind)));
    write_kv(os, "selected_segments", std::to_string(sweep.best_segments));
    write_kv(os, "objective", best.objective);
    diag_lines(os, best.diag);
    std::vector<double> H;
    for (const auto& u : best.best.finger.units) H.push_back(u.H);
    write_kv(os, "heights", "[" + join(H, ", ") + "]");
    const auto& u = best.best.finger.units.front();
    write_kv(os, "U_sep", u.U_sep);
    write_kv(os, "U_L", u.U_L);
    write_kv(os, "t", u.t);
    write_kv(os, "t_lim", u.t_lim);
    if (dc.objective.kind == ObjectiveKind::MultiAperture) {
      write_kv(os, "base_length", best.best.base_length);
      write_kv(os, "base_angle_deg", best.best.base_angle * 180.0 / M_PI);
    }
    write_kv(os, "evaluations", std::to_string(best.evaluations));
    write_kv(os, "feasible_evaluations", std::to_string(best.feasible_evaluations));
  };
  run.write("design_report.txt", report);
  report(run.out());
  return kOk;
}

void write_manifest(Run& run, const Options& o, const std::string& started, int code,
                    const std::string& error, const std::vector<std::string>& args) {
  Json m = Json::object();
  m["subcommand"] = o.subcommand;
  m["version"] = DPF_VERSION;
  m["seed"] = o.seed;
  m["threads"] = o.threads;
  m["arguments"] = args;
  m["config"] = o.config;
  m["config_sha256"] = run.config_text.empty() && o.config.empty() ? "" : sha256_hex(run.config_text);
  m["started_utc"] = started;
  m["finished_utc"] = utc_now();
  m["exit_code"] = code;
  m["error"] = error;
  std::string digest;
  m["outputs"] = run.manifest_outputs(digest);
  m["results_sha256"] = digest;
  std::ofstream f(fs::path(o.out) / "manifest.json", std::ios::binary);
  f << m.dump(2) << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Reduced-order simulator and designer for dome-based pneumatic fingers", "dpf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DPF_VERSION);
  auto common = [&](CLI::App* s, bool config_required) {
    auto* c = s->add_option("--config", o.config, "Config document (JSON with comments)");
    if (config_required) c->required();
    s->add_option("--out", o.out, "Output directory")->capture_default_str();
    s->add_option("--seed", o.seed, "Seed for every random draw")->capture_default_str();
    s->add_option("--threads", o.threads, "Worker threads, 0 = hardware concurrency");
  };
  auto* unit = app.add_subcommand("unit", "Spring parameters and stability class of one unit");
  common(unit, true);
  unit->add_flag("--map", o.map, "Also sweep (H, t) and write the phase map");
  auto* states = app.add_subcommand("states", "Enumerate the stable states of a finger");
  common(states, true);
  auto* sim = app.add_subcommand("simulate", "Integrate the finger dynamics under a pressure profile");
  common(sim, true);
  sim->add_flag("--reset-times", o.reset_times, "Append per-unit resetting times");
  auto* fit = app.add_subcommand("fit", "Fit the sparse spring-parameter regressions");
  common(fit, false);
  fit->add_option("dataset", o.dataset, "Delimited dataset with a header row");
  auto* design = app.add_subcommand("design", "Inverse design by Bayesian optimisation");
  common(design, true);
  design->add_option("--budget", o.budget, "Evaluations per segment count");
  design->add_option("--segments", o.segments, "Segment count N or range MIN-MAX");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForVersion&) {
    out << DPF_VERSION << "\n";
    return kOk;
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  o.subcommand = app.get_subcommands().front()->get_name();

  const std::string started = utc_now();
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) {
    err << "error: cannot create output directory '" << o.out << "': " << ec.message() << "\n";
    return kConfigError;
  }
  Run run(o, out);
  int code = kOk;
  std::string message;
  try {
    if (!o.config.empty()) {
      if (!fs::exists(o.config)) throw Error(ErrorCode::InvalidInput, "cannot open config '" + o.config + "'");
      run.config_text = read_file(o.config);
      run.config = parse_config_text(run.config_text, o.config);
    }
    if (o.subcommand == "unit") code = cmd_unit(run);
    else if (o.subcommand == "states") code = cmd_states(run);
    else if (o.subcommand == "simulate") code = cmd_simulate(run);
    else if (o.subcommand == "fit") code = cmd_fit(run);
    else code = cmd_design(run);
  } catch (const Error& e) {
    code = exit_code_for(e.code());
    message = e.what();
  } catch (const nlohmann::json::exception& e) {
    code = kConfigError;
    message = std::string("InvalidInput: ") + e.what();
  } catch (const std::exception& e) {
    code = kNumericalError;
    message = e.what();
  }
  if (!message.empty()) err << "error: " << message << "\n";
  write_manifest(run, o, started, code, message, args);
  return code;
}

}  // namespace dpf::cli
