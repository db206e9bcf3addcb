#include "dpf/inverse.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "dpf/parallel.hpp"
#include "dpf/random.hpp"

namespace dpf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

[[noreturn]] void violation(const std::string& what) { throw Error(ErrorCode::ConstraintViolation, what); }

void check_range(const char* name, const Range& r, double v, int unit = -1) {
  if (r.contains(v)) return;
  const double by = v < r.lo ? r.lo - v : v - r.hi;
  std::string where = unit >= 0 ? std::string(" of unit ") + std::to_string(unit + 1) : "";
  violation(std::string(name) + where + " = " + fmt(v) + " outside [" + fmt(r.lo) + ", " +
            fmt(r.hi) + "] by " + fmt(by));
}

DynamicsOptions reset_dynamics() {
  DynamicsOptions d;
  d.mass_scale = 1000.0;
  d.relaxation.enabled = true;
  d.relaxation.fraction = 0.5;
  d.relaxation.time_constant = 0.3;
  return d;
}

std::vector<std::size_t> bistable_units(const FingerGeometry& f, int tail) {
  std::vector<std::size_t> u(f.n() - static_cast<std::size_t>(tail));
  std::iota(u.begin(), u.end(), 0);
  return u;
}

}  // namespace

MetastableTest::MetastableTest() : dynamics(reset_dynamics()) {}
ResetSpec::ResetSpec() : dynamics(reset_dynamics()) {}

void DesignSpace::validate() const {
  const std::pair<const char*, const Range*> all[] = {
      {"H", &H},         {"U_sep", &U_sep},             {"U_L", &U_L},
      {"t", &t},         {"t_lim", &t_lim},             {"base_length", &base_length},
      {"base_angle", &base_angle}};
  for (const auto& [name, r] : all)
    if (!(r->lo < r->hi) || !std::isfinite(r->lo) || !std::isfinite(r->hi))
      throw Error(ErrorCode::InvalidInput, std::string("bounds of ") + name + " need lo < hi");
  if (max_segments < 1) throw Error(ErrorCode::InvalidInput, "max_segments must be >= 1");
  prototype.validate();
  material.validate();
}

const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::PositionOnly: return "position";
    case ObjectiveKind::PositionStiffness: return "position_stiffness";
    case ObjectiveKind::DynamicReset: return "dynamic_reset";
    case ObjectiveKind::MultiAperture: return "multi_aperture";
  }
  return "?";
}

ObjectiveKind objective_kind_from_string(const std::string& s) {
  for (auto k : {ObjectiveKind::PositionOnly, ObjectiveKind::PositionStiffness,
                 ObjectiveKind::DynamicReset, ObjectiveKind::MultiAperture})
    if (s == to_string(k)) return k;
  throw Error(ErrorCode::InvalidInput,
              "unknown objective '" + s +
                  "' (position, position_stiffness, dynamic_reset, multi_aperture)");
}

HeightOrder Objective::order() const {
  switch (kind) {
    case ObjectiveKind::PositionOnly:
    case ObjectiveKind::PositionStiffness: return HeightOrder::NonDecreasing;
    case ObjectiveKind::MultiAperture: return HeightOrder::NonIncreasing;
    case ObjectiveKind::DynamicReset: return HeightOrder::Equal;
  }
  return HeightOrder::NonDecreasing;
}

void Objective::validate() const {
  bool any = false;
  for (double w : weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidInput, "weights must be finite and >= 0");
    any = any || w > 0;
  }
  if (!weights.empty() && !any) throw Error(ErrorCode::InvalidInput, "at least one weight must be positive");
  if (!std::isfinite(target_x) || !std::isfinite(target_y))
    throw Error(ErrorCode::InvalidInput, "target must be finite");
  if (!(stiffness_ref > 0)) throw Error(ErrorCode::InvalidInput, "stiffness_ref must be positive");
  if (kind == ObjectiveKind::MultiAperture) {
    if (object_sizes.empty()) throw Error(ErrorCode::InvalidInput, "multi_aperture needs object sizes");
    for (double s : object_sizes)
      if (!std::isfinite(s) || s <= 0) throw Error(ErrorCode::InvalidInput, "object sizes must be positive");
    if (metastable_tail < 0) throw Error(ErrorCode::InvalidInput, "metastable_tail must be >= 0");
  }
  if (kind == ObjectiveKind::DynamicReset) {
    if (reset.metastable_units < 1)
      throw Error(ErrorCode::InvalidInput, "dynamic_reset needs at least one metastable unit");
    reset.profile1.validate();
    reset.profile2.validate();
    if (reset.target_rt && !std::isfinite(*reset.target_rt))
      throw Error(ErrorCode::InvalidInput, "target_rt must be finite");
  }
}

bool MetastableCache::contains(const UnitCellGeometry& g, const MaterialProps& mat,
                               const MetastableTest& test, const LatticeLayout& layout) {
  const std::array<long long, 2> key{std::llround(g.H * 1e6), std::llround(g.t * 1e6)};
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
  }
  bool member = false;
  const SpringParams sp = spring_params(g, mat);
  if (classify_stability(sp).kind == Stability::Monostable && sp.alpha <= test.max_alpha) {
    const double t_end = test.load.release_time() + test.t_after_release;
    member = classify_dynamic(g, mat, test.load, t_end, test.dynamics, layout) == Stability::Metastable;
  }
  std::lock_guard<std::mutex> lock(mu_);
  memo_[key] = member;
  return member;
}

void check_constraints(const Objective& obj, const DesignSpace& space, const Candidate& c) {
  const FingerGeometry& f = c.finger;
  if (f.n() == 0) violation("finger has no units");
  if (static_cast<int>(f.n()) > space.max_segments)
    violation("segment count " + std::to_string(f.n()) + " exceeds max_segments " +
              std::to_string(space.max_segments) + " by " +
              std::to_string(static_cast<int>(f.n()) - space.max_segments));
  const auto& u0 = f.units.front();
  for (std::size_t i = 0; i < f.n(); ++i) {
    const auto& u = f.units[i];
    const int k = static_cast<int>(i);
    check_range("H", space.H, u.H, k);
    check_range("U_sep", space.U_sep, u.U_sep, k);
    check_range("U_L", space.U_L, u.U_L, k);
    check_range("t", space.t, u.t, k);
    check_range("t_lim", space.t_lim, u.t_lim, k);
    if (std::abs(u.U_sep - u0.U_sep) > 1e-12)
      violation("U_sep of unit " + std::to_string(i + 1) + " differs from unit 1 by " +
                fmt(std::abs(u.U_sep - u0.U_sep)));
    if (std::abs(u.U_L - u0.U_L) > 1e-12)
      violation("U_L of unit " + std::to_string(i + 1) + " differs from unit 1 by " +
                fmt(std::abs(u.U_L - u0.U_L)));
  }
  const auto order = obj.order();
  if (obj.kind == ObjectiveKind::DynamicReset) {
    const std::size_t fixed = obj.reset.fixed_heights.size();
    if (f.n() != fixed + static_cast<std::size_t>(obj.reset.metastable_units))
      violation("dynamic_reset finger must have " +
                std::to_string(fixed + obj.reset.metastable_units) + " units");
    for (std::size_t i = fixed + 1; i < f.n(); ++i)
      if (std::abs(f.units[i].H - f.units[fixed].H) > 1e-12)
        violation("metastable heights must be equal; unit " + std::to_string(i + 1) + " differs by " +
                  fmt(std::abs(f.units[i].H - f.units[fixed].H)));
  } else {
    for (std::size_t i = 1; i < f.n(); ++i) {
      const double dh = f.units[i].H - f.units[i - 1].H;
      if (order == HeightOrder::NonDecreasing && dh < -1e-12)
        violation("H of unit " + std::to_string(i + 1) + " is below unit " + std::to_string(i) +
                  " by " + fmt(-dh));
      if (order == HeightOrder::NonIncreasing && dh > 1e-12)
        violation("H of unit " + std::to_string(i + 1) + " exceeds unit " + std::to_string(i) +
                  " by " + fmt(dh));
    }
  }
  if (obj.kind == ObjectiveKind::MultiAperture) {
    check_range("base_length", space.base_length, c.base_length);
    check_range("base_angle", space.base_angle, c.base_angle);
    if (static_cast<int>(f.n()) < obj.metastable_tail + static_cast<int>(obj.object_sizes.size()))
      violation("multi_aperture needs at least " +
                std::to_string(obj.metastable_tail + obj.object_sizes.size()) + " units");
  }
}

ActivationPattern sequential_pattern(const FingerGeometry& f, int state, int metastable_tail) {
  auto units = bistable_units(f, metastable_tail);
  if (state < 0 || state > static_cast<int>(units.size()))
    throw Error(ErrorCode::InfeasibleState, "state " + std::to_string(state) + " needs " +
                                                std::to_string(state) + " bistable units");
  std::stable_sort(units.begin(), units.end(), [&](std::size_t a, std::size_t b) {
    if (f.units[a].H != f.units[b].H) return f.units[a].H < f.units[b].H;
    return a > b;
  });
  ActivationPattern p(f.n(), UnitState::Rest);
  for (int j = 0; j < state; ++j) p[units[j]] = UnitState::Inverted;
  return p;
}

double aperture(const Candidate& c, const LatticeModel& m, const Vec& q) {
  const int root = m.base_nodes.empty() ? 0 : m.base_nodes.front();
  const double xl = q[2 * m.tip_node] - q[2 * root];
  const double yl = q[2 * m.tip_node + 1] - q[2 * root + 1];
  const double X = c.base_length / 2.0 + xl * std::sin(c.base_angle) - yl * std::cos(c.base_angle);
  return std::abs(2.0 * X);
}

namespace {

StableState require_state(const LatticeModel& m, const ActivationPattern& p) {
  StableState s = solve_pattern(m, p);
  if (s.pattern != p)
    throw Error(ErrorCode::InfeasibleState, "state " + pattern_string(p) + " is not stable (settles to " +
                                                pattern_string(s.pattern) + ")");
  if (!s.admissible)
    throw Error(ErrorCode::InfeasibleState, "state " + pattern_string(p) + " folds through a chamber");
  return s;
}

}  // namespace

double aperture(const Candidate& c, int state, const LatticeLayout& layout, int metastable_tail) {
  const auto m = build_lattice(c.finger, layout);
  const auto p = sequential_pattern(c.finger, state, metastable_tail);
  const StableState s = state == 0 ? solve_pattern(m, p) : require_state(m, p);
  if (s.pattern != p) throw Error(ErrorCode::InfeasibleState, "rest state is not stable");
  return aperture(c, m, s.q);
}

Evaluation evaluate_objective(const Objective& obj, const DesignSpace& space, const Candidate& c,
                              MetastableCache* cache) {
  check_constraints(obj, space, c);
  const FingerGeometry& f = c.finger;
  const auto m = build_lattice(f, space.layout);
  Evaluation ev;
  auto stiffness_term = [&](const StableState& s, double w) {
    const double K = stiffness_at_state(m, s, obj.stiffness).stiffness;
    if (!(K > 0)) throw Error(ErrorCode::InfeasibleState, "non-positive set point stiffness " + fmt(K));
    ev.diag.stiffness = K;
    return w * std::pow(obj.stiffness_ref / K, 2);
  };

  switch (obj.kind) {
    case ObjectiveKind::PositionOnly:
    case ObjectiveKind::PositionStiffness: {
      const StableState s = require_state(m, all_inverted(f.n()));
      ev.diag.tip_x = s.tip_x;
      ev.diag.tip_y = s.tip_y;
      ev.diag.pattern = pattern_string(s.pattern);
      const double d2 = std::pow(s.tip_x - obj.target_x, 2) + std::pow(s.tip_y - obj.target_y, 2);
      ev.diag.tip_error = std::sqrt(d2);
      ev.value = obj.weight(0) * d2;
      if (obj.kind == ObjectiveKind::PositionStiffness) ev.value += stiffness_term(s, obj.weight(1));
      break;
    }
    case ObjectiveKind::MultiAperture: {
      const int tail = obj.metastable_tail;
      MetastableCache local;
      MetastableCache& mc = cache ? *cache : local;
      for (std::size_t i = f.n() - tail; i < f.n(); ++i)
        if (!mc.contains(f.units[i], f.material, obj.metastable, space.layout))
          throw Error(ErrorCode::InfeasibleState, "unit " + std::to_string(i + 1) +
                                                      " (H = " + fmt(f.units[i].H) +
                                                      ") is not metastable");
      const int N = static_cast<int>(obj.object_sizes.size());
      StableState last;
      for (int j = 1; j <= N; ++j) {
        last = require_state(m, sequential_pattern(f, j, tail));
        const double a = aperture(c, m, last.q);
        ev.diag.apertures.push_back(a);
        ev.value += obj.weight(j - 1) * std::pow(obj.object_sizes[j - 1] - a, 2);
      }
      ev.diag.tip_x = last.tip_x;
      ev.diag.tip_y = last.tip_y;
      ev.diag.pattern = pattern_string(last.pattern);
      ev.value += stiffness_term(last, obj.weight(N));
      break;
    }
    case ObjectiveKind::DynamicReset: {
      const std::size_t fixed = obj.reset.fixed_heights.size();
      ActivationPattern p(f.n(), UnitState::Rest);
      for (std::size_t i = 0; i < fixed; ++i) p[i] = UnitState::Inverted;
      const StableState s = require_state(m, p);
      ev.diag.tip_x = s.tip_x;
      ev.diag.tip_y = s.tip_y;
      ev.diag.pattern = pattern_string(s.pattern);
      ev.value = stiffness_term(s, obj.weight(0));
      double rt[2] = {0, 0};
      const PressureProfile* prof[2] = {&obj.reset.profile1, &obj.reset.profile2};
      for (int k = 0; k < 2; ++k) {
        const double t_end = prof[k]->release_time() + obj.reset.t_after_release;
        const auto sim = integrate(m, rest_state(m), *prof[k], t_end, obj.reset.dynamics);
        for (std::size_t i = fixed; i < f.n(); ++i) {
          std::optional<double> r;
          try {
            r = resetting_time(sim.trajectory, sim.log, static_cast<int>(i));
          } catch (const Error& e) {
            throw Error(ErrorCode::InfeasibleState, "unit " + std::to_string(i + 1) +
                                                        " never snaps through under profile " +
                                                        std::to_string(k + 1));
          }
          if (!r)
            throw Error(ErrorCode::InfeasibleState, "unit " + std::to_string(i + 1) +
                                                        " does not reset under profile " +
                                                        std::to_string(k + 1));
          rt[k] = std::max(rt[k], *r);
        }
      }
      ev.diag.rt1 = rt[0];
      ev.diag.rt2 = rt[1];
      if (obj.reset.target_rt) {
        ev.value += obj.weight(1) * std::pow(*obj.reset.target_rt - rt[1], 2);
      } else {
        const double gap = rt[1] - rt[0];
        ev.value += gap > 0 ? obj.weight(1) / gap : kInf;
      }
      break;
    }
  }
  return ev;
}

DesignEncoding::DesignEncoding(const Objective& obj, const DesignSpace& space, int n)
    : obj_(obj), space_(space), n_(n) {
  if (obj.kind == ObjectiveKind::DynamicReset) {
    n_ = static_cast<int>(obj.reset.fixed_heights.size()) + obj.reset.metastable_units;
    heights_ = 1;
    dim_ = 2;
  } else {
    if (n < 1) throw Error(ErrorCode::InvalidInput, "segment count must be >= 1");
    heights_ = static_cast<std::size_t>(n);
    dim_ = heights_ + 4 + (obj.kind == ObjectiveKind::MultiAperture ? 2 : 0);
  }
}

std::vector<double> DesignEncoding::project(std::vector<double> x) const {
  for (double& v : x) v = std::clamp(v, 0.0, 1.0);
  if (heights_ > 1) {
    auto b = x.begin(), e = x.begin() + static_cast<long>(heights_);
    if (obj_.order() == HeightOrder::NonIncreasing)
      std::sort(b, e, std::greater<double>());
    else
      std::sort(b, e);
  }
  return x;
}

Candidate DesignEncoding::decode(const std::vector<double>& x) const {
  UnitCellGeometry u = space_.prototype;
  Candidate c;
  std::vector<double> H;
  if (obj_.kind == ObjectiveKind::DynamicReset) {
    u.t = space_.t.at(x[1]);
    H = obj_.reset.fixed_heights;
    H.insert(H.end(), obj_.reset.metastable_units, space_.H.at(x[0]));
  } else {
    for (std::size_t i = 0; i < heights_; ++i) H.push_back(space_.H.at(x[i]));
    u.U_sep = space_.U_sep.at(x[heights_]);
    u.U_L = space_.U_L.at(x[heights_ + 1]);
    u.t = space_.t.at(x[heights_ + 2]);
    u.t_lim = space_.t_lim.at(x[heights_ + 3]);
    if (obj_.kind == ObjectiveKind::MultiAperture) {
      c.base_length = space_.base_length.at(x[heights_ + 4]);
      c.base_angle = space_.base_angle.at(x[heights_ + 5]);
    }
  }
  c.finger = FingerGeometry::from_heights(H, u, space_.material);
  return c;
}

std::vector<double> DesignEncoding::encode(const Candidate& c) const {
  const auto& f = c.finger;
  std::vector<double> x;
  if (obj_.kind == ObjectiveKind::DynamicReset) {
    x = {space_.H.unit(f.units.back().H), space_.t.unit(f.units.back().t)};
    return x;
  }
  for (std::size_t i = 0; i < heights_; ++i) x.push_back(space_.H.unit(f.units[i].H));
  const auto& u = f.units.front();
  x.push_back(space_.U_sep.unit(u.U_sep));
  x.push_back(space_.U_L.unit(u.U_L));
  x.push_back(space_.t.unit(u.t));
  x.push_back(space_.t_lim.unit(u.t_lim));
  if (obj_.kind == ObjectiveKind::MultiAperture) {
    x.push_back(space_.base_length.unit(c.base_length));
    x.push_back(space_.base_angle.unit(c.base_angle));
  }
  return x;
}

std::vector<std::string> DesignEncoding::names() const {
  std::vector<std::string> s;
  if (obj_.kind == ObjectiveKind::DynamicReset) return {"H_meta", "t"};
  for (std::size_t i = 0; i < heights_; ++i) s.push_back("H" + std::to_string(i + 1));
  for (const char* n : {"U_sep", "U_L", "t", "t_lim"}) s.emplace_back(n);
  if (obj_.kind == ObjectiveKind::MultiAperture) {
    s.emplace_back("base_length");
    s.emplace_back("base_angle");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Gaussian process surrogate

namespace {

struct Gp {
  Eigen::MatrixXd X;  // rows are points
  Eigen::VectorXd y;  // standardized targets
  Eigen::VectorXd log_ls;
  double log_sf = 0, log_sn = std::log(1e-2);
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd alpha;

  double kern(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& inv_ls2) const {
    return std::exp(2.0 * log_sf - 0.5 * ((a - b).array().square() * inv_ls2.array()).sum());
  }

  bool factor() {
    const long n = X.rows();
    const Eigen::VectorXd inv = (-2.0 * log_ls).array().exp();
    Eigen::MatrixXd K(n, n);
    for (long i = 0; i < n; ++i) {
      K(i, i) = std::exp(2.0 * log_sf) + std::exp(2.0 * log_sn) + 1e-10;
      for (long j = 0; j < i; ++j) K(i, j) = K(j, i) = kern(X.row(i), X.row(j), inv);
    }
    llt.compute(K);
    if (llt.info() != Eigen::Success) return false;
    alpha = llt.solve(y);
    return true;
  }

  double log_marginal() {
    if (!factor()) return -1e300;
    const Eigen::MatrixXd L = llt.matrixL();
    return -0.5 * y.dot(alpha) - L.diagonal().array().log().sum() -
           0.5 * static_cast<double>(y.size()) * std::log(2.0 * M_PI);
  }

  void predict(const Eigen::VectorXd& x, double& mu, double& sd) const {
    const long n = X.rows();
    const Eigen::VectorXd inv = (-2.0 * log_ls).array().exp();
    Eigen::VectorXd k(n);
    for (long i = 0; i < n; ++i) k[i] = kern(x, X.row(i), inv);
    mu = k.dot(alpha);
    const Eigen::VectorXd v = llt.matrixL().solve(k);
    sd = std::sqrt(std::max(std::exp(2.0 * log_sf) - v.squaredNorm(), 1e-12));
  }
};

constexpr double kLsLo = -4.6, kLsHi = 2.3;   // length scales in [0.01, 10]
constexpr double kSfLo = -3.0, kSfHi = 3.0;
constexpr double kSnLo = -9.2, kSnHi = -0.7;  // noise sd in [1e-4, 0.5]

struct HyperCtx {
  Gp* gp;
  std::size_t dim;
};

double neg_lml(const gsl_vector* v, void* p) {
  auto* c = static_cast<HyperCtx*>(p);
  Gp& gp = *c->gp;
  double pen = 0;
  auto clampv = [&](double x, double lo, double hi) {
    if (x < lo) pen += (lo - x) * (lo - x);
    if (x > hi) pen += (x - hi) * (x - hi);
    return std::clamp(x, lo, hi);
  };
  for (std::size_t d = 0; d < c->dim; ++d) gp.log_ls[d] = clampv(gsl_vector_get(v, d), kLsLo, kLsHi);
  gp.log_sf = clampv(gsl_vector_get(v, c->dim), kSfLo, kSfHi);
  gp.log_sn = clampv(gsl_vector_get(v, c->dim + 1), kSnLo, kSnHi);
  return -gp.log_marginal() + 1e3 * pen;
}

void fit_hyper(Gp& gp, std::size_t dim, int max_iter) {
  const std::size_t np = dim + 2;
  HyperCtx ctx{&gp, dim};
  gsl_multimin_function F{neg_lml, np, &ctx};
  gsl_vector* x = gsl_vector_alloc(np);
  gsl_vector* step = gsl_vector_alloc(np);
  for (std::size_t d = 0; d < dim; ++d) gsl_vector_set(x, d, gp.log_ls[d]);
  gsl_vector_set(x, dim, gp.log_sf);
  gsl_vector_set(x, dim + 1, gp.log_sn);
  gsl_vector_set_all(step, 0.5);
  auto* M = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, np);
  gsl_multimin_fminimizer_set(M, &F, x, step);
  for (int it = 0; it < max_iter; ++it) {
    if (gsl_multimin_fminimizer_iterate(M)) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(M), 1e-3) == GSL_SUCCESS) break;
  }
  neg_lml(M->x, &ctx);
  gsl_multimin_fminimizer_free(M);
  gsl_vector_free(x);
  gsl_vector_free(step);
  gp.factor();
}

double expected_improvement(const Gp& gp, const Eigen::VectorXd& x, double best, double xi) {
  double mu, sd;
  gp.predict(x, mu, sd);
  const double imp = best - mu - xi;
  const double z = imp / sd;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return imp * cdf + sd * pdf;
}

struct AcqCtx {
  const Gp* gp;
  const Projection* project;
  double best, xi;
};

double neg_ei(const gsl_vector* v, void* p) {
  auto* c = static_cast<AcqCtx*>(p);
  std::vector<double> x(v->size);
  for (std::size_t i = 0; i < v->size; ++i) x[i] = gsl_vector_get(v, i);
  x = (*c->project)(x);
  return -expected_improvement(*c->gp, Eigen::Map<Eigen::VectorXd>(x.data(), x.size()), c->best, c->xi);
}

std::vector<double> nelder_mead(double (*f)(const gsl_vector*, void*), void* ctx,
                                const std::vector<double>& x0, double step, int max_iter,
                                double size_tol, const std::function<bool()>& stop = {}) {
  const std::size_t n = x0.size();
  gsl_multimin_function F{f, n, ctx};
  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* s = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) gsl_vector_set(x, i, x0[i]);
  gsl_vector_set_all(s, step);
  auto* M = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(M, &F, x, s);
  for (int it = 0; it < max_iter; ++it) {
    if (stop && stop()) break;
    if (gsl_multimin_fminimizer_iterate(M)) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(M), size_tol) == GSL_SUCCESS) break;
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = gsl_vector_get(M->x, i);
  gsl_multimin_fminimizer_free(M);
  gsl_vector_free(x);
  gsl_vector_free(s);
  return out;
}

struct Recorder {
  const UnitObjective* f;
  std::vector<EvalRecord> trace;
  std::map<std::vector<double>, std::size_t> seen;
  int budget = 0;
  double best = kInf;

  bool exhausted() const { return static_cast<int>(trace.size()) >= budget; }

  void push(EvalRecord r) {
    if (!r.feasible || !std::isfinite(r.value)) {
      r.feasible = r.feasible && std::isfinite(r.value);
      r.value = r.feasible ? r.value : kInf;
    }
    if (r.feasible) best = std::min(best, r.value);
    r.best_so_far = best;
    seen.emplace(r.x, trace.size());
    trace.push_back(std::move(r));
  }

  // Cached or fresh value; nullopt once the budget is spent.
  std::optional<double> eval(const std::vector<double>& x) {
    auto it = seen.find(x);
    if (it != seen.end()) return trace[it->second].value;
    if (exhausted()) return std::nullopt;
    EvalRecord r = (*f)(x);
    r.x = x;
    push(std::move(r));
    return trace.back().value;
  }
};

struct PolishCtx {
  Recorder* rec;
  const Projection* project;
};

double polish_fn(const gsl_vector* v, void* p) {
  auto* c = static_cast<PolishCtx*>(p);
  std::vector<double> x(v->size);
  double pen = 0;
  for (std::size_t i = 0; i < v->size; ++i) {
    const double xi = gsl_vector_get(v, i);
    pen += xi < 0 ? -xi : xi > 1 ? xi - 1 : 0;
    x[i] = xi;
  }
  x = (*c->project)(x);
  const auto val = c->rec->eval(x);
  if (!val) return 1e300;
  return (std::isfinite(*val) ? *val : 1e12) + 1e6 * pen;
}

std::vector<std::vector<double>> latin_hypercube(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  std::vector<std::size_t> perm(n);
  for (std::size_t d = 0; d < dim; ++d) {
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    for (std::size_t i = 0; i < n; ++i)
      pts[i][d] = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
  }
  return pts;
}

void evaluate_batch(Recorder& rec, const std::vector<std::vector<double>>& xs, unsigned threads) {
  std::vector<std::vector<double>> fresh;
  for (const auto& x : xs)
    if (!rec.seen.count(x) && std::find(fresh.begin(), fresh.end(), x) == fresh.end()) fresh.push_back(x);
  const std::size_t room = static_cast<std::size_t>(std::max(0, rec.budget - static_cast<int>(rec.trace.size())));
  if (fresh.size() > room) fresh.resize(room);
  std::vector<EvalRecord> out(fresh.size());
  parallel_for(fresh.size(), threads, [&](std::size_t i) {
    out[i] = (*rec.f)(fresh[i]);
    out[i].x = fresh[i];
  });
  for (auto& r : out) rec.push(std::move(r));
}

}  // namespace

std::vector<EvalRecord> minimize_box(const UnitObjective& f, std::size_t dim,
                                     const Projection& project, const OptimizerOptions& opt) {
  if (dim == 0) throw Error(ErrorCode::InvalidInput, "optimisation needs at least one variable");
  if (opt.budget < 1) throw Error(ErrorCode::InvalidInput, "budget must be positive");
  gsl_set_error_handler_off();
  Rng rng(opt.seed);
  Recorder rec;
  rec.f = &f;
  rec.budget = opt.budget;

  if (opt.strategy == Strategy::Random) {
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < opt.budget; ++i) {
      std::vector<double> x(dim);
      for (auto& v : x) v = rng.uniform();
      xs.push_back(project(x));
    }
    evaluate_batch(rec, xs, opt.threads);
    return rec.trace;
  }

  const int n_init = std::min(opt.budget, opt.initial > 0 ? opt.initial
                                                          : std::max(10, 2 * static_cast<int>(dim) + 1));
  const int polish = static_cast<int>(std::lround(opt.local_fraction * opt.budget));
  const int bo_end = std::max(n_init, opt.budget - polish);
  {
    auto pts = latin_hypercube(static_cast<std::size_t>(n_init), dim, rng);
    for (auto& p : pts) p = project(p);
    evaluate_batch(rec, pts, opt.threads);
  }

  Gp gp;
  gp.log_ls = Eigen::VectorXd::Constant(static_cast<long>(dim), std::log(0.3));
  int last_fit = -1;
  while (static_cast<int>(rec.trace.size()) < bo_end) {
    const long n = static_cast<long>(rec.trace.size());
    double zmax = -kInf;
    std::vector<double> z(n);
    for (long i = 0; i < n; ++i) {
      z[i] = rec.trace[i].feasible ? std::log(rec.trace[i].value + 1e-3) : kInf;
      if (rec.trace[i].feasible) zmax = std::max(zmax, z[i]);
    }
    std::vector<double> next;
    if (!std::isfinite(zmax)) {
      next.resize(dim);
      for (auto& v : next) v = rng.uniform();
      next = project(next);
    } else {
      for (auto& v : z)
        if (!std::isfinite(v)) v = zmax;
      const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
      double var = 0;
      for (double v : z) var += (v - mean) * (v - mean);
      const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-9);
      gp.X.resize(n, static_cast<long>(dim));
      gp.y.resize(n);
      for (long i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < dim; ++d) gp.X(i, static_cast<long>(d)) = rec.trace[i].x[d];
        gp.y[i] = (z[i] - mean) / sd;
      }
      if (last_fit < 0 || n - last_fit >= opt.refit_every) {
        fit_hyper(gp, dim, 150);
        last_fit = static_cast<int>(n);
      } else if (!gp.factor()) {
        fit_hyper(gp, dim, 150);
        last_fit = static_cast<int>(n);
      }
      const double best = gp.y.minCoeff();
      std::size_t inc = 0;
      for (long i = 1; i < n; ++i)
        if (gp.y[i] < gp.y[static_cast<long>(inc)]) inc = static_cast<std::size_t>(i);

      std::vector<std::pair<double, std::vector<double>>> starts;
      auto score = [&](std::vector<double> x) {
        x = project(x);
        const double ei = expected_improvement(gp, Eigen::Map<Eigen::VectorXd>(x.data(), x.size()), best, opt.xi);
        starts.emplace_back(-ei, x);
      };
      for (int k = 0; k < opt.candidates; ++k) {
        std::vector<double> x(dim);
        for (auto& v : x) v = rng.uniform();
        score(x);
      }
      for (int k = 0; k < 16; ++k) {
        std::vector<double> x = rec.trace[inc].x;
        for (auto& v : x) v = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
        score(x);
      }
      std::stable_sort(starts.begin(), starts.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      AcqCtx ctx{&gp, &project, best, opt.xi};
      double best_acq = starts.front().first;
      next = starts.front().second;
      for (int s = 0; s < std::min<int>(opt.refine_starts, static_cast<int>(starts.size())); ++s) {
        auto x = project(nelder_mead(neg_ei, &ctx, starts[s].second, 0.05, 60, 1e-4));
        const double v = -expected_improvement(gp, Eigen::Map<Eigen::VectorXd>(x.data(), x.size()), best, opt.xi);
        if (v < best_acq) {
          best_acq = v;
          next = x;
        }
      }
      if (rec.seen.count(next)) {
        for (auto& v : next) v = rng.uniform();
        next = project(next);
      }
    }
    evaluate_batch(rec, {next}, 1);
  }

  // Local polish from the incumbent on the true objective.
  PolishCtx pc{&rec, &project};
  double step = 0.05;
  int stall = 0;
  while (!rec.exhausted() && std::isfinite(rec.best) && stall < 3) {
    std::size_t inc = 0;
    for (std::size_t i = 0; i < rec.trace.size(); ++i)
      if (rec.trace[i].value < rec.trace[inc].value) inc = i;
    const double before = rec.best;
    const std::size_t used = rec.trace.size();
    nelder_mead(polish_fn, &pc, rec.trace[inc].x, step, 100000, 1e-6, [&] { return rec.exhausted(); });
    if (rec.trace.size() == used) break;
    if (rec.best < before) {
      stall = 0;
    } else {
      ++stall;
      step *= 0.3;
    }
  }
  return rec.trace;
}

DesignResult bayesian_optimize(const Objective& obj, const DesignSpace& space, int n,
                               const OptimizerOptions& opt) {
  obj.validate();
  space.validate();
  const DesignEncoding enc(obj, space, n);
  if (opt.budget < static_cast<int>(10 * enc.dim()))
    throw Error(ErrorCode::InvalidInput, "budget " + std::to_string(opt.budget) + " is below 10 x dimension (" +
                                             std::to_string(10 * enc.dim()) + ")");
  MetastableCache cache;
  UnitObjective f = [&](const std::vector<double>& x) {
    EvalRecord r;
    try {
      r.value = evaluate_objective(obj, space, enc.decode(x), &cache).value;
      r.feasible = std::isfinite(r.value);
      if (!r.feasible) r.note = "unbounded objective";
    } catch (const Error& e) {
      r.value = kInf;
      r.feasible = false;
      r.note = e.what();
    }
    return r;
  };
  Projection proj = [&](std::vector<double> x) { return enc.project(std::move(x)); };
  DesignResult res;
  res.segments = enc.segments();
  res.names = enc.names();
  res.trace = minimize_box(f, enc.dim(), proj, opt);
  res.evaluations = static_cast<int>(res.trace.size());
  std::size_t best = res.trace.size();
  for (std::size_t i = 0; i < res.trace.size(); ++i) {
    if (!res.trace[i].feasible) continue;
    ++res.feasible_evaluations;
    if (best == res.trace.size() || res.trace[i].value < res.trace[best].value) best = i;
  }
  if (best == res.trace.size())
    throw Error(ErrorCode::NoFeasiblePoint, "no feasible design among " +
                                                std::to_string(res.trace.size()) + " evaluations");
  res.best_x = res.trace[best].x;
  res.best = enc.decode(res.best_x);
  check_constraints(obj, space, res.best);
  const Evaluation ev = evaluate_objective(obj, space, res.best, &cache);
  res.objective = ev.value;
  res.diag = ev.diag;
  return res;
}

const DesignResult& SweepResult::best() const {
  for (const auto& e : entries)
    if (e.segments == best_segments && e.result) return *e.result;
  throw Error(ErrorCode::NoFeasiblePoint, "no segment count produced a feasible design");
}

SweepResult segment_sweep(const Objective& obj, const DesignSpace& space, int min_n, int max_n,
                          const OptimizerOptions& opt, double tie_abs, double tie_rel) {
  if (min_n < 1 || min_n > max_n || max_n > space.max_segments)
    throw Error(ErrorCode::InvalidInput, "segment range must satisfy 1 <= min <= max <= max_segments");
  SweepResult sw;
  sw.tie_abs = tie_abs;
  sw.tie_rel = tie_rel;
  double best = kInf;
  bool all_invalid = true;
  std::string errors;
  for (int n = min_n; n <= max_n; ++n) {
    SweepEntry e;
    e.segments = n;
    OptimizerOptions o = opt;
    o.seed = opt.seed + 1000003ULL * static_cast<std::uint64_t>(n);
    try {
      e.result = bayesian_optimize(obj, space, n, o);
      best = std::min(best, e.result->objective);
      all_invalid = false;
    } catch (const Error& err) {
      e.error = err.what();
      if (err.code() != ErrorCode::InvalidInput) all_invalid = false;
      errors += (errors.empty() ? "" : "; ") + ("n=" + std::to_string(n) + ": " + e.error);
    }
    sw.entries.push_back(std::move(e));
  }
  if (!std::isfinite(best)) {
    if (all_invalid) throw Error(ErrorCode::InvalidInput, errors);
    throw Error(ErrorCode::NoFeasiblePoint, "no segment count produced a feasible design (" + errors + ")");
  }
  const double tol = std::max(tie_abs, tie_rel * std::abs(best));
  for (const auto& e : sw.entries)
    if (e.result && e.result->objective <= best + tol) {
      sw.best_segments = e.segments;
      break;
    }
  return sw;
}

}  // namespace dpf
