#include "dpf/regression.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "dpf/model.hpp"
#include "dpf/parallel.hpp"
#include "dpf/random.hpp"

namespace dpf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, delim)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

char detect_delimiter(const std::string& header) {
  for (char c : {'\t', ',', ';'})
    if (header.find(c) != std::string::npos) return c;
  return ',';
}

double parse_number(const std::string& s, std::size_t line, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidInput, "line " + std::to_string(line) + ", column '" + column +
                                             "': not a finite number: '" + s + "'");
  }
}

}  // namespace

FeatureLibrary FeatureLibrary::make(int n, int m) {
  if (n < 1 || m < 0 || m > n)
    throw Error(ErrorCode::InvalidInput, "feature library needs n >= 1 and 0 <= m <= n");
  FeatureLibrary lib;
  lib.max_degree = n;
  lib.interaction_degree = m;
  for (int i = 0; i < 3; ++i)
    for (int a = 1; a <= n; ++a) {
      Exponents e{0, 0, 0};
      e[i] = a;
      lib.features.push_back(e);
    }
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      for (int a = 1; a <= n; ++a)
        for (int b = 1; b <= n; ++b) {
          if (std::min(a, b) > m) continue;
          Exponents e{0, 0, 0};
          e[i] = a;
          e[j] = b;
          lib.features.push_back(e);
        }
  lib.validate();
  return lib;
}

std::size_t FeatureLibrary::expected_count(int n, int m) {
  return static_cast<std::size_t>(3 * n + 3 * (2 * n * m - m * m));
}

std::string FeatureLibrary::name(std::size_t j) const {
  const Exponents& e = features.at(j);
  std::string s;
  for (int i = 0; i < 3; ++i) {
    if (e[i] == 0) continue;
    if (!s.empty()) s += "*";
    s += "pi" + std::to_string(i + 1);
    if (e[i] > 1) s += "^" + std::to_string(e[i]);
  }
  return s;
}

double FeatureLibrary::evaluate(std::size_t j, double pi1, double pi2, double pi3) const {
  const Exponents& e = features[j];
  const double p[3] = {pi1, pi2, pi3};
  double v = 1.0;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < e[i]; ++k) v *= p[i];
  return v;
}

void FeatureLibrary::validate() const {
  std::map<Exponents, int> seen;
  for (const auto& e : features) {
    if (e[0] < 0 || e[1] < 0 || e[2] < 0)
      throw Error(ErrorCode::InvalidInput, "negative exponent in feature library");
    if (e[0] + e[1] + e[2] == 0)
      throw Error(ErrorCode::InvalidInput, "constant feature in feature library");
    if (seen[e]++)
      throw Error(ErrorCode::InvalidInput, "duplicate feature in feature library");
  }
}

const char* to_string(TargetKind k) {
  switch (k) {
    case TargetKind::Kb: return "k_b";
    case TargetKind::Alpha: return "alpha";
    case TargetKind::D: return "d";
  }
  return "?";
}

TargetKind target_kind_from_string(const std::string& s) {
  if (s == "k_b" || s == "kb") return TargetKind::Kb;
  if (s == "alpha") return TargetKind::Alpha;
  if (s == "d") return TargetKind::D;
  throw Error(ErrorCode::InvalidInput, "unknown target kind '" + s + "' (k_b, alpha, d)");
}

void Dataset::validate() const {
  if (rows.size() < 10)
    throw Error(ErrorCode::InvalidInput,
                "dataset has " + std::to_string(rows.size()) + " rows, at least 10 required");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const DataRow& r = rows[i];
    for (double v : {r.H, r.t, r.R, r.E, r.U_sep, r.t_ch, r.y})
      if (!std::isfinite(v))
        throw Error(ErrorCode::InvalidInput, "row " + std::to_string(i + 1) + ": non-finite value");
    if (!(r.H > 0 && r.t > 0 && r.R > 0))
      throw Error(ErrorCode::InvalidInput,
                  "row " + std::to_string(i + 1) + ": H, t and R must be positive");
    if (kind == TargetKind::Kb && !(r.E > 0))
      throw Error(ErrorCode::InvalidInput, "row " + std::to_string(i + 1) + ": E must be positive");
  }
}

double Dataset::normalize(const DataRow& r, double y) const {
  switch (kind) {
    case TargetKind::Kb: return y / (r.E * r.R);
    case TargetKind::Alpha: return y;
    case TargetKind::D: return (y + r.U_sep + r.t_ch / 2.0) / r.R;
  }
  return y;
}

double Dataset::denormalize(const DataRow& r, double z) const {
  switch (kind) {
    case TargetKind::Kb: return z * r.E * r.R;
    case TargetKind::Alpha: return z;
    case TargetKind::D: return z * r.R - r.U_sep - r.t_ch / 2.0;
  }
  return z;
}

Eigen::VectorXd Dataset::normalized_target() const {
  Eigen::VectorXd y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) y[i] = normalize(rows[i], rows[i].y);
  return y;
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset d;
  d.kind = kind;
  d.rows.reserve(idx.size());
  for (std::size_t i : idx) d.rows.push_back(rows.at(i));
  return d;
}

Dataset read_dataset(std::istream& is, TargetKind kind) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  char delim = ',';
  while (std::getline(is, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    delim = detect_delimiter(s);
    header = split(s, delim);
    break;
  }
  if (header.empty()) throw Error(ErrorCode::InvalidInput, "dataset is empty");

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  auto find = [&](std::initializer_list<const char*> names) -> long {
    for (const char* n : names) {
      auto it = col.find(n);
      if (it != col.end()) return static_cast<long>(it->second);
    }
    return -1;
  };
  const long cH = find({"H"}), ct = find({"t"}), cR = find({"R"}), crb = find({"r_b", "rb"});
  const long cE = find({"E"}), cU = find({"U_sep"}), cch = find({"t_ch"});
  const long cy = find({"y", to_string(kind), kind == TargetKind::Kb ? "kb" : "y"});
  if (cH < 0) throw Error(ErrorCode::InvalidInput, "header: missing column 'H'");
  if (ct < 0) throw Error(ErrorCode::InvalidInput, "header: missing column 't'");
  if (cR < 0 && crb < 0) throw Error(ErrorCode::InvalidInput, "header: missing column 'R' or 'r_b'");
  if (cy < 0)
    throw Error(ErrorCode::InvalidInput,
                std::string("header: missing target column 'y' or '") + to_string(kind) + "'");
  if (kind == TargetKind::Kb && cE < 0)
    throw Error(ErrorCode::InvalidInput, "header: k_b target needs column 'E'");

  Dataset d;
  d.kind = kind;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto cells = split(s, delim);
    if (cells.size() != header.size())
      throw Error(ErrorCode::InvalidInput, "line " + std::to_string(lineno) + ": expected " +
                                               std::to_string(header.size()) + " fields, got " +
                                               std::to_string(cells.size()));
    auto get = [&](long c) { return parse_number(cells[c], lineno, header[c]); };
    DataRow r;
    r.H = get(cH);
    r.t = get(ct);
    if (cR >= 0) {
      r.R = get(cR);
    } else {
      const double rb = get(crb);
      r.R = (rb * rb + r.H * r.H) / (2.0 * r.H);
    }
    r.E = cE >= 0 ? get(cE) : 0.0;
    r.U_sep = cU >= 0 ? get(cU) : 0.0;
    r.t_ch = cch >= 0 ? get(cch) : 0.0;
    r.y = get(cy);
    d.rows.push_back(r);
  }
  d.validate();
  return d;
}

Dataset read_dataset_file(const std::string& path, TargetKind kind) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::InvalidInput, "cannot open dataset '" + path + "'");
  return read_dataset(f, kind);
}

void write_dataset(std::ostream& os, const Dataset& d) {
  os << "H,t,R,E,U_sep,t_ch," << to_string(d.kind) << "\n";
  os << std::setprecision(17);
  for (const auto& r : d.rows)
    os << r.H << ',' << r.t << ',' << r.R << ',' << r.E << ',' << r.U_sep << ',' << r.t_ch << ','
       << r.y << "\n";
}

Eigen::MatrixXd build_feature_matrix(const FeatureLibrary& lib, const Dataset& data) {
  Eigen::MatrixXd X(data.size(), lib.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const DataRow& r = data.rows[i];
    const double pi1 = r.t / r.H, pi2 = r.t / r.R, pi3 = r.H / r.R;
    for (std::size_t j = 0; j < lib.size(); ++j) X(i, j) = lib.evaluate(j, pi1, pi2, pi3);
  }
  return X;
}

Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
  if (X.rows() < 2) throw Error(ErrorCode::InvalidInput, "ridge_fit needs at least 2 rows");
  if (X.rows() != y.size()) throw Error(ErrorCode::InvalidInput, "ridge_fit: row count mismatch");
  if (lambda < 0) throw Error(ErrorCode::InvalidInput, "ridge_fit: negative lambda");
  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < X.cols())
      throw Error(ErrorCode::SingularSystem, "least squares: design matrix rank " +
                                                 std::to_string(qr.rank()) + " < " +
                                                 std::to_string(X.cols()) + " columns");
    return qr.solve(y);
  }
  const long p = X.cols();
  Eigen::MatrixXd A(X.rows() + p, p);
  A << X, std::sqrt(lambda) * Eigen::MatrixXd::Identity(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(X.rows() + p);
  b.head(X.rows()) = y;
  return A.colPivHouseholderQr().solve(b);
}

Eigen::VectorXd lasso_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                          int max_iter, double tol) {
  const long n = X.rows(), p = X.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd r = y;
  Eigen::VectorXd sq = X.colwise().squaredNorm().transpose() / static_cast<double>(n);
  for (int it = 0; it < max_iter; ++it) {
    double change = 0;
    for (long j = 0; j < p; ++j) {
      if (sq[j] == 0) continue;
      const double rho = X.col(j).dot(r) / static_cast<double>(n) + sq[j] * w[j];
      const double wj = (rho > lambda ? rho - lambda : rho < -lambda ? rho + lambda : 0.0) / sq[j];
      if (wj != w[j]) {
        r -= (wj - w[j]) * X.col(j);
        change = std::max(change, std::abs(wj - w[j]));
        w[j] = wj;
      }
    }
    if (change < tol) break;
  }
  return w;
}

Eigen::VectorXd LinearModel::predict(const Eigen::MatrixXd& X) const {
  return (X * weights).array() + intercept;
}

LinearModel fit_standardized(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const RegressionOptions& opt) {
  const long n = X.rows(), p = X.cols();
  LinearModel m;
  m.mean = opt.fit_intercept ? Eigen::VectorXd(X.colwise().mean().transpose())
                             : Eigen::VectorXd::Zero(p);
  m.scale.resize(p);
  for (long j = 0; j < p; ++j) {
    const double s = std::sqrt((X.col(j).array() - m.mean[j]).square().sum() / static_cast<double>(n));
    m.scale[j] = s > 0 ? s : 1.0;
  }
  Eigen::MatrixXd Z = (X.rowwise() - m.mean.transpose()).array().rowwise() /
                      m.scale.transpose().array();
  const double ymean = opt.fit_intercept ? y.mean() : 0.0;
  Eigen::VectorXd yc = y.array() - ymean;
  m.std_weights = opt.penalty == Penalty::Lasso ? lasso_fit(Z, yc, opt.lambda)
                                                : ridge_fit(Z, yc, opt.lambda);
  m.weights = m.std_weights.array() / m.scale.array();
  m.intercept = ymean - m.mean.dot(m.weights);
  return m;
}

double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
  const double ss_res = (y - yhat).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  if (ss_tot == 0) return ss_res == 0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

namespace {

std::vector<int> fold_assignment(std::size_t n, int k, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::vector<int> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = static_cast<int>(i % k);
  return fold;
}

Eigen::MatrixXd columns(const Eigen::MatrixXd& X, const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd S(X.rows(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) S.col(j) = X.col(cols[j]);
  return S;
}

double cv_r2_with_folds(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const std::vector<int>& fold, const RegressionOptions& opt) {
  const long n = X.rows();
  Eigen::VectorXd pred(n);
  std::vector<Eigen::VectorXd> fold_pred(opt.folds);
  std::vector<std::vector<long>> test_rows(opt.folds);
  for (long i = 0; i < n; ++i) test_rows[fold[i]].push_back(i);
  parallel_for(static_cast<std::size_t>(opt.folds), opt.threads, [&](std::size_t f) {
    const auto& te = test_rows[f];
    Eigen::MatrixXd Xtr(n - te.size(), X.cols());
    Eigen::VectorXd ytr(n - te.size());
    Eigen::MatrixXd Xte(te.size(), X.cols());
    long a = 0, b = 0;
    for (long i = 0; i < n; ++i) {
      if (fold[i] == static_cast<int>(f)) {
        Xte.row(b++) = X.row(i);
      } else {
        Xtr.row(a) = X.row(i);
        ytr[a++] = y[i];
      }
    }
    fold_pred[f] = fit_standardized(Xtr, ytr, opt).predict(Xte);
  });
  for (int f = 0; f < opt.folds; ++f)
    for (std::size_t i = 0; i < test_rows[f].size(); ++i) pred[test_rows[f][i]] = fold_pred[f][i];
  return r_squared(y, pred);
}

void check_cv(long rows, const RegressionOptions& opt) {
  if (opt.folds < 2) throw Error(ErrorCode::InvalidInput, "cross validation needs k >= 2 folds");
  if (rows < 2 * opt.folds)
    throw Error(ErrorCode::InvalidInput, "cross validation needs at least 2k rows");
}

}  // namespace

double cross_val_r2(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const RegressionOptions& opt) {
  check_cv(X.rows(), opt);
  return cv_r2_with_folds(X, y, fold_assignment(X.rows(), opt.folds, opt.seed), opt);
}

FitResult rfe(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const RegressionOptions& opt) {
  check_cv(X.rows(), opt);
  if (X.cols() < 1) throw Error(ErrorCode::InvalidInput, "rfe needs at least one feature");
  const auto fold = fold_assignment(X.rows(), opt.folds, opt.seed);
  RegressionOptions inner = opt;
  inner.threads = 1;

  FitResult res;
  res.lambda = opt.lambda;
  std::vector<std::size_t> active(X.cols());
  std::iota(active.begin(), active.end(), 0);
  while (true) {
    const Eigen::MatrixXd S = columns(X, active);
    RfeStep step;
    step.features = active;
    step.cv_r2 = cv_r2_with_folds(S, y, fold, opt);
    res.path.push_back(step);
    if (active.size() == 1) break;
    const LinearModel m = fit_standardized(S, y, inner);
    std::size_t drop = 0;
    for (std::size_t j = 1; j < active.size(); ++j)
      if (std::abs(m.std_weights[j]) < std::abs(m.std_weights[drop])) drop = j;
    active.erase(active.begin() + static_cast<long>(drop));
  }

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& s : res.path) best = std::max(best, s.cv_r2);
  const RfeStep* chosen = &res.path.front();
  for (const auto& s : res.path)
    if (s.cv_r2 >= best - opt.r2_band) chosen = &s;
  if (best < 0.1)
    res.warnings.push_back("best cross-validated r2 is " + std::to_string(best) +
                           "; the target is not explained by the library");

  res.selected = chosen->features;
  const Eigen::MatrixXd S = columns(X, res.selected);
  const LinearModel m = fit_standardized(S, y, inner);
  res.weights = m.weights;
  res.intercept = m.intercept;
  res.r2_train = r_squared(y, m.predict(S));
  res.r2_test = std::numeric_limits<double>::quiet_NaN();
  return res;
}

Split train_test_split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1))
    throw Error(ErrorCode::InvalidInput, "train fraction must lie in (0, 1)");
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 0.5));
  if (n_train == 0 || n_train >= n)
    throw Error(ErrorCode::InvalidInput, "train fraction " + std::to_string(fraction) + " on " +
                                             std::to_string(n) + " rows leaves an empty part");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  Split s;
  s.train = data.subset({perm.begin(), perm.begin() + static_cast<long>(n_train)});
  s.test = data.subset({perm.begin() + static_cast<long>(n_train), perm.end()});
  return s;
}

FitResult fit_dataset(const FeatureLibrary& lib, const Dataset& data, double train_fraction,
                      const RegressionOptions& opt) {
  data.validate();
  const Split sp = train_test_split(data, train_fraction, opt.seed);
  const Eigen::MatrixXd Xtr = build_feature_matrix(lib, sp.train);
  FitResult r = rfe(Xtr, sp.train.normalized_target(), opt);
  for (std::size_t j : r.selected) r.names.push_back(lib.name(j));
  const Eigen::MatrixXd Xte = build_feature_matrix(lib, sp.test);
  Eigen::MatrixXd S(Xte.rows(), r.selected.size());
  for (std::size_t j = 0; j < r.selected.size(); ++j) S.col(j) = Xte.col(r.selected[j]);
  const Eigen::VectorXd pred = (S * r.weights).array() + r.intercept;
  r.r2_test = r_squared(sp.test.normalized_target(), pred);
  return r;
}

void write_fit_report(std::ostream& os, const FitResult& r, const FeatureLibrary& lib,
                      TargetKind kind) {
  os << std::setprecision(10);
  os << "target = \"" << to_string(kind) << "\"\n";
  os << "library_n = " << lib.max_degree << "\n";
  os << "library_m = " << lib.interaction_degree << "\n";
  os << "library_size = " << lib.size() << "\n";
  os << "lambda = " << r.lambda << "\n";
  os << "selected_count = " << r.selected.size() << "\n";
  os << "intercept = " << r.intercept << "\n";
  os << "r2_train = " << r.r2_train << "\n";
  os << "r2_test = " << r.r2_test << "\n";
  os << "selected = [";
  for (std::size_t j = 0; j < r.selected.size(); ++j)
    os << (j ? ", " : "") << '"' << lib.name(r.selected[j]) << '"';
  os << "]\n";
  for (const auto& w : r.warnings) os << "warning = \"" << w << "\"\n";
}

void write_weight_table(std::ostream& os, const FitResult& r, const FeatureLibrary& lib) {
  os << std::setprecision(17);
  os << "feature\tpi1\tpi2\tpi3\tweight\n";
  os << "intercept\t0\t0\t0\t" << r.intercept << "\n";
  for (std::size_t j = 0; j < r.selected.size(); ++j) {
    const Exponents& e = lib.features[r.selected[j]];
    os << lib.name(r.selected[j]) << '\t' << e[0] << '\t' << e[1] << '\t' << e[2] << '\t'
       << r.weights[static_cast<long>(j)] << "\n";
  }
}

void write_cv_curve(std::ostream& os, const FitResult& r) {
  os << std::setprecision(10);
  os << "features\tcv_r2\n";
  for (const auto& s : r.path) os << s.features.size() << '\t' << s.cv_r2 << "\n";
}

Dataset synthetic_dataset(TargetKind kind, std::size_t rows, std::uint64_t seed, double noise) {
  Rng rng(seed);
  Dataset d;
  d.kind = kind;
  d.rows.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    UnitCellGeometry g;
    g.H = rng.uniform(2.0, 5.0);
    g.t = rng.uniform(0.5, 1.2);
    g.r_b = rng.uniform(5.0, 10.0);
    g.U_sep = rng.uniform(1.0, 5.0);
    g.t_ch = 1.0;
    DataRow r;
    r.H = g.H;
    r.t = g.t;
    r.R = curvature_radius(g);
    r.E = rng.uniform(5.0, 40.0);
    r.U_sep = g.U_sep;
    r.t_ch = g.t_ch;
    switch (kind) {
      case TargetKind::Kb: r.y = kb_closed_form(r.E, r.H, r.t, r.R); break;
      case TargetKind::Alpha: r.y = alpha_closed_form(r.H, r.t, r.R); break;
      case TargetKind::D: r.y = inversion_travel(r.H, r.t, r.U_sep, r.t_ch); break;
    }
    const double eps = rng.normal();
    r.y *= 1.0 + noise * eps;
    d.rows.push_back(r);
  }
  return d;
}

}  // namespace dpf
