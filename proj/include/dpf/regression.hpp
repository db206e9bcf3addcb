#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dpf/error.hpp"

namespace dpf {

using Exponents = std::array<int, 3>;  // powers of (pi1, pi2, pi3)

// Pure powers pi_i^a (1 <= a <= n) and pairwise products pi_i^a pi_j^b with
// i < j, 1 <= a, b <= n and min(a, b) <= m.
struct FeatureLibrary {
  int max_degree = 3;
  int interaction_degree = 2;
  std::vector<Exponents> features;

  static FeatureLibrary make(int n, int m);
  static std::size_t expected_count(int n, int m);  // 3n + 3(2nm - m^2)
  std::size_t size() const { return features.size(); }
  std::string name(std::size_t j) const;
  double evaluate(std::size_t j, double pi1, double pi2, double pi3) const;
  void validate() const;
};

enum class TargetKind { Kb, Alpha, D };
const char* to_string(TargetKind k);
TargetKind target_kind_from_string(const std::string& s);

struct DataRow {
  double H = 0, t = 0, R = 0, E = 0;
  double U_sep = 0, t_ch = 0;
  double y = 0;
};

// k_b is regressed as k_b / (E R), d as (d + U_sep + t_ch/2) / R, alpha as is.
struct Dataset {
  TargetKind kind = TargetKind::Alpha;
  std::vector<DataRow> rows;

  std::size_t size() const { return rows.size(); }
  void validate() const;
  Eigen::VectorXd normalized_target() const;
  double normalize(const DataRow& r, double y) const;
  double denormalize(const DataRow& r, double z) const;
  Dataset subset(const std::vector<std::size_t>& idx) const;
};

// Header row naming H, t, r_b or R, E and the target column (y, k_b, alpha or
// d); U_sep and t_ch are optional. Comma, tab or semicolon delimited; '#'
// starts a comment line.
Dataset read_dataset(std::istream& is, TargetKind kind);
Dataset read_dataset_file(const std::string& path, TargetKind kind);
void write_dataset(std::ostream& os, const Dataset& d);

Eigen::MatrixXd build_feature_matrix(const FeatureLibrary& lib, const Dataset& data);

// argmin ||X xi - y||^2 + lambda ||xi||^2.
Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda);

// argmin (1/2N) ||X xi - y||^2 + lambda ||xi||_1 by cyclic coordinate descent.
Eigen::VectorXd lasso_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                          int max_iter = 10000, double tol = 1e-10);

enum class Penalty { Ridge, Lasso };

struct RegressionOptions {
  Penalty penalty = Penalty::Ridge;
  double lambda = 1e-6;
  bool fit_intercept = true;
  int folds = 5;
  double r2_band = 0.005;
  std::uint64_t seed = 42;
  unsigned threads = 0;
};

// Model fit on standardized columns, reported in raw units.
struct LinearModel {
  Eigen::VectorXd weights;       // raw-unit weights
  double intercept = 0;
  Eigen::VectorXd std_weights;   // weights on standardized columns
  Eigen::VectorXd mean, scale;
  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
};

LinearModel fit_standardized(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const RegressionOptions& opt);

double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

// Pooled out-of-fold r^2 with seeded fold assignment.
double cross_val_r2(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const RegressionOptions& opt);

struct RfeStep {
  std::vector<std::size_t> features;  // active column indices, ascending
  double cv_r2 = 0;
};

struct FitResult {
  std::vector<std::size_t> selected;  // column indices
  std::vector<std::string> names;
  Eigen::VectorXd weights;
  double intercept = 0;
  double r2_train = 0;
  double r2_test = 0;
  double lambda = 0;
  std::vector<RfeStep> path;  // full set first, one feature fewer per step
  std::vector<std::string> warnings;
};

FitResult rfe(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const RegressionOptions& opt);

struct Split {
  Dataset train, test;
};

Split train_test_split(const Dataset& data, double fraction, std::uint64_t seed);

// rfe on the training part, r2 on the held-out part, names from `lib`.
FitResult fit_dataset(const FeatureLibrary& lib, const Dataset& data, double train_fraction,
                      const RegressionOptions& opt);

void write_fit_report(std::ostream& os, const FitResult& r, const FeatureLibrary& lib,
                      TargetKind kind);
void write_weight_table(std::ostream& os, const FitResult& r, const FeatureLibrary& lib);
void write_cv_curve(std::ostream& os, const FitResult& r);

// Samples generated from the closed-form spring laws.
Dataset synthetic_dataset(TargetKind kind, std::size_t rows, std::uint64_t seed,
                          double noise = 0.0);

}  // namespace dpf
