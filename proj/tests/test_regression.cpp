#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "dpf/error.hpp"
#include "dpf/random.hpp"
#include "dpf/regression.hpp"

using namespace dpf;

namespace {

Dataset dataset_from_rows(std::size_t n, TargetKind kind = TargetKind::Alpha) {
  Dataset d;
  d.kind = kind;
  for (std::size_t i = 0; i < n; ++i) {
    DataRow r;
    r.H = 3 + 0.1 * i;
    r.t = 0.8;
    r.R = 8;
    r.E = 12;
    r.U_sep = 1;
    r.t_ch = 1;
    r.y = 0.01 * i;
    d.rows.push_back(r);
  }
  return d;
}

Eigen::MatrixXd random_matrix(long rows, long cols, Rng& rng) {
  Eigen::MatrixXd X(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) X(i, j) = rng.normal();
  return X;
}

}  // namespace

TEST_SUITE("regression") {
  TEST_CASE("degree one library is the identity on the groups") {
    const auto lib = FeatureLibrary::make(1, 0);
    REQUIRE(lib.size() == 3);
    Dataset d = dataset_from_rows(10);
    d.rows[0].H = 5;
    d.rows[0].t = 1;
    d.rows[0].R = 5;
    const auto X = build_feature_matrix(lib, d);
    CHECK(X(0, 0) == doctest::Approx(0.2));
    CHECK(X(0, 1) == doctest::Approx(0.2));
    CHECK(X(0, 2) == doctest::Approx(1.0));
  }

  TEST_CASE("monomial evaluation and names") {
    const auto lib = FeatureLibrary::make(3, 2);
    bool found = false;
    for (std::size_t j = 0; j < lib.size(); ++j) {
      if (lib.features[j] == Exponents{2, 0, 1}) {
        found = true;
        CHECK(lib.evaluate(j, 0.2, 0.7, 1.0) == doctest::Approx(0.04));
        CHECK(lib.name(j) == "pi1^2*pi3");
      }
    }
    CHECK(found);
  }

  TEST_CASE("library size matches a brute-force enumeration") {
    for (int n = 1; n <= 5; ++n) {
      for (int m = 0; m <= n; ++m) {
        std::set<Exponents> expect;
        for (int i = 0; i < 3; ++i)
          for (int a = 1; a <= n; ++a) {
            Exponents e{0, 0, 0};
            e[i] = a;
            expect.insert(e);
          }
        for (int i = 0; i < 3; ++i)
          for (int j = i + 1; j < 3; ++j)
            for (int a = 1; a <= n; ++a)
              for (int b = 1; b <= n; ++b)
                if (std::min(a, b) <= m) {
                  Exponents e{0, 0, 0};
                  e[i] = a;
                  e[j] = b;
                  expect.insert(e);
                }
        const auto lib = FeatureLibrary::make(n, m);
        CHECK(lib.size() == expect.size());
        CHECK(FeatureLibrary::expected_count(n, m) == expect.size());
        CHECK(std::set<Exponents>(lib.features.begin(), lib.features.end()) == expect);
      }
    }
    CHECK(FeatureLibrary::make(3, 2).size() == 33);
  }

  TEST_CASE("ridge on orthonormal columns") {
    Rng rng(1);
    const Eigen::MatrixXd A = random_matrix(30, 4, rng);
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ() *
                              Eigen::MatrixXd::Identity(30, 4);
    Eigen::VectorXd y(30);
    for (int i = 0; i < 30; ++i) y[i] = rng.normal();
    CHECK((ridge_fit(Q, y, 0.0) - Q.transpose() * y).norm() < 1e-12);
    CHECK(ridge_fit(Q, y, 1e12).norm() < 1e-10);
    CHECK(ridge_fit(Q, y, 1.0).norm() < ridge_fit(Q, y, 0.0).norm());
  }

  TEST_CASE("rank-deficient least squares is singular") {
    Rng rng(2);
    Eigen::MatrixXd X = random_matrix(20, 3, rng);
    X.col(2) = X.col(0) + X.col(1);
    try {
      ridge_fit(X, Eigen::VectorXd::Ones(20), 0.0);
      FAIL("expected SingularSystem");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SingularSystem);
    }
    CHECK_NOTHROW(ridge_fit(X, Eigen::VectorXd::Ones(20), 1e-3));
  }

  TEST_CASE("ridge recovers a sparse law of the groups") {
    Rng rng(3);
    const int n = 200;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      const double H = rng.uniform(2, 5), t = rng.uniform(0.5, 1.2), r_b = rng.uniform(5, 10);
      const double R = (r_b * r_b + H * H) / (2 * H);
      const double p1 = t / H, p2 = t / R, p3 = H / R;
      X(i, 0) = p1;
      X(i, 1) = p2 * p3;
      y[i] = 3 * p1 - 2 * p2 * p3 + 1e-4 * rng.normal();
    }
    const auto w = ridge_fit(X, y, 0.0);
    CHECK(w[0] == doctest::Approx(3.0).epsilon(0.01));
    CHECK(w[1] == doctest::Approx(-2.0).epsilon(0.01));
  }

  TEST_CASE("lasso shrinks to zero for a large penalty") {
    Rng rng(4);
    const Eigen::MatrixXd X = random_matrix(50, 5, rng);
    Eigen::VectorXd y = 2 * X.col(1);
    CHECK(lasso_fit(X, y, 1e3).norm() == 0.0);
    const auto w = lasso_fit(X, y, 1e-6);
    CHECK(w[1] == doctest::Approx(2.0).epsilon(1e-3));
  }

  TEST_CASE("standardised fit round-trips to raw units") {
    Rng rng(5);
    Eigen::MatrixXd X = random_matrix(40, 6, rng);
    X.col(2) = 100.0 * X.col(2).array() + 50.0;
    Eigen::VectorXd y(40);
    for (int i = 0; i < 40; ++i) y[i] = rng.normal();
    RegressionOptions o;
    const auto m = fit_standardized(X, y, o);
    const Eigen::MatrixXd Z =
        (X.rowwise() - m.mean.transpose()).array().rowwise() / m.scale.transpose().array();
    const Eigen::VectorXd a = (Z * m.std_weights).array() + y.mean();
    const Eigen::VectorXd b = m.predict(X);
    CHECK((a - b).lpNorm<Eigen::Infinity>() <= 1e-10 * a.lpNorm<Eigen::Infinity>());
  }

  TEST_CASE("full least-squares model fits at least as well as any subset") {
    Rng rng(6);
    const Eigen::MatrixXd X = random_matrix(60, 5, rng);
    Eigen::VectorXd y(60);
    for (int i = 0; i < 60; ++i) y[i] = X(i, 0) - 0.5 * X(i, 3) + 0.3 * rng.normal();
    RegressionOptions o;
    o.lambda = 0;
    const double full = r_squared(y, fit_standardized(X, y, o).predict(X));
    for (int mask = 1; mask < 31; ++mask) {
      std::vector<int> cols;
      for (int j = 0; j < 5; ++j)
        if (mask & (1 << j)) cols.push_back(j);
      Eigen::MatrixXd S(60, static_cast<long>(cols.size()));
      for (std::size_t k = 0; k < cols.size(); ++k) S.col(static_cast<long>(k)) = X.col(cols[k]);
      CHECK(full >= r_squared(y, fit_standardized(S, y, o).predict(S)) - 1e-12);
    }
  }

  TEST_CASE("recursive elimination finds the single active feature") {
    Rng rng(7);
    const Eigen::MatrixXd X = random_matrix(200, 20, rng);
    Eigen::VectorXd y = 1.5 * X.col(7);
    for (int i = 0; i < 200; ++i) y[i] += 0.01 * rng.normal();
    const auto r = rfe(X, y, RegressionOptions{});
    REQUIRE(r.selected.size() == 1);
    CHECK(r.selected[0] == 7);
    CHECK(r.weights[0] == doctest::Approx(1.5).epsilon(0.01));
    REQUIRE(r.path.size() == 20);
    for (std::size_t k = 1; k < r.path.size(); ++k)
      CHECK(r.path[k].features.size() + 1 == r.path[k - 1].features.size());
    CHECK(r.warnings.empty());
  }

  TEST_CASE("pure noise gives a minimal set and a warning") {
    Rng rng(8);
    const Eigen::MatrixXd X = random_matrix(100, 6, rng);
    Eigen::VectorXd y(100);
    for (int i = 0; i < 100; ++i) y[i] = rng.normal();
    const auto r = rfe(X, y, RegressionOptions{});
    CHECK(r.selected.size() <= 2);
    CHECK_FALSE(r.warnings.empty());
    for (const auto& s : r.path) CHECK(s.cv_r2 < 0.1);
  }

  TEST_CASE("closed-form data is recovered with high cross-validated r2") {
    for (auto kind : {TargetKind::Alpha, TargetKind::Kb, TargetKind::D}) {
      const auto data = synthetic_dataset(kind, 400, 42);
      const int n = kind == TargetKind::Kb ? 5 : 3;
      const auto lib = FeatureLibrary::make(n, kind == TargetKind::Kb ? 3 : 2);
      const auto r = fit_dataset(lib, data, 0.7, RegressionOptions{});
      double best = 0;
      for (const auto& s : r.path) best = std::max(best, s.cv_r2);
      CHECK(best > 0.99);
      CHECK(r.r2_test > 0.99);
    }
  }

  TEST_CASE("train-test split") {
    const auto d = dataset_from_rows(10);
    const auto s = train_test_split(d, 0.7, 42);
    CHECK(s.train.size() == 7);
    CHECK(s.test.size() == 3);
    const auto t = train_test_split(d, 0.7, 42);
    for (std::size_t i = 0; i < 7; ++i) CHECK(s.train.rows[i].y == t.train.rows[i].y);
    CHECK_THROWS_AS(train_test_split(d, 0.99, 42), Error);
    CHECK_THROWS_AS(train_test_split(d, 1.0, 42), Error);
  }

  TEST_CASE("target normalisation round-trips") {
    for (auto kind : {TargetKind::Alpha, TargetKind::Kb, TargetKind::D}) {
      const auto d = synthetic_dataset(kind, 20, 1);
      for (const auto& r : d.rows) CHECK(d.denormalize(r, d.normalize(r, r.y)) == doctest::Approx(r.y));
    }
  }

  TEST_CASE("dataset parsing") {
    std::istringstream ok("# comment\nH,t,r_b,E,alpha\n" +
                          [] {
                            std::string s;
                            for (int i = 0; i < 10; ++i) s += "4,0.8,5,26,0.1\n";
                            return s;
                          }());
    const auto d = read_dataset(ok, TargetKind::Alpha);
    REQUIRE(d.size() == 10);
    CHECK(d.rows[0].R == doctest::Approx(5.125));
    std::istringstream bad("H\tt\tR\tE\ty\n4\t0.8\t5\t26\t0.1\n4\tx\t5\t26\t0.1\n");
    try {
      read_dataset(bad, TargetKind::Alpha);
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    std::ostringstream os;
    write_dataset(os, d);
    std::istringstream back(os.str());
    CHECK(read_dataset(back, TargetKind::Alpha).rows[3].H == 4.0);
  }
}
