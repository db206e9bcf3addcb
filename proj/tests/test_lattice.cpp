#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "dpf/error.hpp"
#include "dpf/lattice.hpp"
#include "dpf/random.hpp"

using namespace dpf;

namespace {

FingerGeometry finger(const std::vector<double>& H) {
  UnitCellGeometry u;
  u.t = 0.8;
  return FingerGeometry::from_heights(H, u, MaterialProps::ninjaflex());
}

Vec perturbed(const LatticeModel& m, Rng& rng, double amp) {
  Vec q = m.rest_coordinates();
  for (int i = 0; i < q.size(); ++i) q[i] += rng.uniform(-amp, amp);
  return q;
}

double fd_relative_error(const LatticeModel& m, const Vec& q, double h = 1e-6) {
  const Vec g = energy_gradient(m, q);
  double err = 0;
  for (int i = 0; i < q.size(); ++i) {
    Vec a = q, b = q;
    a[i] += h;
    b[i] -= h;
    const double fd = (total_energy(m, a) - total_energy(m, b)) / (2 * h);
    err = std::max(err, std::abs(fd - g[i]));
  }
  return err / std::max(1.0, g.lpNorm<Eigen::Infinity>());
}

LatticeModel two_node(ElementKind kind, double k, double alpha = 0, double d = 1) {
  LatticeModel m;
  m.add_node(0, 0);
  m.add_node(2, 0);
  if (kind == ElementKind::Nonlinear)
    m.add_nonlinear(0, 1, k, alpha, d);
  else
    m.add_spring(kind, 0, 1, k);
  m.fix_node(0);
  m.fix_dof(3);
  return m;
}

}  // namespace

TEST_SUITE("lattice") {
  TEST_CASE("single unit topology") {
    const auto m = build_lattice(finger({4.0}));
    CHECK(m.nodes.size() == 4);
    CHECK(m.nonlinear_elements.size() == 1);
    const Vec q = m.rest_coordinates();
    CHECK(energy_gradient(m, q).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(total_energy(m, q) == 0.0);
  }

  TEST_CASE("element counts follow the closed-form formulas") {
    for (int n = 1; n <= 8; ++n) {
      const auto m = build_lattice(finger(std::vector<double>(n, 4.5)));
      int counts[4] = {0, 0, 0, 0};
      for (const auto& e : m.elements) counts[static_cast<int>(e.kind)]++;
      CHECK(m.nodes.size() == static_cast<std::size_t>(2 * n + 2));
      CHECK(counts[static_cast<int>(ElementKind::Linear)] == n);
      CHECK(counts[static_cast<int>(ElementKind::Rigid)] == 2 * n + 1);
      CHECK(counts[static_cast<int>(ElementKind::Nonlinear)] == n);
      CHECK(counts[static_cast<int>(ElementKind::Torsional)] == 2 * n);
      CHECK(m.fixed_dof.size() >= 3);
      CHECK(total_energy(m, m.rest_coordinates()) == 0.0);
      CHECK(energy_gradient(m, m.rest_coordinates()).lpNorm<Eigen::Infinity>() < 1e-12);
    }
  }

  TEST_CASE("rest lengths and angles equal the as-built geometry") {
    const auto m = build_lattice(finger({3.5, 4.0, 5.0}));
    const Vec q = m.rest_coordinates();
    for (int e = 0; e < static_cast<int>(m.elements.size()); ++e) {
      if (m.elements[e].kind == ElementKind::Torsional)
        CHECK(element_angle(m, q, e) == doctest::Approx(m.elements[e].rest_angle));
      else
        CHECK(element_length(m, q, e) == doctest::Approx(m.elements[e].rest_length));
    }
  }

  TEST_CASE("analytic gradient matches central differences") {
    Rng rng(2024);
    for (int n : {1, 2, 5}) {
      std::vector<double> H;
      for (int i = 0; i < n; ++i) H.push_back(rng.uniform(3.0, 5.0));
      const auto m = build_lattice(finger(H));
      double worst = 0;
      for (int k = 0; k < 20; ++k) worst = std::max(worst, fd_relative_error(m, perturbed(m, rng, 0.5)));
      CHECK(worst < 1e-6);
    }
  }

  TEST_CASE("analytic Hessian matches central differences of the gradient") {
    Rng rng(77);
    for (int n : {1, 2, 5}) {
      std::vector<double> H;
      for (int i = 0; i < n; ++i) H.push_back(rng.uniform(3.0, 5.0));
      const auto m = build_lattice(finger(H));
      for (int k = 0; k < 10; ++k) {
        const Vec q = perturbed(m, rng, 0.5);
        const Eigen::MatrixXd A = energy_hessian(m, q);
        CHECK((A - A.transpose()).lpNorm<Eigen::Infinity>() <= 1e-9 * A.lpNorm<Eigen::Infinity>());
        const double h = 1e-6;
        double err = 0;
        for (int i = 0; i < q.size(); ++i) {
          Vec a = q, b = q;
          a[i] += h;
          b[i] -= h;
          const Vec col = (energy_gradient(m, a) - energy_gradient(m, b)) / (2 * h);
          err = std::max(err, (col - A.col(i)).lpNorm<Eigen::Infinity>());
        }
        CHECK(err / A.lpNorm<Eigen::Infinity>() < 1e-6);
      }
    }
  }

  TEST_CASE("internal forces are in translational equilibrium") {
    Rng rng(5);
    const auto m = build_lattice(finger({4.0, 4.5, 5.0, 3.5, 4.2}));
    for (int k = 0; k < 20; ++k) {
      const Vec g = energy_gradient(m, perturbed(m, rng, 1.0));
      double fx = 0, fy = 0;
      for (int i = 0; i < g.size(); i += 2) {
        fx += g[i];
        fy += g[i + 1];
      }
      CHECK(std::abs(fx) < 1e-10 * std::max(1.0, g.lpNorm<Eigen::Infinity>()));
      CHECK(std::abs(fy) < 1e-10 * std::max(1.0, g.lpNorm<Eigen::Infinity>()));
    }
  }

  TEST_CASE("energy is invariant under rigid motions") {
    Rng rng(8);
    const auto m = build_lattice(finger({4.0, 4.5, 5.0}));
    for (int k = 0; k < 20; ++k) {
      const Vec q = perturbed(m, rng, 0.5);
      const double th = rng.uniform(-3, 3), dx = rng.uniform(-10, 10), dy = rng.uniform(-10, 10);
      Vec r = q;
      for (int i = 0; i < q.size(); i += 2) {
        r[i] = std::cos(th) * q[i] - std::sin(th) * q[i + 1] + dx;
        r[i + 1] = std::sin(th) * q[i] + std::cos(th) * q[i + 1] + dy;
      }
      const double E = total_energy(m, q);
      CHECK(std::abs(total_energy(m, r) - E) <= 1e-10 * std::max(1.0, E));
    }
  }

  TEST_CASE("single linear element") {
    const auto m = two_node(ElementKind::Linear, 3.0);
    Vec q = m.rest_coordinates();
    q[2] += 0.25;
    CHECK(total_energy(m, q) == doctest::Approx(0.5 * 3.0 * 0.0625));
    const Vec g = energy_gradient(m, q);
    CHECK(g[2] == doctest::Approx(0.75));
    CHECK(g[0] == doctest::Approx(-0.75));
    CHECK(g[1] == 0.0);
    CHECK(g[3] == 0.0);
  }

  TEST_CASE("nonlinear element at full travel with alpha zero stores no energy") {
    const auto m = two_node(ElementKind::Nonlinear, 5.0, 0.0, 1.5);
    Vec q = m.rest_coordinates();
    q[2] += 1.5;
    CHECK(std::abs(total_energy(m, q)) < 1e-14);
  }

  TEST_CASE("degenerate elements are reported") {
    const auto m = two_node(ElementKind::Linear, 1.0);
    Vec q = m.rest_coordinates();
    q[2] = 0;
    try {
      energy_gradient(m, q);
      FAIL("expected DegenerateElement");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateElement);
    }
  }

  TEST_CASE("lattice dump has one record per node and element") {
    const auto m = build_lattice(finger({4.0, 4.5}));
    std::ostringstream os;
    write_lattice(os, m, m.rest_coordinates());
    std::istringstream is(os.str());
    std::string line;
    int lines = 0;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == static_cast<int>(1 + m.nodes.size() + m.elements.size()));
  }

  TEST_CASE("invalid geometry is rejected") {
    LatticeLayout l;
    l.top_height = -1.0;
    CHECK_THROWS_AS(build_lattice(finger({4.0}), l), Error);
  }
}
