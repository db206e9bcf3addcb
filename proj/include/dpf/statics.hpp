#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpf/error.hpp"
#include "dpf/lattice.hpp"

namespace dpf {

enum class UnitState : std::uint8_t { Rest, Inverted };
using ActivationPattern = std::vector<UnitState>;

std::string pattern_string(const ActivationPattern& p);  // e.g. "RRI"
ActivationPattern pattern_from_bits(std::size_t n, std::uint64_t bits);  // bit i -> unit i
ActivationPattern all_inverted(std::size_t n);

struct StableState {
  ActivationPattern pattern;
  Vec q;
  double energy = 0;
  double tip_x = 0, tip_y = 0;
  double grad_norm = 0;
  int iterations = 0;
  bool curvature_ok = true;
  bool admissible = true;
};

struct MinimizeOptions {
  int max_iter = 5000;
  double grad_tol = 1e-8;  // on ||grad||_inf / (1 + |E|)
  double max_step = 5.0;   // mm, largest trust-region radius
  int probe_directions = 10;
  double probe_step = 1e-4;
  double probe_tol = -1e-6;
  std::uint64_t probe_seed = 7;
  Vec external;            // constant load, minimises E - external . q
};

class NoConvergenceError : public Error {
 public:
  NoConvergenceError(const std::string& what, StableState best)
      : Error(ErrorCode::NoConvergence, what), best_(std::move(best)) {}
  const StableState& best() const { return best_; }

 private:
  StableState best_;
};

Vec geometric_initial_guess(const LatticeModel& m, const ActivationPattern& p);
Vec geometric_initial_guess(const FingerGeometry& f, const ActivationPattern& p,
                            const LatticeLayout& layout = {});

// Dense Hessian of the energy over the free coordinates.
Eigen::MatrixXd free_hessian(const LatticeModel& m, const Vec& q);

StableState minimize_energy(const LatticeModel& m, const Vec& q0, const MinimizeOptions& opt = {});

// False when a unit triangle or a dome hinge triangle has flipped its
// as-built orientation, i.e. a link has folded through the chamber.
bool is_admissible(const LatticeModel& m, const Vec& q);

// Inverted where the dome extension exceeds the snap threshold.
ActivationPattern classify_pattern(const LatticeModel& m, const Vec& q);

struct EnumerateOptions {
  MinimizeOptions minimize;
  double dedup_tol = 1e-3;  // mm, infinity norm
  unsigned threads = 0;
  std::size_t max_units = 12;
};

struct Enumeration {
  std::vector<StableState> states;     // distinct, sorted by energy
  std::vector<std::string> failures;   // seeds that did not converge
};

Enumeration enumerate_stable_states(const LatticeModel& m, const EnumerateOptions& opt = {});
Enumeration enumerate_stable_states(const FingerGeometry& f, const LatticeLayout& layout = {},
                                    const EnumerateOptions& opt = {});

// Merges `s` into `states` unless an existing state lies within tol.
bool insert_distinct(std::vector<StableState>& states, const StableState& s, double tol);

Eigen::Vector2d tip_position(const StableState& s);
Eigen::Vector2d tip_position(const LatticeModel& m, const Vec& q);

// Minimum reached from the geometric seed of pattern p. The returned pattern
// is re-classified from the converged extensions.
StableState solve_pattern(const LatticeModel& m, const ActivationPattern& p,
                          const MinimizeOptions& opt = {});

}  // namespace dpf
