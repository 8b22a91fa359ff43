#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "tempo/dro.hpp"

namespace tempo::solver {

struct SolverOptions {
  double init_tau = 1.0;
  double tol = 1e-8;
  int max_iter = 50;
  double bracket_hi = 1e3;

  void validate() const;
};

enum class TauStatus { Interior, ClampedAtTau0, MaxIterReached };

std::string_view to_string(TauStatus status);

struct TauSolution {
  double tau = 0.0;
  TauStatus status = TauStatus::Interior;
  int iterations = 0;
  double final_grad = 0.0;
};

/// Minimizes f(tau) over tau >= tau0 with Newton steps on grad_tau,
/// safeguarded by bisection on a sign-change bracket. Requires rho > 0.
TauSolution newton_solve(const dro::LogitSet& ls, const dro::DroConfig& cfg,
                         const SolverOptions& opts = {});

/// Derivative-free minimizer of f on [lo, hi] by golden-section search.
/// Evaluates f in extended precision on its own, independent of dro::robust_loss.
double golden_section_oracle(const dro::LogitSet& ls, const dro::DroConfig& cfg, double lo,
                             double hi, double tol);

/// newton_solve over every instance, OpenMP-parallel across instances.
/// Per-instance failures are rethrown with the instance index attached.
std::vector<TauSolution> batch_solve(const std::vector<dro::LogitSet>& instances,
                                     const dro::DroConfig& cfg, const SolverOptions& opts = {});

/// Sequential reference for batch_solve.
std::vector<TauSolution> batch_solve_serial(const std::vector<dro::LogitSet>& instances,
                                            const dro::DroConfig& cfg,
                                            const SolverOptions& opts = {});

}  // namespace tempo::solver
