#pragma once

// Named numerical checks of the robust-loss identities and bounds. Each check
// draws its instances from the seed, evaluates them in parallel and reports
// the worst residual against a fixed tolerance.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace tempo::verify {

struct CheckReport {
  std::string name;
  std::size_t instances = 0;
  double max_residual = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::uint64_t seed = 0;
  std::string note;  // set when the check aborted
};

/// Tolerance of a registered check; throws ValidationError for unknown names.
double tolerance(std::string_view check);

/// min over tau >= tau0 of f minus tau0*rho against the simplex-lattice primal,
/// K cycling through {2, 3, 4}; includes zero-margin and rho = 0 instances.
CheckReport check_duality(std::size_t n_instances, std::uint64_t seed, double grid_step = 0.005);

/// |fixed_point_rhs(tau*) - tau*| over instances the solver reports as interior.
CheckReport check_fixed_point(std::size_t n_instances, std::uint64_t seed, double solver_tol = 1e-8);

/// Violation of 0 <= b_z <= max - mean, K up to 1024.
CheckReport check_bz_bounds(std::size_t n_instances, std::uint64_t seed);

/// Mean per-instance optimum minus mean loss at TempNet temperatures, floored at 0.
CheckReport check_upper_bound(std::size_t n_draws, std::uint64_t seed);

/// Worst relative finite-difference error over grad_tau, hess_tau, TempNet
/// parameters and the two composite robust losses.
CheckReport check_gradients(std::uint64_t seed);

/// Newton solver against the golden-section oracle, relative to max(1, tau).
CheckReport check_newton(std::size_t n_instances, std::uint64_t seed);

struct CheckSpec {
  std::string name;
  std::function<CheckReport(std::uint64_t seed)> run;  // default instance counts
};

/// Every check, sorted by name.
const std::vector<CheckSpec>& registry();

/// Runs the selected checks (all when only is empty) and returns reports in
/// name order. A check that throws yields a failed report carrying the message.
std::vector<CheckReport> run_checks(std::uint64_t seed, const std::vector<std::string>& only = {});

inline constexpr const char* kReportHeader = "check,instances,max_residual,tolerance,pass,seed,note";
std::string format_report_row(const CheckReport& r);
std::string report_csv(const std::vector<CheckReport>& reports);

}  // namespace tempo::verify
