#pragma once

// Closed-form KL-constrained DRO loss in the temperature variable.
//
// For one instance with positive logit L+ and contrast logits L_k (k = 1..K)
// the margins are h_k = L_k - L+ and
//
//   f(tau) = tau * log((1/K) * sum_k exp(h_k / tau)) + tau * rho
//
// which is convex in tau. Its minimum over tau >= tau0, shifted by -tau0*rho,
// equals the worst-case expected margin over distributions p in the KL ball
// KL(p, uniform) <= rho, penalized by tau0 * KL. All functions here are pure.

#include <atomic>
#include <span>
#include <vector>

namespace tempo::dro {

struct LogitSet {
  double positive = 0.0;
  std::vector<double> contrast;

  /// Throws DomainError unless K >= 1 and every entry is finite.
  void validate() const;
  std::size_t size() const noexcept { return contrast.size(); }
  std::vector<double> margins() const;
};

struct DroConfig {
  double tau0 = 0.001;
  double tau_max = 2.0;
  double rho = 10.0;

  /// 0 < tau0 < tau_max and rho >= 0.
  void validate() const;
};

struct SimplexDistribution {
  std::vector<double> probs;
};

/// log(sum exp(v)) with max subtraction. Throws DomainError on empty input.
double stable_logsumexp(std::span<const double> values);

/// log((1/n) sum exp(v)) for v <= 0 after shifting, evaluated with expm1/log1p
/// so that it never drops below mean(v) through rounding.
double log_mean_exp(std::span<const double> values);

double robust_loss(const LogitSet& ls, double tau, const DroConfig& cfg);

/// d f / d tau = rho - KL(p_tau, uniform).
double grad_tau(const LogitSet& ls, double tau, const DroConfig& cfg);

/// d^2 f / d tau^2 = Var_p(h / tau) / tau, always >= 0.
double hess_tau(const LogitSet& ls, double tau);

/// p_k proportional to exp(L_k / tau).
SimplexDistribution gibbs_distribution(const LogitSet& ls, double tau);

/// b_z = tau * log((1/K) sum exp(L_k / tau)) - mean_k L_k, in [0, max - mean].
double compute_bz(const LogitSet& ls, double tau);

/// max_k L_k - mean_k L_k, evaluated the same way compute_bz evaluates its mean.
double bz_upper_bound(const LogitSet& ls);

/// (1/rho) * [sum_k (p_k(tau) - 1/K) L_k - b_z(tau)]; equals tau at an
/// unconstrained minimizer of f.
double fixed_point_rhs(const LogitSet& ls, double tau, const DroConfig& cfg);

/// Brute-force maximum of sum_k p_k h_k - tau0 * KL(p, 1/K) subject to
/// KL(p, 1/K) <= rho by enumerating the simplex lattice of spacing grid_step.
/// Every lattice line is also intersected with the KL = rho boundary so an
/// active constraint is resolved to machine precision along that line.
/// Supports K <= 4.
double primal_dro_oracle(const LogitSet& ls, const DroConfig& cfg, double grid_step);

namespace debug {
/// Fault-injection switch for the verification suite: negates grad_tau.
inline std::atomic<bool> flip_grad_tau_sign{false};
}  // namespace debug

}  // namespace tempo::dro
