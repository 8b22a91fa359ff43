#include "tempo/solver.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>

#include "tempo/error.hpp"

namespace tempo::solver {

void SolverOptions::validate() const {
  if (!(init_tau > 0.0)) throw DomainError("init_tau must be positive");
  if (!(tol > 0.0)) throw DomainError("tol must be positive");
  if (max_iter < 1) throw DomainError("max_iter must be >= 1");
  if (!(bracket_hi > init_tau)) throw DomainError("bracket_hi must exceed init_tau");
}

std::string_view to_string(TauStatus status) {
  switch (status) {
    case TauStatus::Interior: return "Interior";
    case TauStatus::ClampedAtTau0: return "ClampedAtTau0";
    case TauStatus::MaxIterReached: return "MaxIterReached";
  }
  return "Unknown";
}

TauSolution newton_solve(const dro::LogitSet& ls, const dro::DroConfig& cfg,
                         const SolverOptions& opts) {
  ls.validate();
  cfg.validate();
  opts.validate();
  if (!(cfg.rho > 0.0)) throw DomainError("newton_solve requires rho > 0");

  // Convexity: a nonnegative slope at tau0 means the boundary is optimal.
  const double g0 = dro::grad_tau(ls, cfg.tau0, cfg);
  if (g0 >= 0.0) return {cfg.tau0, TauStatus::ClampedAtTau0, 0, g0};

  double lo = cfg.tau0;
  double hi = std::max(opts.bracket_hi, cfg.tau0 * 2.0);
  const double g_hi = dro::grad_tau(ls, hi, cfg);
  if (g_hi < 0.0) {
    throw UnboundedDescentError("temperature objective still decreasing at tau = " +
                                std::to_string(hi));
  }

  const double grad_tol = opts.tol * std::max(1.0, cfg.rho);
  double tau = opts.init_tau;
  if (!(tau > lo && tau < hi)) tau = 0.5 * (lo + hi);
  double last_step = std::numeric_limits<double>::infinity();
  double g = 0.0;

  for (int it = 1; it <= opts.max_iter; ++it) {
    g = dro::grad_tau(ls, tau, cfg);
    if (std::abs(g) <= grad_tol && std::abs(last_step) < opts.tol) {
      return {tau, TauStatus::Interior, it - 1, g};
    }
    if (g < 0.0) lo = tau; else hi = tau;
    const double h = dro::hess_tau(ls, tau);
    double next = 0.5 * (lo + hi);
    if (h > 1e-14) {
      const double newton = tau - g / h;
      if (newton > lo && newton < hi) next = newton;
    }
    last_step = next - tau;
    tau = next;
  }
  g = dro::grad_tau(ls, tau, cfg);
  if (std::abs(g) <= grad_tol && std::abs(last_step) < opts.tol) {
    return {tau, TauStatus::Interior, opts.max_iter, g};
  }
  return {tau, TauStatus::MaxIterReached, opts.max_iter, g};
}

namespace {

// f(tau) in long double; shares no code with dro::robust_loss.
long double objective_ld(const std::vector<long double>& margins, long double max_margin,
                         long double tau, long double rho) {
  long double total = 0.0L;
  for (long double h : margins) total += std::exp((h - max_margin) / tau);
  const long double mean = total / static_cast<long double>(margins.size());
  return max_margin + tau * std::log(mean) + tau * rho;
}

}  // namespace

double golden_section_oracle(const dro::LogitSet& ls, const dro::DroConfig& cfg, double lo,
                             double hi, double tol) {
  ls.validate();
  if (!(lo < hi)) throw DomainError("golden section needs lo < hi");
  if (lo < cfg.tau0) throw DomainError("golden section lower end must be >= tau0");
  if (!(tol > 0.0)) throw DomainError("tol must be positive");

  std::vector<long double> margins(ls.size());
  for (std::size_t k = 0; k < ls.size(); ++k) {
    margins[k] = static_cast<long double>(ls.contrast[k]) - static_cast<long double>(ls.positive);
  }
  const long double max_margin = *std::max_element(margins.begin(), margins.end());
  const long double rho = cfg.rho;
  auto f = [&](long double t) { return objective_ld(margins, max_margin, t, rho); };

  const long double inv_phi = (std::sqrt(5.0L) - 1.0L) / 2.0L;
  long double a = lo, b = hi;
  long double c = b - inv_phi * (b - a);
  long double d = a + inv_phi * (b - a);
  long double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return static_cast<double>(0.5L * (a + b));
}

namespace {

[[noreturn]] void rethrow_indexed(std::exception_ptr err, std::size_t index) {
  const std::string prefix = "instance " + std::to_string(index) + ": ";
  try {
    std::rethrow_exception(err);
  } catch (const UnboundedDescentError& e) {
    throw UnboundedDescentError(prefix + e.what());
  } catch (const DomainError& e) {
    throw DomainError(prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

}  // namespace

std::vector<TauSolution> batch_solve(const std::vector<dro::LogitSet>& instances,
                                     const dro::DroConfig& cfg, const SolverOptions& opts) {
  if (instances.empty()) throw DomainError("batch_solve needs at least one instance");
  const auto n = static_cast<std::ptrdiff_t>(instances.size());
  std::vector<TauSolution> out(instances.size());
  std::vector<std::exception_ptr> errors(instances.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[i] = newton_solve(instances[i], cfg, opts);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (errors[i]) rethrow_indexed(errors[i], i);
  }
  return out;
}

std::vector<TauSolution> batch_solve_serial(const std::vector<dro::LogitSet>& instances,
                                            const dro::DroConfig& cfg,
                                            const SolverOptions& opts) {
  if (instances.empty()) throw DomainError("batch_solve needs at least one instance");
  std::vector<TauSolution> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    try {
      out.push_back(newton_solve(instances[i], cfg, opts));
    } catch (...) {
      rethrow_indexed(std::current_exception(), i);
    }
  }
  return out;
}

}  // namespace tempo::solver
