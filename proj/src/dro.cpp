#include "tempo/dro.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "tempo/error.hpp"

namespace tempo::dro {
namespace {

void require_positive_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw DomainError("tau must be positive and finite, got " + std::to_string(tau));
  }
}

double max_of(std::span<const double> v) { return *std::max_element(v.begin(), v.end()); }

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Shifted and scaled values x_k = (v_k - max v) / tau, all <= 0 with max exactly 0.
std::vector<double> shifted(std::span<const double> v, double tau) {
  const double m = max_of(v);
  std::vector<double> x(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) x[k] = (v[k] - m) / tau;
  return x;
}

// Gibbs weights of already-shifted values; the max entry contributes exp(0) = 1.
std::vector<double> softmax_shifted(std::span<const double> x) {
  std::vector<double> p(x.size());
  double total = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    p[k] = std::exp(x[k]);
    total += p[k];
  }
  for (double& pk : p) pk /= total;
  return p;
}

// Moments of the shifted values under their own Gibbs weights.
struct GibbsMoments {
  double log_mean_exp;  // log((1/K) sum exp(x))
  double mean;          // E_p[x]
  double variance;      // Var_p[x]
};

GibbsMoments gibbs_moments(std::span<const double> x) {
  const auto p = softmax_shifted(x);
  GibbsMoments g{log_mean_exp(x), 0.0, 0.0};
  for (std::size_t k = 0; k < x.size(); ++k) g.mean += p[k] * x[k];
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = x[k] - g.mean;
    g.variance += p[k] * d * d;
  }
  return g;
}

double kl_to_uniform(std::span<const double> p) {
  const double k = static_cast<double>(p.size());
  double kl = 0.0;
  for (double pk : p) {
    if (pk > 0.0) kl += pk * std::log(pk * k);
  }
  return kl;
}

}  // namespace

void LogitSet::validate() const {
  if (contrast.empty()) throw DomainError("logit set has no contrasting logits");
  if (!std::isfinite(positive)) throw DomainError("positive logit is not finite");
  for (double v : contrast) {
    if (!std::isfinite(v)) throw DomainError("contrast logit is not finite");
  }
}

std::vector<double> LogitSet::margins() const {
  std::vector<double> h(contrast.size());
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = contrast[k] - positive;
  return h;
}

void DroConfig::validate() const {
  if (!(tau0 > 0.0)) throw DomainError("tau0 must be positive");
  if (!(tau_max > tau0)) throw DomainError("tau_max must exceed tau0");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw DomainError("rho must be finite and >= 0");
}

double stable_logsumexp(std::span<const double> values) {
  if (values.empty()) throw DomainError("logsumexp of an empty vector");
  const double m = max_of(values);
  double total = 0.0;
  for (double v : values) total += std::exp(v - m);
  return m + std::log(total);
}

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw DomainError("log-mean-exp of an empty vector");
  const double m = max_of(values);
  const double n = static_cast<double>(values.size());
  // Near-uniform inputs: mean(expm1) keeps the second-order Jensen gap that
  // log(sum/n) would round away.
  double excess = 0.0;
  for (double v : values) excess += std::expm1(v - m);
  excess /= n;
  if (excess > -0.5) return m + std::log1p(excess);
  double total = 0.0;
  for (double v : values) total += std::exp(v - m);
  return m + std::log(total / n);
}

double robust_loss(const LogitSet& ls, double tau, const DroConfig& cfg) {
  require_positive_tau(tau);
  ls.validate();
  const auto h = ls.margins();
  const double m = max_of(h);
  return m + tau * log_mean_exp(shifted(h, tau)) + tau * cfg.rho;
}

double grad_tau(const LogitSet& ls, double tau, const DroConfig& cfg) {
  require_positive_tau(tau);
  ls.validate();
  const auto g = gibbs_moments(shifted(ls.margins(), tau));
  const double value = g.log_mean_exp - g.mean + cfg.rho;
  return debug::flip_grad_tau_sign.load(std::memory_order_relaxed) ? -value : value;
}

double hess_tau(const LogitSet& ls, double tau) {
  require_positive_tau(tau);
  ls.validate();
  return gibbs_moments(shifted(ls.margins(), tau)).variance / tau;
}

SimplexDistribution gibbs_distribution(const LogitSet& ls, double tau) {
  require_positive_tau(tau);
  ls.validate();
  return {softmax_shifted(shifted(ls.contrast, tau))};
}

double compute_bz(const LogitSet& ls, double tau) {
  require_positive_tau(tau);
  ls.validate();
  const auto x = shifted(ls.contrast, tau);
  // Both terms are taken relative to max L so the mean is computed exactly as
  // in bz_upper_bound.
  std::vector<double> d(ls.contrast.size());
  const double m = max_of(ls.contrast);
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = ls.contrast[k] - m;
  return tau * log_mean_exp(x) - mean_of(d);
}

double bz_upper_bound(const LogitSet& ls) {
  ls.validate();
  const double m = max_of(ls.contrast);
  std::vector<double> d(ls.contrast.size());
  for (std::size_t k = 0; k < d.size(); ++k) d[k] = ls.contrast[k] - m;
  return -mean_of(d);
}

double fixed_point_rhs(const LogitSet& ls, double tau, const DroConfig& cfg) {
  require_positive_tau(tau);
  if (!(cfg.rho > 0.0)) throw DomainError("fixed point needs rho > 0");
  const auto p = gibbs_distribution(ls, tau).probs;
  const double m = max_of(ls.contrast);
  const double inv_k = 1.0 / static_cast<double>(p.size());
  double attention = 0.0;  // attention pooling minus average pooling
  for (std::size_t k = 0; k < p.size(); ++k) attention += (p[k] - inv_k) * (ls.contrast[k] - m);
  return (attention - compute_bz(ls, tau)) / cfg.rho;
}

double primal_dro_oracle(const LogitSet& ls, const DroConfig& cfg, double grid_step) {
  ls.validate();
  cfg.validate();
  const std::size_t dim = ls.size();
  if (dim > 4) throw UnsupportedError("primal oracle supports K <= 4, got K = " + std::to_string(dim));
  if (!(grid_step > 0.0 && grid_step <= 0.1)) throw DomainError("grid_step must lie in (0, 0.1]");

  const auto h = ls.margins();
  const double tau0 = cfg.tau0;
  const double rho = cfg.rho;
  if (dim == 1) return h[0];  // the simplex is a single point with KL = 0

  const int steps = static_cast<int>(std::lround(1.0 / grid_step));
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> p(dim);

  auto consider = [&](std::span<const double> q) {
    const double kl = kl_to_uniform(q);
    if (kl > rho) return;
    double value = -tau0 * kl;
    for (std::size_t k = 0; k < dim; ++k) value += q[k] * h[k];
    best = std::max(best, value);
  };

  // Walks the segment p_a = t*r, p_b = (1-t)*r with the other coordinates
  // fixed and evaluates the objective where KL crosses rho. KL is convex and
  // symmetric in t about 1/2 along the segment.
  auto boundary_on_segment = [&](std::size_t a, std::size_t b, double r) {
    if (r <= 0.0) return;
    auto kl_at = [&](double t) {
      p[a] = t * r;
      p[b] = (1.0 - t) * r;
      return kl_to_uniform(p);
    };
    if (kl_at(0.5) > rho) return;  // the whole segment is infeasible
    for (int side = 0; side < 2; ++side) {
      double inside = 0.5;
      double outside = side == 0 ? 0.0 : 1.0;
      if (kl_at(outside) <= rho) {
        kl_at(outside);
        consider(p);
        continue;
      }
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (inside + outside);
        if (kl_at(mid) <= rho) inside = mid; else outside = mid;
      }
      kl_at(inside);
      consider(p);
    }
  };

  // The uniform point is always feasible and is the whole ball when rho = 0.
  std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(dim));
  consider(p);

  const double unit = 1.0 / steps;
  if (dim == 2) {
    for (int i = 0; i <= steps; ++i) {
      p[0] = i * unit;
      p[1] = (steps - i) * unit;
      consider(p);
    }
    boundary_on_segment(0, 1, 1.0);
  } else if (dim == 3) {
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; i + j <= steps; ++j) {
        p[0] = i * unit;
        p[1] = j * unit;
        p[2] = (steps - i - j) * unit;
        consider(p);
      }
    }
    for (std::size_t fixed = 0; fixed < 3; ++fixed) {
      const std::size_t a = (fixed + 1) % 3, b = (fixed + 2) % 3;
      for (int i = 0; i <= steps; ++i) {
        p[fixed] = i * unit;
        boundary_on_segment(a, b, (steps - i) * unit);
      }
    }
  } else {
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; i + j <= steps; ++j) {
        for (int k = 0; i + j + k <= steps; ++k) {
          p[0] = i * unit;
          p[1] = j * unit;
          p[2] = k * unit;
          p[3] = (steps - i - j - k) * unit;
          consider(p);
        }
      }
    }
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = a + 1; b < 4; ++b) {
        std::size_t f[2];
        std::size_t nf = 0;
        for (std::size_t c = 0; c < 4; ++c) {
          if (c != a && c != b) f[nf++] = c;
        }
        for (int i = 0; i <= steps; ++i) {
          for (int j = 0; i + j <= steps; ++j) {
            p[f[0]] = i * unit;
            p[f[1]] = j * unit;
            boundary_on_segment(a, b, (steps - i - j) * unit);
          }
        }
      }
    }
  }
  return best;
}

}  // namespace tempo::dro
