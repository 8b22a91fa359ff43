#include "tempo/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <random>
#include <utility>

#include "tempo/autodiff.hpp"
#include "tempo/contrastive.hpp"
#include "tempo/dro.hpp"
#include "tempo/error.hpp"
#include "tempo/lm.hpp"
#include "tempo/solver.hpp"
#include "tempo/tempnet.hpp"

namespace tempo::verify {

namespace {

struct ToleranceEntry {
  std::string_view check;
  double value;
};

constexpr std::array<ToleranceEntry, 6> kTolerances{{
    {"check_bz_bounds", 0.0},
    {"check_duality", 1e-3},
    {"check_fixed_point", 1e-5},
    {"check_gradients", 1e-5},
    {"check_newton", 1e-6},
    {"check_upper_bound", 1e-9},
}};

constexpr double kZeroRadiusTau = 1e6;

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::vector<double> normals(std::mt19937_64& rng, std::size_t n, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

dro::LogitSet random_instance(std::mt19937_64& rng, std::size_t k, double scale) {
  dro::LogitSet ls;
  ls.positive = std::normal_distribution<double>(0.0, scale)(rng);
  ls.contrast = normals(rng, k, scale);
  return ls;
}

// Runs body(i) for every i in parallel. Exceptions cannot leave an OpenMP
// region, so the one from the lowest index is kept and rethrown afterwards.
template <typename F>
void parallel_for(std::size_t n, F body) {
  std::exception_ptr error;
  std::size_t error_index = n;
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(tempo_verify_error)
      if (static_cast<std::size_t>(i) < error_index) {
        error_index = static_cast<std::size_t>(i);
        error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);
}

// Max of residual(i) over i. Max is order independent, so the result does not
// depend on the thread count. NaN counts as infinitely bad.
template <typename F>
double parallel_max(std::size_t n, F residual) {
  std::vector<double> r(n);
  parallel_for(n, [&](std::size_t i) { r[i] = residual(i); });
  double worst = 0.0;
  for (double v : r) worst = std::max(worst, std::isnan(v) ? std::numeric_limits<double>::infinity() : v);
  return worst;
}

CheckReport make_report(std::string name, std::size_t n, double residual, std::uint64_t seed) {
  CheckReport r;
  r.tolerance = tolerance(name);
  r.name = std::move(name);
  r.instances = n;
  r.max_residual = residual;
  r.passed = residual <= r.tolerance;
  r.seed = seed;
  return r;
}

void randomize(net::TempNetParams& p, std::mt19937_64& rng) {
  for (auto& [name, t] : p.named()) {
    if (name == "phi") continue;
    for (double& v : t->values()) v = uniform(rng, -1.0, 1.0);
  }
  p.phi[0] = uniform(rng, 0.3, 2.0);
}

Tensor random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
  return Tensor({rows, cols}, normals(rng, rows * cols, scale));
}

Tensor unit_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Tensor t = random_matrix(rng, rows, cols, 1.0);
  for (std::size_t i = 0; i < rows; ++i) {
    auto row = t.row(i);
    double n = 0.0;
    for (double v : row) n += v * v;
    n = std::sqrt(n);
    for (double& v : row) v /= n;
  }
  return t;
}

// Relative central-difference error of an analytic scalar derivative.
double derivative_error(double analytic, double plus, double minus, double h) {
  return std::abs(analytic - (plus - minus) / (2.0 * h)) / std::max(1.0, std::abs(analytic));
}

double dro_derivative_error(std::mt19937_64& rng) {
  std::vector<std::pair<dro::LogitSet, std::pair<double, dro::DroConfig>>> cases;
  for (int i = 0; i < 200; ++i) {
    auto ls = random_instance(rng, 2 + rng() % 63, uniform(rng, 0.2, 3.0));
    const double tau = std::exp(uniform(rng, std::log(0.05), std::log(5.0)));
    cases.push_back({std::move(ls), {tau, dro::DroConfig{0.001, 2.0, uniform(rng, 0.1, 3.0)}}});
  }
  return parallel_max(cases.size(), [&](std::size_t i) {
    const auto& [ls, p] = cases[i];
    const auto& [tau, cfg] = p;
    const double h = 1e-5 * tau;
    const double g = derivative_error(dro::grad_tau(ls, tau, cfg), dro::robust_loss(ls, tau + h, cfg),
                                      dro::robust_loss(ls, tau - h, cfg), h);
    const double H = derivative_error(dro::hess_tau(ls, tau), dro::grad_tau(ls, tau + h, cfg),
                                      dro::grad_tau(ls, tau - h, cfg), h);
    return std::max(g, H);
  });
}

double tempnet_parameter_error(std::mt19937_64& rng) {
  double worst = 0.0;
  for (auto variant : {net::Variant::LlmLogits, net::Variant::ClEmbedding}) {
    net::TempNetConfig cfg{variant, 12, 8, 5, 0.001, 2.0, 1.3};
    auto tn = variant == net::Variant::LlmLogits ? net::init_llm_tempnet(cfg, rng()) : net::init_cl_tempnet(cfg, rng());
    randomize(tn.params, rng);
    const Tensor x = variant == net::Variant::LlmLogits ? random_matrix(rng, 4, cfg.d0, 2.0) : unit_rows(rng, 4, cfg.d0);
    const auto named = tn.params.named();
    for (std::size_t w = 0; w < named.size(); ++w) {
      auto fn = [&](ad::Tape& tape, ad::Var p) {
        auto vars = net::bind(tape, tn.params, false);
        ad::Var* slots[] = {&vars.W1, &vars.b1, &vars.W2, &vars.w3, &vars.phi, &vars.b};
        *slots[w] = p;
        return ad::sum(net::forward(cfg, vars, tape.constant(x)));
      };
      worst = std::max(worst, ad::finite_diff_check(fn, *named[w].second));
    }
  }
  return worst;
}

double robust_softmax_error(std::mt19937_64& rng) {
  const std::size_t n = 5, vocab = 9;
  const Tensor logits = random_matrix(rng, n, vocab, 1.5);
  std::vector<std::size_t> targets(n);
  for (auto& t : targets) t = rng() % vocab;
  Tensor tau({n});
  for (double& t : tau.values()) t = uniform(rng, 0.2, 2.0);
  const double rho = 0.7;
  auto wrt_logits = [&](ad::Tape& tape, ad::Var x) {
    return models::robust_softmax_loss(x, targets, tape.constant(tau), rho);
  };
  auto wrt_tau = [&](ad::Tape& tape, ad::Var t) {
    return models::robust_softmax_loss(tape.constant(logits), targets, t, rho);
  };
  return std::max(ad::finite_diff_check(wrt_logits, logits), ad::finite_diff_check(wrt_tau, tau));
}

double robust_gcl_error(std::mt19937_64& rng) {
  const std::size_t n = 5, d = 4;
  const Tensor images = random_matrix(rng, n, d, 1.0);
  const Tensor texts = unit_rows(rng, n, d);
  Tensor tau_img({n}), tau_txt({n});
  for (double& t : tau_img.values()) t = uniform(rng, 0.1, 1.0);
  for (double& t : tau_txt.values()) t = uniform(rng, 0.1, 1.0);
  const double rho = 0.5;
  auto wrt_images = [&](ad::Tape& tape, ad::Var x) {
    const models::Embeddings e{ad::l2_normalize(x, 1), tape.constant(texts)};
    return models::robust_gcl_loss(e, tape.constant(tau_img), tape.constant(tau_txt), rho);
  };
  auto wrt_tau = [&](ad::Tape& tape, ad::Var t) {
    const models::Embeddings e{ad::l2_normalize(tape.constant(images), 1), tape.constant(texts)};
    return models::robust_gcl_loss(e, t, tape.constant(tau_txt), rho);
  };
  return std::max(ad::finite_diff_check(wrt_images, images), ad::finite_diff_check(wrt_tau, tau_img));
}

}  // namespace

double tolerance(std::string_view check) {
  for (const auto& e : kTolerances)
    if (e.check == check) return e.value;
  throw ValidationError("unknown check '" + std::string(check) + "'");
}

CheckReport check_duality(std::size_t n_instances, std::uint64_t seed, double grid_step) {
  std::mt19937_64 rng(seed);
  struct Case {
    dro::LogitSet ls;
    dro::DroConfig cfg;
  };
  std::vector<Case> cases;
  for (std::size_t i = 0; i < n_instances; ++i) {
    const std::size_t k = 2 + i % 3;
    Case c{random_instance(rng, k, 1.0), dro::DroConfig{uniform(rng, 0.001, 0.05), 2.0, uniform(rng, 0.05, 2.0)}};
    if (i % 10 == 3) std::fill(c.ls.contrast.begin(), c.ls.contrast.end(), c.ls.positive);
    if (i % 10 == 7) c.cfg.rho = 0.0;
    cases.push_back(std::move(c));
  }
  const solver::SolverOptions opts;
  const double worst = parallel_max(cases.size(), [&](std::size_t i) {
    const auto& [ls, cfg] = cases[i];
    // With rho = 0 the infimum is only approached as tau grows; f exceeds it
    // by about Var(h) / (2 tau).
    const double tau = cfg.rho > 0.0 ? solver::newton_solve(ls, cfg, opts).tau : kZeroRadiusTau;
    const double dual = dro::robust_loss(ls, tau, cfg) - cfg.tau0 * cfg.rho;
    return std::abs(dual - dro::primal_dro_oracle(ls, cfg, grid_step));
  });
  return make_report("check_duality", cases.size(), worst, seed);
}

CheckReport check_fixed_point(std::size_t n_instances, std::uint64_t seed, double solver_tol) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<dro::LogitSet, dro::DroConfig>> cases;
  for (std::size_t i = 0; i < n_instances; ++i) {
    auto ls = random_instance(rng, 2 + rng() % 63, uniform(rng, 0.2, 3.0));
    const double log_k = std::log(static_cast<double>(ls.size()));
    cases.push_back({std::move(ls), dro::DroConfig{0.001, 2.0, uniform(rng, 0.05, 0.9) * log_k}});
  }
  solver::SolverOptions opts;
  opts.tol = solver_tol;
  std::vector<solver::TauSolution> sols(cases.size());
  parallel_for(cases.size(), [&](std::size_t i) { sols[i] = solver::newton_solve(cases[i].first, cases[i].second, opts); });
  std::vector<std::size_t> interior;
  for (std::size_t i = 0; i < sols.size(); ++i)
    if (sols[i].status == solver::TauStatus::Interior) interior.push_back(i);
  const double worst = parallel_max(interior.size(), [&](std::size_t j) {
    const auto i = interior[j];
    return std::abs(dro::fixed_point_rhs(cases[i].first, sols[i].tau, cases[i].second) - sols[i].tau);
  });
  return make_report("check_fixed_point", interior.size(), worst, seed);
}

CheckReport check_bz_bounds(std::size_t n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<dro::LogitSet, double>> cases;
  for (std::size_t i = 0; i < n_instances; ++i) {
    const double scale = std::exp(uniform(rng, std::log(0.01), std::log(10.0)));
    auto ls = random_instance(rng, 1 + rng() % 1024, scale);
    cases.push_back({std::move(ls), std::exp(uniform(rng, std::log(1e-3), std::log(1e2)))});
  }
  const double worst = parallel_max(cases.size(), [&](std::size_t i) {
    const auto& [ls, tau] = cases[i];
    const double bz = dro::compute_bz(ls, tau);
    return std::max({0.0, -bz, bz - dro::bz_upper_bound(ls)});
  });
  return make_report("check_bz_bounds", cases.size(), worst, seed);
}

CheckReport check_upper_bound(std::size_t n_draws, std::uint64_t seed) {
  constexpr std::size_t kDataset = 20, kVocab = 16;
  std::mt19937_64 rng(seed);
  struct Draw {
    net::TempNet tn;
    std::vector<std::vector<double>> logits;
    std::vector<std::size_t> targets;
  };
  std::vector<Draw> draws;
  for (std::size_t d = 0; d < n_draws; ++d) {
    net::TempNetConfig cfg{net::Variant::LlmLogits, kVocab, 8, 4, 0.001, 2.0, uniform(rng, 0.2, 2.0)};
    Draw draw{net::init_llm_tempnet(cfg, rng()), {}, {}};
    randomize(draw.tn.params, rng);
    for (std::size_t i = 0; i < kDataset; ++i) {
      draw.logits.push_back(normals(rng, kVocab, 2.0));
      draw.targets.push_back(rng() % kVocab);
    }
    draws.push_back(std::move(draw));
  }
  const double worst = parallel_max(draws.size(), [&](std::size_t d) {
    const auto& draw = draws[d];
    const dro::DroConfig dcfg{draw.tn.cfg.tau0, draw.tn.cfg.tau_max, draw.tn.cfg.rho};
    double optimal = 0.0, network = 0.0;
    for (std::size_t i = 0; i < kDataset; ++i) {
      const dro::LogitSet ls{draw.logits[i][draw.targets[i]], draw.logits[i]};
      optimal += dro::robust_loss(ls, solver::newton_solve(ls, dcfg).tau, dcfg);
      network += dro::robust_loss(ls, net::forward_llm(draw.tn, draw.logits[i]).first, dcfg);
    }
    return std::max(0.0, (optimal - network) / static_cast<double>(kDataset));
  });
  return make_report("check_upper_bound", draws.size(), worst, seed);
}

CheckReport check_gradients(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double worst = std::max({dro_derivative_error(rng), tempnet_parameter_error(rng), robust_softmax_error(rng),
                                 robust_gcl_error(rng)});
  return make_report("check_gradients", 4, std::isnan(worst) ? std::numeric_limits<double>::infinity() : worst, seed);
}

CheckReport check_newton(std::size_t n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<dro::LogitSet, dro::DroConfig>> cases;
  for (std::size_t i = 0; i < n_instances; ++i) {
    auto ls = random_instance(rng, 1 + rng() % 512, uniform(rng, 0.2, 5.0));
    cases.push_back({std::move(ls), dro::DroConfig{0.001, 2.0, uniform(rng, 0.05, 5.0)}});
  }
  const double worst = parallel_max(cases.size(), [&](std::size_t i) {
    const auto& [ls, cfg] = cases[i];
    const double tau = solver::newton_solve(ls, cfg).tau;
    const double oracle = solver::golden_section_oracle(ls, cfg, cfg.tau0, 1e3, 1e-11);
    return std::abs(tau - oracle) / std::max(1.0, tau);
  });
  return make_report("check_newton", cases.size(), worst, seed);
}

const std::vector<CheckSpec>& registry() {
  static const std::vector<CheckSpec> checks = {
      {"check_bz_bounds", [](std::uint64_t s) { return check_bz_bounds(10000, s); }},
      {"check_duality", [](std::uint64_t s) { return check_duality(600, s); }},
      {"check_fixed_point", [](std::uint64_t s) { return check_fixed_point(1000, s); }},
      {"check_gradients", [](std::uint64_t s) { return check_gradients(s); }},
      {"check_newton", [](std::uint64_t s) { return check_newton(1000, s); }},
      {"check_upper_bound", [](std::uint64_t s) { return check_upper_bound(100, s); }},
  };
  return checks;
}

std::vector<CheckReport> run_checks(std::uint64_t seed, const std::vector<std::string>& only) {
  std::vector<const CheckSpec*> selected;
  for (const auto& name : only)
    if (std::none_of(registry().begin(), registry().end(), [&](const CheckSpec& c) { return c.name == name; }))
      throw ValidationError("unknown check '" + name + "'");
  for (const auto& c : registry())
    if (only.empty() || std::find(only.begin(), only.end(), c.name) != only.end()) selected.push_back(&c);

  std::vector<CheckReport> reports;
  for (const CheckSpec* c : selected) {
    try {
      reports.push_back(c->run(seed));
    } catch (const std::exception& e) {
      CheckReport r;
      r.name = c->name;
      r.max_residual = std::numeric_limits<double>::infinity();
      r.tolerance = tolerance(c->name);
      r.seed = seed;
      r.note = e.what();
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

std::string format_report_row(const CheckReport& r) {
  std::string note = r.note;
  std::replace(note.begin(), note.end(), ',', ';');
  std::replace(note.begin(), note.end(), '\n', ' ');
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g,%s,%llu,", r.name.c_str(), r.instances, r.max_residual,
                r.tolerance, r.passed ? "pass" : "fail", static_cast<unsigned long long>(r.seed));
  return buf + note;
}

std::string report_csv(const std::vector<CheckReport>& reports) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : reports) out += format_report_row(r) + "\n";
  return out;
}

}  // namespace tempo::verify
