#include "tempo/optim.hpp"

#include <cmath>
#include <numbers>

#include "tempo/error.hpp"

namespace tempo::train {

void AdamConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw DomainError("adam: betas must be in (0, 1)");
  if (!(eps > 0.0)) throw DomainError("adam: eps must be positive");
  if (!(weight_decay >= 0.0)) throw DomainError("adam: weight decay must be nonnegative");
}

AdamState make_adam_state(const std::vector<const Tensor*>& params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adamw_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, const std::vector<bool>& decay,
                AdamState& state, double lr, const AdamConfig& cfg) {
  const std::size_t n = params.size();
  if (grads.size() != n || decay.size() != n || state.m.size() != n || state.v.size() != n)
    throw ShapeError("adamw_step: " + std::to_string(n) + " params but " + std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.m.size()) + " moment slots");
  for (std::size_t i = 0; i < n; ++i)
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.m[i]))
      throw ShapeError("adamw_step: tensor " + std::to_string(i) + " is " + params[i]->shape_string() + ", grad " +
                       grads[i].shape_string() + ", moment " + state.m[i].shape_string());
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    auto& w = params[i]->values();
    const auto& g = grads[i].values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    const double keep = decay[i] ? 1.0 - lr * cfg.weight_decay : 1.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] = w[j] * keep - lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::int64_t Schedule::warmup_steps() const {
  return std::max<std::int64_t>(1, std::llround(warmup_fraction * static_cast<double>(total_steps)));
}

double cosine_lr(std::int64_t step, const Schedule& s) {
  if (s.total_steps < 1) throw DomainError("cosine_lr: total_steps must be positive");
  if (!(s.warmup_fraction > 0.0 && s.warmup_fraction < 1.0)) throw DomainError("cosine_lr: warmup_fraction must be in (0, 1)");
  if (step < 0 || step > s.total_steps)
    throw DomainError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  const std::int64_t warm = std::min(s.warmup_steps(), s.total_steps);
  if (step < warm) return s.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (warm == s.total_steps) return step == warm ? 0.0 : s.base_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(s.total_steps - warm);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace tempo::train
