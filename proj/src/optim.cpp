#include "emir/optim.hpp"

#include <cmath>

namespace emir {

double cosine_lr(const AdamConfig& cfg, std::int64_t step) {
  const double t = static_cast<double>(std::min(step, cfg.total_steps)) /
                   static_cast<double>(cfg.total_steps);
  return cfg.lr_min +
         0.5 * (cfg.lr_init - cfg.lr_min) *
             (1.0 + std::cos(3.14159265358979323846 * t));
}

void adam_step(ParamStore& params, OptimizerState& state) {
  for (auto& [name, p] : params.params) {
    for (double g : p.grad())
      check(!std::isnan(g) && !std::isinf(g),
            "adam_step: non-finite gradient in " + name);
  }
  const double lr = cosine_lr(state.cfg, state.step);
  const std::int64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : params.params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.numel(), 0.0);
    if (v.empty()) v.assign(p.numel(), 0.0);
    check(static_cast<std::int64_t>(m.size()) == p.numel(),
          "adam_step: moment shape mismatch for " + name);
    auto& val = p.data();
    const auto& grad = p.grad();
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      m[i] = state.cfg.beta1 * m[i] + (1.0 - state.cfg.beta1) * grad[i];
      v[i] = state.cfg.beta2 * v[i] +
             (1.0 - state.cfg.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      val[i] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
  state.step = t;
}

}  // namespace emir
