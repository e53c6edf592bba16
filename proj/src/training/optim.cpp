#include "karma/training/optim.hpp"

#include <cmath>

#include "karma/error.hpp"

namespace karma::training {

void adam_step(std::span<const Tensor> params, AdamState& state) {
  if (state.m.empty() && state.step == 0) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: optimizer holds " + std::to_string(state.m.size()) +
                        " moment buffers but got " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad() || params[i].grad().size() != params[i].size()) {
      throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient buffer");
    }
    if (state.m[i].size() != params[i].size()) {
      throw ContractError("adam_step: parameter " + std::to_string(i) + " changed size");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].mutable_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
      g[k] = 0.0;
    }
  }
}

double lr_decay(std::size_t epoch, double base_lr) {
  return base_lr * std::pow(0.5, static_cast<double>(epoch));
}

StopDecision early_stop_update(EarlyStop& state, double val_loss) {
  if (std::isnan(val_loss)) throw TrainingError("validation loss is NaN");
  StopDecision d;
  if (val_loss < state.best - state.min_delta) {
    state.best = val_loss;
    state.since_improve = 0;
    d.improved = true;
  } else {
    ++state.since_improve;
  }
  d.stop = state.since_improve >= state.patience;
  return d;
}

}  // namespace karma::training
