#include "uaseg/optim.hpp"

#include <cmath>
#include <string>

#include "uaseg/error.hpp"

namespace uaseg {

namespace {

void require_matching(const ParamList& params, const ParamList& grads) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::shape_mismatch, std::to_string(params.size()) + " parameters but " +
                                               std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw Error(ErrorCode::shape_mismatch, "parameter " + std::to_string(i) + " has shape " +
                                                 to_string(params[i].shape()) + ", gradient " +
                                                 to_string(grads[i].shape()));
    }
  }
}

void require_finite(double loss, const char* where) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::non_finite, std::string("sharpmin: non-finite loss at ") + where);
  }
}

}  // namespace

void sgd_step(ParamList& params, const ParamList& grads, double lr) {
  require_matching(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
}

OptimizerState::OptimizerState(OptimizerKind kind, double lr, AdamWConfig cfg)
    : kind_(kind), lr_(lr), adamw_(cfg) {
  set_lr(lr);
}

OptimizerState OptimizerState::sgd(double lr) { return OptimizerState(OptimizerKind::sgd, lr, {}); }

OptimizerState OptimizerState::adamw(double lr, AdamWConfig cfg) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw Error(ErrorCode::config, "AdamW betas must lie in [0, 1)");
  }
  if (!(cfg.eps > 0.0) || !(cfg.weight_decay >= 0.0)) {
    throw Error(ErrorCode::config, "AdamW needs eps > 0 and weight_decay >= 0");
  }
  return OptimizerState(OptimizerKind::adamw, lr, cfg);
}

void OptimizerState::set_lr(double lr) {
  if (!(lr > 0.0)) throw Error(ErrorCode::config, "learning rate must be positive");
  lr_ = lr;
}

void OptimizerState::step(ParamList& params, const ParamList& grads) {
  require_matching(params, grads);
  if (kind_ == OptimizerKind::sgd) {
    sgd_step(params, grads, lr_);
    ++steps_;
    return;
  }

  if (m_.empty()) {
    for (const Grid& p : params) {
      m_.emplace_back(p.shape(), 0.0);
      v_.emplace_back(p.shape(), 0.0);
    }
  }
  require_matching(m_, params);

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(adamw_.beta1, t);
  const double bc2 = 1.0 - std::pow(adamw_.beta2, t);
  const double decay_rate = lr_ * adamw_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] -= decay_rate * p[j];
      m[j] = adamw_.beta1 * m[j] + (1.0 - adamw_.beta1) * g[j];
      v[j] = adamw_.beta2 * v[j] + (1.0 - adamw_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= lr_ * m_hat / (std::sqrt(v_hat) + adamw_.eps);
    }
  }
}

void adamw_step(OptimizerState& state, ParamList& params, const ParamList& grads) {
  if (state.kind() != OptimizerKind::adamw) {
    throw Error(ErrorCode::invalid_argument, "adamw_step on a non-AdamW optimizer state");
  }
  state.step(params, grads);
}

void SharpMinConfig::validate() const {
  if (enabled && !(rho > 0.0)) throw Error(ErrorCode::config, "sharpmin rho must be > 0");
}

double global_norm(const ParamList& tensors) {
  double sq = 0.0;
  for (const Grid& t : tensors)
    for (double v : t.data()) sq += v * v;
  return std::sqrt(sq);
}

SharpMinStats sharpmin_step(ParamList& params, const LossFn& loss_fn, OptimizerState& base,
                            const SharpMinConfig& cfg) {
  SharpMinStats stats;
  LossAndGrad first = loss_fn(params);
  ++stats.grad_evals;
  require_finite(first.loss, "params");
  stats.loss = first.loss;
  require_matching(params, first.grads);

  if (!cfg.enabled) {
    base.step(params, first.grads);
    return stats;
  }
  cfg.validate();

  const double norm = global_norm(first.grads);
  if (norm < 1e-12) {
    stats.fell_back = true;
    base.step(params, first.grads);
    return stats;
  }

  ParamList perturbed = params;
  const double scale = cfg.rho / norm;
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    auto p = perturbed[i].data();
    auto g = first.grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] += scale * g[j];
  }
  LossAndGrad second = loss_fn(perturbed);
  ++stats.grad_evals;
  require_finite(second.loss, "params + perturbation");
  base.step(params, second.grads);
  return stats;
}

void PlateauState::validate() const {
  if (!(factor > 0.0 && factor < 1.0)) throw Error(ErrorCode::config, "plateau factor must lie in (0, 1)");
  if (patience < 0 || cooldown < 0) throw Error(ErrorCode::config, "plateau counters must be >= 0");
}

double plateau_step(PlateauState& state, double val_loss) {
  state.validate();
  if (!std::isfinite(val_loss)) {
    throw Error(ErrorCode::non_finite, "plateau_step: validation loss is not finite");
  }
  if (val_loss < state.best) {
    state.best = val_loss;
    state.bad_epochs = 0;
  } else {
    ++state.bad_epochs;
  }
  if (state.cooldown_left > 0) {
    --state.cooldown_left;
    state.bad_epochs = 0;
  }
  if (state.bad_epochs > state.patience) {
    state.cooldown_left = state.cooldown;
    state.bad_epochs = 0;
    return state.factor;
  }
  return 1.0;
}

}  // namespace uaseg
