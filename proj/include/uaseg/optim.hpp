#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "uaseg/grid.hpp"

namespace uaseg {

// Ordered list of trainable tensors; gradients use the same order and shapes.
using ParamList = std::vector<Grid>;

// p <- p - lr * g
void sgd_step(ParamList& params, const ParamList& grads, double lr);

enum class OptimizerKind { sgd, adamw };

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class OptimizerState {
 public:
  static OptimizerState sgd(double lr);
  static OptimizerState adamw(double lr, AdamWConfig cfg = {});

  OptimizerKind kind() const noexcept { return kind_; }
  double lr() const noexcept { return lr_; }
  void set_lr(double lr);
  long step_count() const noexcept { return steps_; }
  const AdamWConfig& adamw_config() const noexcept { return adamw_; }
  const ParamList& first_moment() const noexcept { return m_; }
  const ParamList& second_moment() const noexcept { return v_; }

  // One update. AdamW moments are created on the first call.
  void step(ParamList& params, const ParamList& grads);

 private:
  OptimizerState(OptimizerKind kind, double lr, AdamWConfig cfg);

  OptimizerKind kind_;
  double lr_;
  AdamWConfig adamw_;
  ParamList m_;
  ParamList v_;
  long steps_ = 0;
};

// Decoupled weight decay followed by the bias-corrected Adam update.
void adamw_step(OptimizerState& state, ParamList& params, const ParamList& grads);

struct SharpMinConfig {
  double rho = 0.05;
  bool enabled = true;

  void validate() const;
};

struct LossAndGrad {
  double loss = 0.0;
  ParamList grads;
};

using LossFn = std::function<LossAndGrad(const ParamList&)>;

struct SharpMinStats {
  double loss = 0.0;      // loss at the unperturbed parameters
  int grad_evals = 0;
  bool fell_back = false; // gradient norm below 1e-12, plain step taken
};

// Gradient at params, ascend to params + rho g/||g|| (global l2 norm), take
// the gradient there, and hand it to the base optimizer at the original
// params. Disabled config reduces to a plain base step.
SharpMinStats sharpmin_step(ParamList& params, const LossFn& loss_fn, OptimizerState& base,
                            const SharpMinConfig& cfg);

struct PlateauState {
  double factor = 0.9;
  int patience = 5;
  int cooldown = 0;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  int cooldown_left = 0;

  void validate() const;
};

// Mode "min". Returns the multiplier to apply to the learning rate (1 or
// factor).
double plateau_step(PlateauState& state, double val_loss);

double global_norm(const ParamList& tensors);

}  // namespace uaseg
