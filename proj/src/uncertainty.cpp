#include "uaseg/uncertainty.hpp"

#include <cmath>

#include "uaseg/error.hpp"

namespace uaseg {

UncertaintyState::UncertaintyState(std::size_t components) : log_variance(components, 0.0) {
  if (components == 0) {
    throw Error(ErrorCode::invalid_argument, "uncertainty state needs at least one component");
  }
}

double UncertaintyState::sigma2(std::size_t m) const { return std::exp(log_variance.at(m)); }

std::vector<double> UncertaintyState::sigma2() const {
  std::vector<double> out;
  out.reserve(size());
  for (double s : log_variance) out.push_back(std::exp(s));
  return out;
}

std::string log_variance_leaf(std::size_t m) { return "log_var_" + std::to_string(m); }

static void check_inputs(std::span<const double> losses, const UncertaintyState& state) {
  if (losses.size() != state.size()) {
    throw Error(ErrorCode::shape_mismatch, "combine: " + std::to_string(losses.size()) +
                                               " losses for " + std::to_string(state.size()) +
                                               " noise parameters");
  }
  for (double l : losses) {
    if (!std::isfinite(l)) throw Error(ErrorCode::non_finite, "combine: loss value is not finite");
  }
}

double combine(std::span<const double> losses, const UncertaintyState& state) {
  check_inputs(losses, state);
  double total = 0.0;
  for (std::size_t m = 0; m < losses.size(); ++m) {
    const double s = state.log_variance[m];
    total += 0.5 * std::exp(-s) * losses[m] + std::log(1.0 + std::exp(s));
  }
  return total;
}

std::vector<double> combine_gradient(std::span<const double> losses, const UncertaintyState& state) {
  check_inputs(losses, state);
  std::vector<double> grad(losses.size());
  for (std::size_t m = 0; m < losses.size(); ++m) {
    const double s = state.log_variance[m];
    grad[m] = -0.5 * losses[m] * std::exp(-s) + std::exp(s) / (1.0 + std::exp(s));
  }
  return grad;
}

NodeId combine(Graph& g, std::span<const NodeId> losses, std::span<const NodeId> log_variances) {
  if (losses.size() != log_variances.size() || losses.empty()) {
    throw Error(ErrorCode::shape_mismatch, "combine: loss and noise parameter counts differ");
  }
  const NodeId one = g.constant(1.0);
  std::optional<NodeId> total;
  for (std::size_t m = 0; m < losses.size(); ++m) {
    const NodeId s = log_variances[m];
    const NodeId weight = g.scale(g.exp(g.scale(s, -1.0)), 0.5);
    const NodeId reg = g.log(g.add(one, g.exp(s)));
    const NodeId term = g.add(g.mul(weight, losses[m]), reg);
    total = total ? g.add(*total, term) : term;
  }
  return *total;
}

double stationary_sigma2(double loss) {
  if (!(loss >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "stationary_sigma2 needs a non-negative loss");
  }
  if (loss == 0.0) return 0.0;
  return (loss + std::sqrt(loss * loss + 8.0 * loss)) / 4.0;
}

std::vector<double> effective_weights(const UncertaintyState& state) {
  std::vector<double> w;
  w.reserve(state.size());
  for (double s : state.log_variance) w.push_back(0.5 * std::exp(-s));
  return w;
}

}  // namespace uaseg
