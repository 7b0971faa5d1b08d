#pragma once

// Uncertainty-weighted combination of M sub-losses with learnable noise
// parameters:  sum_m  L_m / (2 sigma_m^2) + log(1 + sigma_m^2).
//
// sigma_m^2 is parameterised as exp(s_m), so it stays positive without
// constraints.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "uaseg/diff.hpp"

namespace uaseg {

struct UncertaintyState {
  std::vector<double> log_variance;  // s_m

  // All s_m = 0, i.e. sigma^2 = 1 and every weight 0.5.
  explicit UncertaintyState(std::size_t components);

  std::size_t size() const noexcept { return log_variance.size(); }
  double sigma2(std::size_t m) const;
  std::vector<double> sigma2() const;
};

// Leaf name used for s_m when the combiner is embedded in a graph.
std::string log_variance_leaf(std::size_t m);

double combine(std::span<const double> losses, const UncertaintyState& state);

// d combine / d s_m = -L_m e^{-s_m} / 2 + e^{s_m} / (1 + e^{s_m})
std::vector<double> combine_gradient(std::span<const double> losses, const UncertaintyState& state);

// Differentiable form; `log_variances` are scalar nodes.
NodeId combine(Graph& g, std::span<const NodeId> losses, std::span<const NodeId> log_variances);

// Positive root of 2u^2 - L u - L = 0, the sigma^2 minimising one summand at
// fixed L. Zero when L == 0.
double stationary_sigma2(double loss);

// 1 / (2 sigma_m^2) per component.
std::vector<double> effective_weights(const UncertaintyState& state);

}  // namespace uaseg
