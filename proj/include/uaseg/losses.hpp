#pragma once

// Segmentation losses. Each loss has a graph builder (differentiable, used in
// training) and a convenience overload on plain grids.

#include <string_view>
#include <vector>

#include "uaseg/diff.hpp"
#include "uaseg/grid.hpp"
#include "uaseg/metrics.hpp"

namespace uaseg {

enum class LossKind { mse, dice, bce, iou, sd };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct LossConfig {
  double smoothing = 1e-6;   // dice / iou
  double prob_clamp = 1e-7;  // bce

  void validate() const;
};

// Mean of (pred - target)^2.
NodeId mse_loss(Graph& g, NodeId pred, NodeId target);
// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps)
NodeId dice_loss(Graph& g, NodeId pred, NodeId target, double smoothing);
// Mean binary cross entropy with pred clamped to [eps, 1 - eps].
NodeId bce_loss(Graph& g, NodeId pred, NodeId target, double prob_clamp);
// 1 - (sum(p t) + eps) / (sum p + sum t - sum(p t) + eps)
NodeId iou_loss(Graph& g, NodeId pred, NodeId target, double smoothing);
// Mean of pred * sdm. Negative when probability mass sits inside the target.
NodeId shape_distance_loss(Graph& g, NodeId pred, NodeId sdm);
// shape_distance_loss minus its minimum over pred in [0,1], which is the mean
// of min(sdm, 0). Same gradient, but bounded below by zero.
NodeId shape_distance_excess(Graph& g, NodeId pred, NodeId sdm);

double mse_loss(const Grid& pred, const Grid& target);
double dice_loss(const Grid& pred, const Grid& target, double smoothing = 1e-6);
double bce_loss(const Grid& pred, const Grid& target, double prob_clamp = 1e-7);
double iou_loss(const Grid& pred, const Grid& target, double smoothing = 1e-6);
double shape_distance_loss(const Grid& pred, const Grid& sdm);

struct SignedDistanceMap {
  Grid distances;
  // Set when the mask is empty or full; distances are then all zero.
  bool degenerate = false;
};

// Euclidean distance to the mask boundary, negated on the foreground.
// Boundary pixels are 0.
SignedDistanceMap signed_distance_map(const BinaryMask& target);
SignedDistanceMap signed_distance_map(const Grid& target);

}  // namespace uaseg
