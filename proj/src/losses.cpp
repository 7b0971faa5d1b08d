#include "uaseg/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "uaseg/error.hpp"

namespace uaseg {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::mse: return "mse";
    case LossKind::dice: return "dice";
    case LossKind::bce: return "bce";
    case LossKind::iou: return "iou";
    case LossKind::sd: return "sd";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  for (LossKind k : {LossKind::mse, LossKind::dice, LossKind::bce, LossKind::iou, LossKind::sd}) {
    if (to_string(k) == name) return k;
  }
  // Binary segmentation: cross entropy is the binary form.
  if (name == "ce") return LossKind::bce;
  throw Error(ErrorCode::config, "unknown loss '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (!(smoothing > 0.0)) throw Error(ErrorCode::config, "smoothing must be > 0");
  if (!(prob_clamp > 0.0 && prob_clamp < 0.5)) {
    throw Error(ErrorCode::config, "prob_clamp must lie in (0, 0.5)");
  }
}

NodeId mse_loss(Graph& g, NodeId pred, NodeId target) {
  const NodeId diff = g.sub(pred, target);
  return g.mean(g.mul(diff, diff));
}

NodeId dice_loss(Graph& g, NodeId pred, NodeId target, double smoothing) {
  const NodeId eps = g.constant(smoothing);
  const NodeId inter = g.sum(g.mul(pred, target));
  const NodeId num = g.add(g.scale(inter, 2.0), eps);
  const NodeId den = g.add(g.add(g.sum(pred), g.sum(target)), eps);
  return g.sub(g.constant(1.0), g.div(num, den));
}

NodeId bce_loss(Graph& g, NodeId pred, NodeId target, double prob_clamp) {
  const NodeId one = g.constant(1.0);
  const NodeId p = g.clamp(pred, prob_clamp, 1.0 - prob_clamp);
  const NodeId pos = g.mul(target, g.log(p));
  const NodeId neg = g.mul(g.sub(one, target), g.log(g.sub(one, p)));
  return g.scale(g.mean(g.add(pos, neg)), -1.0);
}

NodeId iou_loss(Graph& g, NodeId pred, NodeId target, double smoothing) {
  const NodeId eps = g.constant(smoothing);
  const NodeId inter = g.sum(g.mul(pred, target));
  const NodeId uni = g.sub(g.add(g.sum(pred), g.sum(target)), inter);
  return g.sub(g.constant(1.0), g.div(g.add(inter, eps), g.add(uni, eps)));
}

NodeId shape_distance_loss(Graph& g, NodeId pred, NodeId sdm) {
  return g.mean(g.mul(pred, sdm));
}

NodeId shape_distance_excess(Graph& g, NodeId pred, NodeId sdm) {
  const double lowest = std::numeric_limits<double>::lowest();
  const NodeId floor = g.mean(g.clamp(sdm, lowest, 0.0));
  return g.sub(shape_distance_loss(g, pred, sdm), floor);
}

namespace {

void require_same(const Grid& a, const Grid& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::shape_mismatch, std::string(what) + ": shapes " + to_string(a.shape()) +
                                               " and " + to_string(b.shape()) + " differ");
  }
}

template <class Build>
double eval_pair(const Grid& a, const Grid& b, const char* what, Build build) {
  require_same(a, b, what);
  Graph g;
  const NodeId x = g.leaf("a");
  const NodeId y = g.leaf("b");
  g.set_output(build(g, x, y));
  return evaluate(g, Bindings{{"a", a}, {"b", b}});
}

}  // namespace

double mse_loss(const Grid& pred, const Grid& target) {
  return eval_pair(pred, target, "mse_loss",
                   [](Graph& g, NodeId p, NodeId t) { return mse_loss(g, p, t); });
}

double dice_loss(const Grid& pred, const Grid& target, double smoothing) {
  return eval_pair(pred, target, "dice_loss",
                   [=](Graph& g, NodeId p, NodeId t) { return dice_loss(g, p, t, smoothing); });
}

double bce_loss(const Grid& pred, const Grid& target, double prob_clamp) {
  return eval_pair(pred, target, "bce_loss",
                   [=](Graph& g, NodeId p, NodeId t) { return bce_loss(g, p, t, prob_clamp); });
}

double iou_loss(const Grid& pred, const Grid& target, double smoothing) {
  return eval_pair(pred, target, "iou_loss",
                   [=](Graph& g, NodeId p, NodeId t) { return iou_loss(g, p, t, smoothing); });
}

double shape_distance_loss(const Grid& pred, const Grid& sdm) {
  return eval_pair(pred, sdm, "shape_distance_loss",
                   [](Graph& g, NodeId p, NodeId s) { return shape_distance_loss(g, p, s); });
}

SignedDistanceMap signed_distance_map(const BinaryMask& target) {
  SignedDistanceMap out{Grid(target.shape(), 0.0), false};
  const std::size_t fg = target.count();
  if (fg == 0 || fg == target.size()) {
    out.degenerate = true;
    return out;
  }
  const std::vector<double> d2 = squared_distance_transform(target.shape(), boundary_points(target));
  for (std::size_t i = 0; i < d2.size(); ++i) {
    const double d = std::sqrt(d2[i]);
    out.distances[i] = (target[i] && d > 0.0) ? -d : d;
  }
  return out;
}

SignedDistanceMap signed_distance_map(const Grid& target) {
  return signed_distance_map(BinaryMask::from_grid(target));
}

}  // namespace uaseg
