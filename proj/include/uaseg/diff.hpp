#pragma once

// Reverse-mode differentiation over dense grids.
//
// A Graph is built once from primitive operations and then evaluated any
// number of times against different leaf bindings. Node inputs always precede
// the node, so insertion order is a valid topological order.

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uaseg/grid.hpp"

namespace uaseg {

enum class Op {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  matmul,
  conv2d,
  bias_add,
  relu,
  sigmoid,
  exp,
  log,
  clamp,
  sum,
  mean,
  reshape,
};

std::string_view to_string(Op op);

struct NodeId {
  std::size_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct Node {
  Op op = Op::leaf;
  std::vector<NodeId> inputs;
  std::string label;  // leaf name, or a diagnostic label
  double lo = 0.0;    // clamp bounds
  double hi = 0.0;
  Shape shape;        // reshape target
  Grid value;         // constant payload
};

class Graph {
 public:
  // Requesting the same leaf name twice returns the same node.
  NodeId leaf(std::string name);
  NodeId constant(Grid value);
  NodeId constant(double value) { return constant(Grid::scalar(value)); }

  // Elementwise; operands share a shape or one of them is a single element.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);

  NodeId matmul(NodeId a, NodeId b);
  // Stride 1, zero padded, 1x1 or 3x3 kernel. Input CxHxW with kernel OxCxkxk,
  // or a single-channel HxW input with a kxk kernel.
  NodeId conv2d(NodeId input, NodeId kernel);
  // CxHxW plus a length-C bias vector.
  NodeId bias_add(NodeId input, NodeId bias);

  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId clamp(NodeId x, double lo, double hi);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId reshape(NodeId x, Shape shape);

  NodeId scale(NodeId x, double k) { return mul(constant(k), x); }

  void set_output(NodeId id);
  NodeId output() const;

  void set_label(NodeId id, std::string label);
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::optional<NodeId> find_leaf(std::string_view name) const;
  std::vector<std::string> leaf_names() const;

  // "node 12 (conv2d 'layer2')" style description used in error messages.
  std::string describe(NodeId id) const;

 private:
  NodeId push(Node node);

  std::vector<Node> nodes_;
  std::optional<NodeId> output_;
};

using Bindings = std::map<std::string, Grid, std::less<>>;
using Gradients = std::map<std::string, Grid, std::less<>>;

// Forward values of every node for one set of bindings. The graph must outlive
// the tape.
class Tape {
 public:
  Tape(const Graph& graph, const Bindings& bindings);

  double output() const;
  const Grid& value(NodeId id) const { return values_.at(id.index); }

  // d(output)/d(leaf) for each named leaf. Requested leaves the output does not
  // depend on get zero gradients.
  Gradients backward(std::span<const std::string> wrt) const;

  // Number of relu/clamp input elements lying within `tol` of a kink. With a
  // non-empty `wrt`, only nodes that depend on those leaves count.
  std::size_t kink_count(double tol, std::span<const std::string> wrt = {}) const;

 private:
  const Graph* graph_;
  std::vector<Grid> values_;
};

double evaluate(const Graph& graph, const Bindings& bindings);
Gradients gradient(const Graph& graph, const Bindings& bindings,
                   std::span<const std::string> wrt);

struct ParamCheck {
  std::string name;
  Grid analytic;
  Grid numeric;
  // |a - n| / max(1e-8, |a| + |n|) over the whole tensor, with |.| the L2 norm.
  double rel_error = 0.0;
  // Largest element-wise relative error. Diagnostic only: entries much smaller
  // than ulp(f) / (2h) / tol cannot be resolved by central differences.
  double max_rel_error = 0.0;
  bool pass = false;  // rel_error <= tol
};

struct GradReport {
  std::vector<ParamCheck> params;
  double rel_error = 0.0;      // worst tensor
  double max_rel_error = 0.0;  // worst element
  std::size_t kink_points = 0;  // relu/clamp inputs within 1e-5 of a kink, on the wrt path
  bool pass = false;
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);
double relative_error(const Grid& analytic, const Grid& numeric);

// Central finite differences with step h against the analytic gradient.
GradReport gradcheck(const Graph& graph, const Bindings& bindings,
                     std::span<const std::string> wrt, double h = 1e-6,
                     double tol = 1e-4);

}  // namespace uaseg
