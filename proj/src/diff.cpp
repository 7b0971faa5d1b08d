#include "uaseg/diff.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "uaseg/error.hpp"

namespace uaseg {

std::string_view to_string(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::matmul: return "matmul";
    case Op::conv2d: return "conv2d";
    case Op::bias_add: return "bias_add";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::clamp: return "clamp";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::reshape: return "reshape";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Graph construction

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    if (in.index >= nodes_.size()) {
      throw Error(ErrorCode::invalid_argument,
                  "node input " + std::to_string(in.index) + " does not exist yet");
    }
  }
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId Graph::leaf(std::string name) {
  if (auto existing = find_leaf(name)) return *existing;
  Node n;
  n.op = Op::leaf;
  n.label = std::move(name);
  return push(std::move(n));
}

NodeId Graph::constant(Grid value) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

static Node binary(Op op, NodeId a, NodeId b) {
  Node n;
  n.op = op;
  n.inputs = {a, b};
  return n;
}

static Node unary(Op op, NodeId x) {
  Node n;
  n.op = op;
  n.inputs = {x};
  return n;
}

NodeId Graph::add(NodeId a, NodeId b) { return push(binary(Op::add, a, b)); }
NodeId Graph::sub(NodeId a, NodeId b) { return push(binary(Op::sub, a, b)); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(binary(Op::mul, a, b)); }
NodeId Graph::div(NodeId a, NodeId b) { return push(binary(Op::div, a, b)); }
NodeId Graph::matmul(NodeId a, NodeId b) { return push(binary(Op::matmul, a, b)); }
NodeId Graph::conv2d(NodeId x, NodeId k) { return push(binary(Op::conv2d, x, k)); }
NodeId Graph::bias_add(NodeId x, NodeId b) { return push(binary(Op::bias_add, x, b)); }
NodeId Graph::relu(NodeId x) { return push(unary(Op::relu, x)); }
NodeId Graph::sigmoid(NodeId x) { return push(unary(Op::sigmoid, x)); }
NodeId Graph::exp(NodeId x) { return push(unary(Op::exp, x)); }
NodeId Graph::log(NodeId x) { return push(unary(Op::log, x)); }
NodeId Graph::sum(NodeId x) { return push(unary(Op::sum, x)); }
NodeId Graph::mean(NodeId x) { return push(unary(Op::mean, x)); }

NodeId Graph::clamp(NodeId x, double lo, double hi) {
  if (!(lo <= hi)) {
    throw Error(ErrorCode::invalid_argument, "clamp requires lo <= hi");
  }
  Node n = unary(Op::clamp, x);
  n.lo = lo;
  n.hi = hi;
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  Node n = unary(Op::reshape, x);
  n.shape = std::move(shape);
  return push(std::move(n));
}

void Graph::set_output(NodeId id) {
  if (id.index >= nodes_.size()) {
    throw Error(ErrorCode::invalid_argument, "output node does not exist");
  }
  output_ = id;
}

NodeId Graph::output() const {
  if (!output_) throw Error(ErrorCode::invalid_argument, "graph has no output node");
  return *output_;
}

void Graph::set_label(NodeId id, std::string label) {
  Node& n = nodes_.at(id.index);
  if (n.op == Op::leaf) {
    throw Error(ErrorCode::invalid_argument, "leaf names are fixed at creation");
  }
  n.label = std::move(label);
}

std::optional<NodeId> Graph::find_leaf(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == Op::leaf && nodes_[i].label == name) return NodeId{i};
  }
  return std::nullopt;
}

std::vector<std::string> Graph::leaf_names() const {
  std::vector<std::string> names;
  for (const Node& n : nodes_) {
    if (n.op == Op::leaf) names.push_back(n.label);
  }
  return names;
}

std::string Graph::describe(NodeId id) const {
  const Node& n = node(id);
  std::string s = "node " + std::to_string(id.index) + " (" + std::string(to_string(n.op));
  if (!n.label.empty()) s += " '" + n.label + "'";
  return s + ")";
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

[[noreturn]] void shape_error(const Graph& g, NodeId id, const std::string& what) {
  throw Error(ErrorCode::shape_mismatch, g.describe(id) + ": " + what);
}

struct ConvDims {
  std::size_t in_ch, out_ch, height, width, k;
  bool planar;  // HxW input and kxk kernel
};

ConvDims conv_dims(const Graph& g, NodeId id, const Grid& x, const Grid& w) {
  ConvDims d{};
  if (x.rank() == 2 && w.rank() == 2) {
    d = {1, 1, x.shape()[0], x.shape()[1], w.shape()[0], true};
    if (w.shape()[1] != d.k) shape_error(g, id, "kernel must be square");
  } else if (x.rank() == 3 && w.rank() == 4) {
    d = {x.shape()[0], w.shape()[0], x.shape()[1], x.shape()[2], w.shape()[2], false};
    if (w.shape()[1] != d.in_ch) {
      shape_error(g, id, "kernel " + to_string(w.shape()) + " does not match input " +
                             to_string(x.shape()));
    }
    if (w.shape()[3] != d.k) shape_error(g, id, "kernel must be square");
  } else {
    shape_error(g, id, "conv2d needs CxHxW input with OxCxkxk kernel or HxW with kxk, got " +
                           to_string(x.shape()) + " and " + to_string(w.shape()));
  }
  if (d.k != 1 && d.k != 3) shape_error(g, id, "only 1x1 and 3x3 kernels are supported");
  return d;
}

// Visits every (output row range, input offset) pair of a zero-padded
// stride-1 convolution tap at offset (dy, dx).
struct TapRange {
  std::size_t y0, y1, x0, x1;
};

TapRange tap_range(std::ptrdiff_t dy, std::ptrdiff_t dx, std::size_t h, std::size_t w) {
  auto lo = [](std::ptrdiff_t d) { return static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -d)); };
  auto hi = [](std::ptrdiff_t d, std::size_t n) {
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n),
                                                             static_cast<std::ptrdiff_t>(n) - d));
  };
  return {lo(dy), hi(dy, h), lo(dx), hi(dx, w)};
}

double row_dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void conv_forward(const ConvDims& d, const double* x, const double* w, double* out) {
  const std::size_t plane = d.height * d.width;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(d.k / 2);
  for (std::size_t o = 0; o < d.out_ch; ++o) {
    double* op = out + o * plane;
    for (std::size_t c = 0; c < d.in_ch; ++c) {
      const double* xp = x + c * plane;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          const double wv = w[((o * d.in_ch + c) * d.k + ky) * d.k + kx];
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const TapRange r = tap_range(dy, dx, d.height, d.width);
          const std::size_t len = r.x1 > r.x0 ? r.x1 - r.x0 : 0;
          for (std::size_t y = r.y0; y < r.y1; ++y) {
            double* orow = op + y * d.width + r.x0;
            const double* xrow = xp + (y + dy) * d.width + (r.x0 + dx);
            for (std::size_t j = 0; j < len; ++j) orow[j] += wv * xrow[j];
          }
        }
      }
    }
  }
}

void conv_backward(const ConvDims& d, const double* x, const double* w, const double* gout,
                   double* gx, double* gw) {
  const std::size_t plane = d.height * d.width;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(d.k / 2);
  for (std::size_t o = 0; o < d.out_ch; ++o) {
    const double* gp = gout + o * plane;
    for (std::size_t c = 0; c < d.in_ch; ++c) {
      const double* xp = x + c * plane;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          const std::size_t widx = ((o * d.in_ch + c) * d.k + ky) * d.k + kx;
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const TapRange r = tap_range(dy, dx, d.height, d.width);
          const std::size_t len = r.x1 > r.x0 ? r.x1 - r.x0 : 0;
          if (gw) {
            double acc = 0.0;
            for (std::size_t y = r.y0; y < r.y1; ++y) {
              acc += row_dot(gp + y * d.width + r.x0, xp + (y + dy) * d.width + (r.x0 + dx), len);
            }
            gw[widx] += acc;
          }
          if (gx) {
            const double wv = w[widx];
            double* gxp = gx + c * plane;
            for (std::size_t y = r.y0; y < r.y1; ++y) {
              const double* grow = gp + y * d.width + r.x0;
              double* xrow = gxp + (y + dy) * d.width + (r.x0 + dx);
              for (std::size_t j = 0; j < len; ++j) xrow[j] += wv * grow[j];
            }
          }
        }
      }
    }
  }
}

bool broadcastable(const Grid& a, const Grid& b) {
  return a.shape() == b.shape() || a.is_scalar() || b.is_scalar();
}

template <class F>
Grid elementwise(const Grid& a, const Grid& b, F f) {
  const bool a_small = a.is_scalar() && !b.is_scalar();
  const Grid& big = a_small ? b : a;
  Grid out(big.shape());
  auto od = out.data();
  const std::size_t n = od.size();
  const bool a_one = a.size() == 1 && n != 1;
  const bool b_one = b.size() == 1 && n != 1;
  for (std::size_t i = 0; i < n; ++i) {
    od[i] = f(a[a_one ? 0 : i], b[b_one ? 0 : i]);
  }
  return out;
}

template <class F>
Grid map(const Grid& x, F f) {
  Grid out(x.shape());
  auto od = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(xd[i]);
  return out;
}

// Adds `contrib` into `acc`, summing down to a single element when the
// receiving operand was broadcast.
void accumulate(std::optional<Grid>& acc, const Shape& target_shape, const Grid& contrib) {
  if (!acc) acc.emplace(target_shape, 0.0);
  auto ad = acc->data();
  auto cd = contrib.data();
  if (ad.size() == cd.size()) {
    for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += cd[i];
  } else {
    double s = 0.0;
    for (double v : cd) s += v;
    ad[0] += s;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward

Tape::Tape(const Graph& graph, const Bindings& bindings) : graph_(&graph) {
  const NodeId out_id = graph.output();
  values_.resize(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const NodeId id{i};
    const Node& n = graph.node(id);
    auto in = [&](std::size_t k) -> const Grid& { return values_[n.inputs[k].index]; };
    Grid v;
    switch (n.op) {
      case Op::leaf: {
        auto it = bindings.find(n.label);
        if (it == bindings.end()) {
          throw Error(ErrorCode::unbound_leaf, graph.describe(id) + ": leaf is not bound");
        }
        v = it->second;
        break;
      }
      case Op::constant:
        v = n.value;
        break;
      case Op::add:
      case Op::sub:
      case Op::mul:
      case Op::div: {
        const Grid& a = in(0);
        const Grid& b = in(1);
        if (!broadcastable(a, b)) {
          shape_error(graph, id, "operands " + to_string(a.shape()) + " and " +
                                     to_string(b.shape()) + " are not compatible");
        }
        if (n.op == Op::add) v = elementwise(a, b, [](double p, double q) { return p + q; });
        if (n.op == Op::sub) v = elementwise(a, b, [](double p, double q) { return p - q; });
        if (n.op == Op::mul) v = elementwise(a, b, [](double p, double q) { return p * q; });
        if (n.op == Op::div) v = elementwise(a, b, [](double p, double q) { return p / q; });
        break;
      }
      case Op::matmul: {
        const Grid& a = in(0);
        const Grid& b = in(1);
        if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
          shape_error(graph, id, "cannot multiply " + to_string(a.shape()) + " by " +
                                     to_string(b.shape()));
        }
        const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
        v = Grid(Shape{m, p});
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t j = 0; j < k; ++j) {
            const double av = a[r * k + j];
            for (std::size_t c = 0; c < p; ++c) v[r * p + c] += av * b[j * p + c];
          }
        break;
      }
      case Op::conv2d: {
        const ConvDims d = conv_dims(graph, id, in(0), in(1));
        v = d.planar ? Grid(Shape{d.height, d.width}) : Grid(Shape{d.out_ch, d.height, d.width});
        conv_forward(d, in(0).data().data(), in(1).data().data(), v.data().data());
        break;
      }
      case Op::bias_add: {
        const Grid& x = in(0);
        const Grid& b = in(1);
        if (x.rank() != 3 || b.size() != x.shape()[0]) {
          shape_error(graph, id, "bias " + to_string(b.shape()) + " does not match channels of " +
                                     to_string(x.shape()));
        }
        v = x;
        const std::size_t plane = x.shape()[1] * x.shape()[2];
        for (std::size_t c = 0; c < x.shape()[0]; ++c)
          for (std::size_t j = 0; j < plane; ++j) v[c * plane + j] += b[c];
        break;
      }
      case Op::relu:
        v = map(in(0), [](double x) { return x > 0.0 ? x : 0.0; });
        break;
      case Op::sigmoid:
        v = map(in(0), [](double x) {
          if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
          const double e = std::exp(x);
          return e / (1.0 + e);
        });
        break;
      case Op::exp:
        v = map(in(0), [](double x) { return std::exp(x); });
        break;
      case Op::log:
        v = map(in(0), [](double x) { return std::log(x); });
        break;
      case Op::clamp:
        v = map(in(0), [lo = n.lo, hi = n.hi](double x) { return std::clamp(x, lo, hi); });
        break;
      case Op::sum:
      case Op::mean: {
        double s = 0.0;
        for (double x : in(0).data()) s += x;
        if (n.op == Op::mean) s /= static_cast<double>(in(0).size());
        v = Grid::scalar(s);
        break;
      }
      case Op::reshape:
        if (element_count(n.shape) != in(0).size()) {
          shape_error(graph, id, "cannot reshape " + to_string(in(0).shape()) + " to " +
                                     to_string(n.shape));
        }
        v = in(0).reshaped(n.shape);
        break;
    }
    if (!v.all_finite()) {
      throw Error(ErrorCode::non_finite, graph.describe(id) + ": produced a non-finite value");
    }
    values_[i] = std::move(v);
  }
  if (!values_[out_id.index].is_scalar()) {
    throw Error(ErrorCode::shape_mismatch,
                graph.describe(out_id) + ": output must be a scalar, got " +
                    to_string(values_[out_id.index].shape()));
  }
}

double Tape::output() const { return values_[graph_->output().index][0]; }

namespace {

// needs[i] is true when node i depends on one of the named leaves.
std::vector<bool> depends_on(const Graph& g, std::span<const std::string> wrt) {
  const std::set<std::string, std::less<>> wanted(wrt.begin(), wrt.end());
  std::vector<bool> needs(g.size(), false);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Node& n = g.node(NodeId{i});
    if (n.op == Op::leaf) {
      needs[i] = wanted.contains(n.label);
    } else {
      for (NodeId in : n.inputs) needs[i] = needs[i] || needs[in.index];
    }
  }
  return needs;
}

}  // namespace

std::size_t Tape::kink_count(double tol, std::span<const std::string> wrt) const {
  const std::vector<bool> needs = depends_on(*graph_, wrt);
  std::size_t count = 0;
  for (std::size_t i = 0; i < graph_->size(); ++i) {
    const Node& n = graph_->node(NodeId{i});
    if (n.op != Op::relu && n.op != Op::clamp) continue;
    if (!wrt.empty() && !needs[i]) continue;
    for (double x : values_[n.inputs[0].index].data()) {
      if (n.op == Op::relu && std::abs(x) <= tol) ++count;
      if (n.op == Op::clamp && (std::abs(x - n.lo) <= tol || std::abs(x - n.hi) <= tol)) ++count;
    }
  }
  return count;
}

// ---------------------------------------------------------------------------
// Backward

Gradients Tape::backward(std::span<const std::string> wrt) const {
  const Graph& g = *graph_;
  const std::vector<bool> needs = depends_on(g, wrt);

  std::vector<std::optional<Grid>> grads(g.size());
  const NodeId out = g.output();
  grads[out.index] = Grid(values_[out.index].shape(), 1.0);

  for (std::size_t idx = out.index + 1; idx-- > 0;) {
    if (!needs[idx] || !grads[idx]) continue;
    const Node& n = g.node(NodeId{idx});
    if (n.op == Op::leaf || n.op == Op::constant) continue;
    const Grid& gout = *grads[idx];
    const Grid& y = values_[idx];
    auto input_needs = [&](std::size_t k) { return needs[n.inputs[k].index]; };
    auto target = [&](std::size_t k) -> std::optional<Grid>& { return grads[n.inputs[k].index]; };
    auto in = [&](std::size_t k) -> const Grid& { return values_[n.inputs[k].index]; };

    switch (n.op) {
      case Op::add:
      case Op::sub:
        if (input_needs(0)) accumulate(target(0), in(0).shape(), gout);
        if (input_needs(1)) {
          if (n.op == Op::add) {
            accumulate(target(1), in(1).shape(), gout);
          } else {
            accumulate(target(1), in(1).shape(), map(gout, [](double x) { return -x; }));
          }
        }
        break;
      case Op::mul:
        if (input_needs(0)) accumulate(target(0), in(0).shape(), elementwise(gout, in(1), std::multiplies<>{}));
        if (input_needs(1)) accumulate(target(1), in(1).shape(), elementwise(gout, in(0), std::multiplies<>{}));
        break;
      case Op::div:
        if (input_needs(0)) accumulate(target(0), in(0).shape(), elementwise(gout, in(1), std::divides<>{}));
        if (input_needs(1)) {
          // d(a/b)/db = -(a/b)/b = -y/b
          Grid yb = elementwise(y, in(1), std::divides<>{});
          accumulate(target(1), in(1).shape(),
                     elementwise(gout, yb, [](double p, double q) { return -p * q; }));
        }
        break;
      case Op::matmul: {
        const Grid& a = in(0);
        const Grid& b = in(1);
        const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
        if (input_needs(0)) {
          Grid ga(a.shape());
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < k; ++j) {
              double s = 0.0;
              for (std::size_t c = 0; c < p; ++c) s += gout[r * p + c] * b[j * p + c];
              ga[r * k + j] = s;
            }
          accumulate(target(0), a.shape(), ga);
        }
        if (input_needs(1)) {
          Grid gb(b.shape());
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < k; ++j) {
              const double av = a[r * k + j];
              for (std::size_t c = 0; c < p; ++c) gb[j * p + c] += av * gout[r * p + c];
            }
          accumulate(target(1), b.shape(), gb);
        }
        break;
      }
      case Op::conv2d: {
        const ConvDims d = conv_dims(g, NodeId{idx}, in(0), in(1));
        std::optional<Grid> gx, gw;
        if (input_needs(0)) gx.emplace(in(0).shape(), 0.0);
        if (input_needs(1)) gw.emplace(in(1).shape(), 0.0);
        conv_backward(d, in(0).data().data(), in(1).data().data(), gout.data().data(),
                      gx ? gx->data().data() : nullptr, gw ? gw->data().data() : nullptr);
        if (gx) accumulate(target(0), in(0).shape(), *gx);
        if (gw) accumulate(target(1), in(1).shape(), *gw);
        break;
      }
      case Op::bias_add: {
        if (input_needs(0)) accumulate(target(0), in(0).shape(), gout);
        if (input_needs(1)) {
          const Shape& xs = in(0).shape();
          const std::size_t plane = xs[1] * xs[2];
          Grid gb(in(1).shape());
          for (std::size_t c = 0; c < xs[0]; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < plane; ++j) s += gout[c * plane + j];
            gb[c] = s;
          }
          accumulate(target(1), in(1).shape(), gb);
        }
        break;
      }
      case Op::relu:
        accumulate(target(0), in(0).shape(),
                   elementwise(gout, in(0), [](double gv, double x) { return x > 0.0 ? gv : 0.0; }));
        break;
      case Op::sigmoid:
        accumulate(target(0), in(0).shape(),
                   elementwise(gout, y, [](double gv, double s) { return gv * s * (1.0 - s); }));
        break;
      case Op::exp:
        accumulate(target(0), in(0).shape(), elementwise(gout, y, std::multiplies<>{}));
        break;
      case Op::log:
        accumulate(target(0), in(0).shape(), elementwise(gout, in(0), std::divides<>{}));
        break;
      case Op::clamp:
        accumulate(target(0), in(0).shape(),
                   elementwise(gout, in(0), [lo = n.lo, hi = n.hi](double gv, double x) {
                     return (x >= lo && x <= hi) ? gv : 0.0;
                   }));
        break;
      case Op::sum:
      case Op::mean: {
        double gv = gout[0];
        if (n.op == Op::mean) gv /= static_cast<double>(in(0).size());
        accumulate(target(0), in(0).shape(), Grid(in(0).shape(), gv));
        break;
      }
      case Op::reshape:
        accumulate(target(0), in(0).shape(), gout.reshaped(in(0).shape()));
        break;
      case Op::leaf:
      case Op::constant:
        break;
    }
  }

  Gradients result;
  for (const std::string& name : wrt) {
    auto leaf = g.find_leaf(name);
    if (!leaf) {
      throw Error(ErrorCode::unbound_leaf, "gradient requested for unknown leaf '" + name + "'");
    }
    const auto& gr = grads[leaf->index];
    result.insert_or_assign(name, gr ? *gr : Grid(values_[leaf->index].shape(), 0.0));
  }
  return result;
}

double evaluate(const Graph& graph, const Bindings& bindings) {
  return Tape(graph, bindings).output();
}

Gradients gradient(const Graph& graph, const Bindings& bindings,
                   std::span<const std::string> wrt) {
  return Tape(graph, bindings).backward(wrt);
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

double relative_error(const Grid& analytic, const Grid& numeric) {
  if (analytic.shape() != numeric.shape()) {
    throw Error(ErrorCode::shape_mismatch, "relative_error: " + to_string(analytic.shape()) + " vs " +
                                               to_string(numeric.shape()));
  }
  double diff = 0.0, a = 0.0, n = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    a += analytic[i] * analytic[i];
    n += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max(1e-8, std::sqrt(a) + std::sqrt(n));
}

GradReport gradcheck(const Graph& graph, const Bindings& bindings,
                     std::span<const std::string> wrt, double h, double tol) {
  if (!(h > 0.0) || !(tol > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "gradcheck needs h > 0 and tol > 0");
  }
  const Tape base(graph, bindings);
  const Gradients analytic = base.backward(wrt);

  GradReport report;
  report.kink_points = base.kink_count(1e-5, wrt);
  report.pass = true;
  Bindings probe = bindings;
  for (const std::string& name : wrt) {
    ParamCheck pc;
    pc.name = name;
    pc.analytic = analytic.at(name);
    pc.numeric = Grid(pc.analytic.shape(), 0.0);
    Grid& p = probe.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double fp = evaluate(graph, probe);
      p[i] = orig - h;
      const double fm = evaluate(graph, probe);
      p[i] = orig;
      pc.numeric[i] = (fp - fm) / (2.0 * h);
      pc.max_rel_error = std::max(pc.max_rel_error, relative_error(pc.analytic[i], pc.numeric[i]));
    }
    pc.rel_error = relative_error(pc.analytic, pc.numeric);
    pc.pass = pc.rel_error <= tol;
    report.pass = report.pass && pc.pass;
    report.rel_error = std::max(report.rel_error, pc.rel_error);
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(std::move(pc));
  }
  return report;
}

}  // namespace uaseg
