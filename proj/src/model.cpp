#include "uaseg/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "uaseg/error.hpp"
#include "uaseg/rng.hpp"

namespace uaseg {

namespace {

constexpr std::string_view kCheckpointMagic = "uaseg-checkpoint";
constexpr int kCheckpointVersion = 1;

std::vector<Shape> param_shapes(std::size_t width) {
  return {
      {width, 2, 3, 3}, {width},  //
      {width, width, 3, 3}, {width},  //
      {1, width, 1, 1}, {1},
  };
}

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

[[noreturn]] void bad_checkpoint(const std::string& what) {
  throw Error(ErrorCode::checkpoint, "checkpoint: " + what);
}

}  // namespace

void BoxPrompt::validate(std::size_t height, std::size_t width) const {
  if (row0 >= row1 || col0 >= col1 || row1 > height || col1 > width) {
    throw Error(ErrorCode::box_out_of_bounds,
                "box [" + std::to_string(row0) + "," + std::to_string(col0) + "," +
                    std::to_string(row1) + "," + std::to_string(col1) + ") does not fit " +
                    std::to_string(height) + "x" + std::to_string(width));
  }
}

const std::vector<std::string>& ModelParams::names() {
  static const std::vector<std::string> n = {"conv1.weight", "conv1.bias", "conv2.weight",
                                             "conv2.bias",   "head.weight", "head.bias"};
  return n;
}

ModelParams init_params(std::uint64_t seed, std::size_t width) {
  if (width == 0) throw Error(ErrorCode::invalid_argument, "model width must be positive");
  SplitMix64 rng(seed);
  ModelParams params;
  params.width = width;
  for (const Shape& shape : param_shapes(width)) {
    Grid t(shape, 0.0);
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      const double bound = std::sqrt(6.0 / fan_in);
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
    }
    params.tensors.push_back(std::move(t));
  }
  return params;
}

Grid model_input(const Grid& image, const BoxPrompt& box) {
  if (image.rank() != 2) {
    throw Error(ErrorCode::shape_mismatch, "image must be HxW, got " + to_string(image.shape()));
  }
  const std::size_t h = image.shape()[0], w = image.shape()[1];
  box.validate(h, w);
  Grid input(Shape{2, h, w}, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      input.at(0, r, c) = image.at(r, c);
      input.at(1, r, c) = box.contains(r, c) ? 1.0 : 0.0;
    }
  }
  return input;
}

std::vector<std::string> param_leaf_names(std::string_view prefix) {
  std::vector<std::string> out;
  for (const std::string& n : ModelParams::names()) out.push_back(std::string(prefix) + n);
  return out;
}

ModelNodes build_model(Graph& g, std::string_view input_leaf, std::string_view prefix) {
  const std::vector<std::string> names = param_leaf_names(prefix);
  std::vector<NodeId> p;
  for (const std::string& n : names) p.push_back(g.leaf(n));

  const NodeId x = g.leaf(std::string(input_leaf));
  NodeId h = g.relu(g.bias_add(g.conv2d(x, p[0]), p[1]));
  h = g.relu(g.bias_add(g.conv2d(h, p[2]), p[3]));
  const NodeId head = g.bias_add(g.conv2d(h, p[4]), p[5]);
  g.set_label(head, std::string(prefix) + "head");

  ModelNodes nodes{head, g.sigmoid(head)};
  return nodes;
}

void bind_params(Bindings& bindings, const ModelParams& params, std::string_view prefix) {
  const std::vector<std::string> names = param_leaf_names(prefix);
  if (params.tensors.size() != names.size()) {
    throw Error(ErrorCode::shape_mismatch, "model expects " + std::to_string(names.size()) +
                                               " parameter tensors");
  }
  for (std::size_t i = 0; i < names.size(); ++i) bindings.insert_or_assign(names[i], params.tensors[i]);
}

static Grid run_forward(const Grid& image, const BoxPrompt& box, const ModelParams& params,
                        bool probabilities) {
  Graph g;
  const ModelNodes nodes = build_model(g);
  const NodeId out = probabilities ? nodes.probs : nodes.logits;
  // Any scalar output works; the tape keeps every node value.
  g.set_output(g.sum(out));
  Bindings b;
  bind_params(b, params);
  b.insert_or_assign("input", model_input(image, box));
  const Tape tape(g, b);
  const Grid& plane = tape.value(out);
  return plane.reshaped(Shape{plane.shape()[1], plane.shape()[2]});
}

Grid forward(const Grid& image, const BoxPrompt& box, const ModelParams& params) {
  return run_forward(image, box, params, true);
}

Grid forward_logits(const Grid& image, const BoxPrompt& box, const ModelParams& params) {
  return run_forward(image, box, params, false);
}

NodeId distill_loss(Graph& g, NodeId teacher_logits, NodeId student_logits) {
  const NodeId diff = g.sub(student_logits, teacher_logits);
  return g.mean(g.mul(diff, diff));
}

double distill_loss(const Grid& teacher_logits, const Grid& student_logits) {
  if (teacher_logits.shape() != student_logits.shape()) {
    throw Error(ErrorCode::shape_mismatch, "distill_loss: logit shapes differ");
  }
  Graph g;
  g.set_output(distill_loss(g, g.leaf("teacher"), g.leaf("student")));
  return evaluate(g, Bindings{{"teacher", teacher_logits}, {"student", student_logits}});
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   uaseg-checkpoint 1
//   width 8
//   seed 42
//   image 64 64
//   losses 4 dice bce sd iou
//   log_variance 4 <hex> ...
//   tensor conv1.weight 4 8 2 3 3
//   <hex> ...
//   ...
//   end

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "width " << ckpt.params.width << '\n';
  os << "seed " << ckpt.seed << '\n';
  os << "image " << ckpt.image_height << ' ' << ckpt.image_width << '\n';
  os << "losses " << ckpt.loss_names.size();
  for (const std::string& n : ckpt.loss_names) os << ' ' << n;
  os << '\n';
  os << "log_variance " << ckpt.log_variance.size();
  for (double v : ckpt.log_variance) os << ' ' << hex(v);
  os << '\n';
  const auto& names = ModelParams::names();
  if (ckpt.params.tensors.size() != names.size()) bad_checkpoint("wrong tensor count");
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Grid& t = ckpt.params.tensors[i];
    os << "tensor " << names[i] << ' ' << t.rank();
    for (std::size_t d : t.shape()) os << ' ' << d;
    os << '\n';
    for (std::size_t j = 0; j < t.size(); ++j) os << (j ? " " : "") << hex(t[j]);
    os << '\n';
  }
  os << "end\n";
  return os.str();
}

Checkpoint parse_checkpoint(std::string_view text) {
  std::istringstream is{std::string(text)};
  auto expect = [&](std::string_view key) {
    std::string word;
    if (!(is >> word) || word != key) bad_checkpoint("expected '" + std::string(key) + "'");
  };
  auto read_double = [&]() {
    std::string tok;
    if (!(is >> tok)) bad_checkpoint("truncated value list");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) bad_checkpoint("bad number '" + tok + "'");
    return v;
  };

  Checkpoint ckpt;
  expect(kCheckpointMagic);
  int version = 0;
  if (!(is >> version) || version != kCheckpointVersion) bad_checkpoint("unsupported version");
  expect("width");
  if (!(is >> ckpt.params.width) || ckpt.params.width == 0) bad_checkpoint("bad width");
  expect("seed");
  if (!(is >> ckpt.seed)) bad_checkpoint("bad seed");
  expect("image");
  if (!(is >> ckpt.image_height >> ckpt.image_width)) bad_checkpoint("bad image size");
  expect("losses");
  std::size_t n = 0;
  if (!(is >> n)) bad_checkpoint("bad loss count");
  ckpt.loss_names.resize(n);
  for (std::string& s : ckpt.loss_names) {
    if (!(is >> s)) bad_checkpoint("truncated loss names");
  }
  expect("log_variance");
  if (!(is >> n)) bad_checkpoint("bad log-variance count");
  for (std::size_t i = 0; i < n; ++i) ckpt.log_variance.push_back(read_double());

  const std::vector<Shape> shapes = param_shapes(ckpt.params.width);
  for (std::size_t i = 0; i < ModelParams::names().size(); ++i) {
    expect("tensor");
    std::string name;
    std::size_t rank = 0;
    if (!(is >> name >> rank) || name != ModelParams::names()[i]) bad_checkpoint("unexpected tensor");
    Shape shape(rank);
    for (std::size_t& d : shape) {
      if (!(is >> d)) bad_checkpoint("bad tensor shape");
    }
    if (shape != shapes[i]) bad_checkpoint("tensor " + name + " has shape " + to_string(shape));
    std::vector<double> data(element_count(shape));
    for (double& v : data) v = read_double();
    ckpt.params.tensors.emplace_back(std::move(shape), std::move(data));
  }
  expect("end");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::io, "cannot write checkpoint " + path.string());
  os << serialize_checkpoint(ckpt);
  if (!os) throw Error(ErrorCode::io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace uaseg
