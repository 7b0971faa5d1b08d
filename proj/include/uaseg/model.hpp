#pragma once

// Tiny box-prompted segmentation network:
//   conv3x3(2 -> width) + relu + conv3x3(width -> width) + relu + conv1x1(width -> 1)
// followed by a sigmoid. Input channels are the image and a box indicator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "uaseg/diff.hpp"
#include "uaseg/grid.hpp"
#include "uaseg/optim.hpp"

namespace uaseg {

// Half-open pixel box [row0, row1) x [col0, col1).
struct BoxPrompt {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t row1 = 0;
  std::size_t col1 = 0;

  // Throws ErrorCode::box_out_of_bounds unless the box is non-empty and fits.
  void validate(std::size_t height, std::size_t width) const;
  bool contains(std::size_t row, std::size_t col) const {
    return row >= row0 && row < row1 && col >= col0 && col < col1;
  }

  friend bool operator==(const BoxPrompt&, const BoxPrompt&) = default;
};

struct ModelParams {
  std::size_t width = 8;
  // conv1.weight, conv1.bias, conv2.weight, conv2.bias, head.weight, head.bias
  ParamList tensors;

  static const std::vector<std::string>& names();
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline constexpr std::size_t kStudentWidth = 8;
inline constexpr std::size_t kTeacherWidth = 16;

// He-style uniform(+-sqrt(6 / fan_in)) weights, zero biases.
ModelParams init_params(std::uint64_t seed, std::size_t width);

// 2xHxW: image channel and box indicator channel.
Grid model_input(const Grid& image, const BoxPrompt& box);

// Graph outputs are single-plane 1xHxW grids; losses bind their targets with
// the same shape.
struct ModelNodes {
  NodeId logits;
  NodeId probs;  // sigmoid(logits)
};

// Adds the network to `g`, reading the input from leaf `input_leaf` and the
// parameters from leaves named prefix + ModelParams::names().
ModelNodes build_model(Graph& g, std::string_view input_leaf = "input",
                       std::string_view prefix = "");
void bind_params(Bindings& bindings, const ModelParams& params, std::string_view prefix = "");
std::vector<std::string> param_leaf_names(std::string_view prefix = "");

Grid forward(const Grid& image, const BoxPrompt& box, const ModelParams& params);
Grid forward_logits(const Grid& image, const BoxPrompt& box, const ModelParams& params);

// Mean squared difference of logits.
NodeId distill_loss(Graph& g, NodeId teacher_logits, NodeId student_logits);
double distill_loss(const Grid& teacher_logits, const Grid& student_logits);

struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
  std::size_t image_height = 0;  // training image size, 0 if unknown
  std::size_t image_width = 0;
  std::vector<std::string> loss_names;
  std::vector<double> log_variance;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Versioned text container; doubles are written as hex floats so a round trip
// is bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text);

}  // namespace uaseg
