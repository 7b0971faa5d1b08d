#include "uaseg/grid.hpp"

#include <cmath>
#include <sstream>

#include "uaseg/error.hpp"

namespace uaseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::unbound_leaf: return "unbound_leaf";
    case ErrorCode::non_binary: return "non_binary";
    case ErrorCode::pgm_variant: return "pgm_variant";
    case ErrorCode::pgm_header: return "pgm_header";
    case ErrorCode::pgm_truncated: return "pgm_truncated";
    case ErrorCode::io: return "io";
    case ErrorCode::dataset_missing: return "dataset_missing";
    case ErrorCode::checkpoint: return "checkpoint";
    case ErrorCode::box_out_of_bounds: return "box_out_of_bounds";
    case ErrorCode::config: return "config";
    case ErrorCode::divergence: return "divergence";
  }
  return "unknown";
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void validate_shape(const Shape& shape) {
  if (shape.empty()) throw Error(ErrorCode::invalid_argument, "grid shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) {
      throw Error(ErrorCode::invalid_argument,
                  "grid shape " + to_string(shape) + " has a zero extent");
    }
  }
}

Grid::Grid(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(element_count(shape_), fill);
}

Grid::Grid(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != element_count(shape_)) {
    throw Error(ErrorCode::shape_mismatch,
                "grid shape " + to_string(shape_) + " needs " +
                    std::to_string(element_count(shape_)) + " values, got " +
                    std::to_string(data_.size()));
  }
}

double Grid::item() const {
  if (data_.size() != 1) {
    throw Error(ErrorCode::shape_mismatch,
                "item() on non-scalar grid " + to_string(shape_));
  }
  return data_[0];
}

bool Grid::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Grid Grid::reshaped(Shape shape) const {
  return Grid(std::move(shape), data_);
}

}  // namespace uaseg
