#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace uaseg {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of doubles with an explicit shape. Rank 1 grids of a
// single element double as scalars.
class Grid {
 public:
  Grid() : Grid(Shape{1}) {}
  explicit Grid(Shape shape, double fill = 0.0);
  Grid(Shape shape, std::vector<double> data);

  static Grid scalar(double value) { return Grid(Shape{1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 (row, col) and rank-3 (plane, row, col) accessors.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& at(std::size_t p, std::size_t r, std::size_t c) {
    return data_[(p * shape_[1] + r) * shape_[2] + c];
  }
  double at(std::size_t p, std::size_t r, std::size_t c) const {
    return data_[(p * shape_[1] + r) * shape_[2] + c];
  }

  // Value of a single-element grid.
  double item() const;

  bool all_finite() const noexcept;

  // Same data, new shape of equal element count.
  Grid reshaped(Shape shape) const;

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace uaseg
