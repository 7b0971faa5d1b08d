#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "uaseg/grid.hpp"

namespace uaseg {

// Strictly binary 2D (HxW) or 3D (DxHxW) mask.
class BinaryMask {
 public:
  explicit BinaryMask(Shape shape);

  // Throws ErrorCode::non_binary unless every entry is exactly 0 or 1.
  static BinaryMask from_grid(const Grid& grid);
  // Foreground where value > threshold.
  static BinaryMask threshold(const Grid& grid, double threshold = 0.5);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return bits_.size(); }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool value) { bits_[i] = value ? 1 : 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }
  Grid to_grid() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Shape shape_;
  std::vector<std::uint8_t> bits_;
};

// Flat indices into a mask, ascending.
using PointSet = std::vector<std::size_t>;

// (plane, row, col); plane is 0 for 2D shapes.
std::array<std::size_t, 3> coordinates(const Shape& shape, std::size_t flat);

// Foreground pixels with at least one 4-connected (2D) or 6-connected (3D)
// background neighbour. Outside the grid counts as background.
PointSet boundary_points(const BinaryMask& mask);

// Exact squared Euclidean distance from every pixel centre to the nearest
// point of `features`. Pixels get +infinity when `features` is empty.
std::vector<double> squared_distance_transform(const Shape& shape, const PointSet& features);

// 2|y ∩ ŷ| / (|y| + |ŷ|); 1 when both masks are empty.
double dsc(const BinaryMask& y, const BinaryMask& y_hat);
double dsc(const Grid& y, const Grid& y_hat);

struct NsdConfig {
  double tolerance = 2.0;  // pixel units

  // 2.0 for 2D masks, 1.0 for 3D.
  static NsdConfig for_rank(std::size_t rank);
};

// Normalized surface dice over the boundary point sets of both masks. 1 when
// both boundaries are empty, 0 when exactly one is.
double nsd(const BinaryMask& y, const BinaryMask& y_hat, NsdConfig cfg);

// Same contract as nsd(), by exhaustive pairwise distances.
double nsd_bruteforce(const BinaryMask& y, const BinaryMask& y_hat, NsdConfig cfg);

struct EvalRecord {
  std::string case_id;
  double dsc = 0.0;
  double nsd = 0.0;
  double seconds = 0.0;
};

// Header `case_id,dsc,nsd,seconds`, rows sorted by case id, 6 decimals.
void write_eval_csv(std::ostream& os, std::vector<EvalRecord> records);

}  // namespace uaseg
