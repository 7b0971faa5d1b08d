#include "uaseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "uaseg/error.hpp"

namespace uaseg {

namespace {

void require_mask_rank(const Shape& shape) {
  if (shape.size() != 2 && shape.size() != 3) {
    throw Error(ErrorCode::shape_mismatch,
                "masks must be 2D or 3D, got " + to_string(shape));
  }
}

void require_same_shape(const BinaryMask& a, const BinaryMask& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::shape_mismatch,
                "mask shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// (planes, rows, cols) with planes == 1 for 2D.
std::array<std::size_t, 3> dims3(const Shape& shape) {
  if (shape.size() == 2) return {1, shape[0], shape[1]};
  return {shape[0], shape[1], shape[2]};
}

// One pass of the Felzenszwalb-Huttenlocher lower-envelope transform over a
// strided line. `f` holds squared distances (or +inf); results are exact for
// integer inputs.
void edt_line(double* data, std::size_t n, std::size_t stride, std::vector<double>& f,
              std::vector<double>& out, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) f[i] = data[i * stride];

  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    const double fq = f[q] + static_cast<double>(q * q);
    if (!any) {
      any = true;
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    // z[0] is -inf, so the stack never empties.
    double s = 0.0;
    while (true) {
      const double vq = static_cast<double>(v[k]);
      s = (fq - (f[v[k]] + vq * vq)) / (2.0 * (static_cast<double>(q) - vq));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (!any) return;  // line stays at +inf

  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = d * d + f[v[k]];
  }
  for (std::size_t i = 0; i < n; ++i) data[i * stride] = out[i];
}

}  // namespace

BinaryMask::BinaryMask(Shape shape) : shape_(std::move(shape)) {
  require_mask_rank(shape_);
  bits_.assign(element_count(shape_), 0);
}

BinaryMask BinaryMask::from_grid(const Grid& grid) {
  BinaryMask mask(grid.shape());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid[i];
    if (v != 0.0 && v != 1.0) {
      throw Error(ErrorCode::non_binary,
                  "mask entry " + std::to_string(i) + " is " + std::to_string(v) + ", expected 0 or 1");
    }
    mask.bits_[i] = v == 1.0 ? 1 : 0;
  }
  return mask;
}

BinaryMask BinaryMask::threshold(const Grid& grid, double threshold) {
  BinaryMask mask(grid.shape());
  for (std::size_t i = 0; i < grid.size(); ++i) mask.bits_[i] = grid[i] > threshold ? 1 : 0;
  return mask;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Grid BinaryMask::to_grid() const {
  Grid g(shape_);
  for (std::size_t i = 0; i < bits_.size(); ++i) g[i] = bits_[i];
  return g;
}

std::array<std::size_t, 3> coordinates(const Shape& shape, std::size_t flat) {
  const auto [planes, rows, cols] = dims3(shape);
  (void)planes;
  return {flat / (rows * cols), (flat / cols) % rows, flat % cols};
}

PointSet boundary_points(const BinaryMask& mask) {
  const auto [planes, rows, cols] = dims3(mask.shape());
  const bool volumetric = mask.rank() == 3;
  PointSet points;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = (p * rows + r) * cols + c;
        if (!mask[i]) continue;
        bool edge = r == 0 || r + 1 == rows || c == 0 || c + 1 == cols;
        if (volumetric) edge = edge || p == 0 || p + 1 == planes;
        if (!edge) {
          edge = !mask[i - cols] || !mask[i + cols] || !mask[i - 1] || !mask[i + 1];
          if (volumetric) edge = edge || !mask[i - rows * cols] || !mask[i + rows * cols];
        }
        if (edge) points.push_back(i);
      }
    }
  }
  return points;
}

std::vector<double> squared_distance_transform(const Shape& shape, const PointSet& features) {
  require_mask_rank(shape);
  const std::size_t n = element_count(shape);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  for (std::size_t i : features) dist.at(i) = 0.0;

  const auto [planes, rows, cols] = dims3(shape);
  const std::size_t longest = std::max({planes, rows, cols});
  std::vector<double> f(longest), out(longest), z(longest + 1);
  std::vector<std::size_t> v(longest);

  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < rows; ++r)
      edt_line(dist.data() + (p * rows + r) * cols, cols, 1, f, out, v, z);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t c = 0; c < cols; ++c)
      edt_line(dist.data() + p * rows * cols + c, rows, cols, f, out, v, z);
  if (planes > 1) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        edt_line(dist.data() + r * cols + c, planes, rows * cols, f, out, v, z);
  }
  return dist;
}

double dsc(const BinaryMask& y, const BinaryMask& y_hat) {
  require_same_shape(y, y_hat);
  std::size_t inter = 0, total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    inter += (y[i] && y_hat[i]) ? 1 : 0;
    total += (y[i] ? 1 : 0) + (y_hat[i] ? 1 : 0);
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double dsc(const Grid& y, const Grid& y_hat) {
  return dsc(BinaryMask::from_grid(y), BinaryMask::from_grid(y_hat));
}

NsdConfig NsdConfig::for_rank(std::size_t rank) {
  return NsdConfig{rank == 3 ? 1.0 : 2.0};
}

static void require_tolerance(const NsdConfig& cfg) {
  if (!(cfg.tolerance > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "NSD tolerance must be positive");
  }
}

double nsd(const BinaryMask& y, const BinaryMask& y_hat, NsdConfig cfg) {
  require_same_shape(y, y_hat);
  require_tolerance(cfg);
  const PointSet s = boundary_points(y);
  const PointSet s_hat = boundary_points(y_hat);
  if (s.empty() && s_hat.empty()) return 1.0;
  if (s.empty() || s_hat.empty()) return 0.0;

  const double t2 = cfg.tolerance * cfg.tolerance;
  const std::vector<double> to_s = squared_distance_transform(y.shape(), s);
  const std::vector<double> to_s_hat = squared_distance_transform(y.shape(), s_hat);
  std::size_t hits = 0;
  for (std::size_t i : s) hits += to_s_hat[i] <= t2 ? 1 : 0;
  for (std::size_t i : s_hat) hits += to_s[i] <= t2 ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(s.size() + s_hat.size());
}

double nsd_bruteforce(const BinaryMask& y, const BinaryMask& y_hat, NsdConfig cfg) {
  require_same_shape(y, y_hat);
  require_tolerance(cfg);
  const PointSet s = boundary_points(y);
  const PointSet s_hat = boundary_points(y_hat);
  if (s.empty() && s_hat.empty()) return 1.0;
  if (s.empty() || s_hat.empty()) return 0.0;

  const double t2 = cfg.tolerance * cfg.tolerance;
  auto within = [&](std::size_t a, const PointSet& others) {
    const auto pa = coordinates(y.shape(), a);
    for (std::size_t b : others) {
      const auto pb = coordinates(y.shape(), b);
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double d = static_cast<double>(pa[k]) - static_cast<double>(pb[k]);
        d2 += d * d;
      }
      if (d2 <= t2) return true;
    }
    return false;
  };
  std::size_t hits = 0;
  for (std::size_t a : s) hits += within(a, s_hat) ? 1 : 0;
  for (std::size_t a : s_hat) hits += within(a, s) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(s.size() + s_hat.size());
}

void write_eval_csv(std::ostream& os, std::vector<EvalRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const EvalRecord& a, const EvalRecord& b) { return a.case_id < b.case_id; });
  os << "case_id,dsc,nsd,seconds\n";
  char buf[128];
  for (const EvalRecord& r : records) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f\n", r.dsc, r.nsd, r.seconds);
    os << r.case_id << buf;
  }
}

}  // namespace uaseg
