#pragma once

// Shared helpers for the unit tests: seeded random grids and masks.

#include <cstdint>

#include "uaseg/grid.hpp"
#include "uaseg/metrics.hpp"
#include "uaseg/rng.hpp"

namespace uaseg::test {

inline Grid random_grid(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Grid g(std::move(shape));
  for (double& v : g.data()) v = rng.uniform(lo, hi);
  return g;
}

inline BinaryMask random_mask(Shape shape, SplitMix64& rng, double p = 0.5) {
  BinaryMask m(std::move(shape));
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < p);
  return m;
}

// Solid axis-aligned block [r0, r1) x [c0, c1) in an h x w mask.
inline BinaryMask block(std::size_t h, std::size_t w, std::size_t r0, std::size_t c0, std::size_t r1,
                        std::size_t c1) {
  BinaryMask m(Shape{h, w});
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) m.set(r * w + c, true);
  return m;
}

}  // namespace uaseg::test
