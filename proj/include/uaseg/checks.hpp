#pragma once

// Seeded finite-difference gradcheck suite over the losses, the uncertainty
// combiner, and the full training objective.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace uaseg {

struct SuiteResult {
  std::string name;      // "dice", "combine", "objective", ...
  std::size_t instance = 0;
  std::size_t size = 0;  // square side of the instance
  std::size_t redraws = 0;  // instances redrawn for sitting near a relu/clamp kink
  double rel_error = 0.0;      // worst tensor-level relative error
  double max_rel_error = 0.0;  // worst element
  bool pass = false;
};

// `instances` random cases per target, sides drawn from [8, 16]. The model
// objective is included only when `with_model` is set.
std::vector<SuiteResult> gradcheck_suite(std::uint64_t seed, std::size_t instances, bool with_model);

}  // namespace uaseg
