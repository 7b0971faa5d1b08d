#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uaseg {

enum class ErrorCode {
  shape_mismatch,
  non_finite,
  invalid_argument,
  unbound_leaf,
  non_binary,
  pgm_variant,
  pgm_header,
  pgm_truncated,
  io,
  dataset_missing,
  checkpoint,
  box_out_of_bounds,
  config,
  divergence,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type. The code is stable and
// machine-parsable; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace uaseg
