#pragma once

#include <stdexcept>
#include <string>

namespace modest {

// Error codes cover every failure named by a public operation. Tests match
// on the code; the message carries the offending location (byte offset, row
// index, epoch/batch).
enum class Errc {
  bad_magic,
  version_unsupported,
  truncated_file,
  non_finite_value,
  io_failure,
  zero_row,
  count_mismatch,
  quality_length_mismatch,
  bad_label,
  non_positive_temperature,
  alpha_out_of_range,
  epoch_out_of_range,
  size_mismatch,
  negative_sigma,
  batch_too_small,
  invalid_argument,
  dim_mismatch,
  shape_mismatch,
  cache_mismatch,
  step_out_of_range,
  dataset_smaller_than_batch,
  non_finite_loss,
  config_hash_mismatch,
  spec_invalid,
  missing_labels,
  index_out_of_range,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace modest
