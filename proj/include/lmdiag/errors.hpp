#pragma once

#include <stdexcept>
#include <string>

namespace lmdiag {

// Every failure mode the library reports deliberately carries one of these
// codes, so callers can branch on the condition instead of parsing messages.
enum class errc {
  malformed_record,
  dangling_reference,
  schema_mismatch,
  empty_side,
  insufficient_tier,
  mixed_horizon,
  horizon_too_short,
  undefined_feature,
  no_successes,
  no_failures,
  degenerate_denominator,
  degenerate_labels,
  degenerate_direction,
  degenerate_matrix,
  empty_stratum,
  zero_variance,
  missing_tokenizer_map,
  unknown_variant,
  invalid_spec,
  invalid_config,
  io_error,
};

const char* errc_name(errc c);

class error : public std::runtime_error {
public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const { return code_; }

private:
  errc code_;
};

}  // namespace lmdiag
