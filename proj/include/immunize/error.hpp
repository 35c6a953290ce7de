#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace immunize {

/// Failure categories shared by every module.
enum class errc {
  empty_matrix,
  zero_matrix,
  numerical_failure,
  dimension_mismatch,
  singular_system,
  non_unique_extreme,
  degenerate_spectrum,
  rank_one,
  invalid_labels,
  non_finite_update,
  degenerate_reference,
  empty_input,
  missing_column,
  empty_file,
  empty_split,
  bad_magic,
  label_image_count_mismatch,
  digit_absent,
  invalid_spec,
  io_failure,
  invalid_config,
};

constexpr std::string_view to_string(errc code) noexcept {
  switch (code) {
    case errc::empty_matrix: return "EmptyMatrix";
    case errc::zero_matrix: return "ZeroMatrix";
    case errc::numerical_failure: return "NumericalFailure";
    case errc::dimension_mismatch: return "DimensionMismatch";
    case errc::singular_system: return "SingularSystem";
    case errc::non_unique_extreme: return "NonUniqueExtreme";
    case errc::degenerate_spectrum: return "DegenerateSpectrum";
    case errc::rank_one: return "RankOne";
    case errc::invalid_labels: return "InvalidLabels";
    case errc::non_finite_update: return "NonFiniteUpdate";
    case errc::degenerate_reference: return "DegenerateReference";
    case errc::empty_input: return "EmptyInput";
    case errc::missing_column: return "MissingColumn";
    case errc::empty_file: return "EmptyFile";
    case errc::empty_split: return "EmptySplit";
    case errc::bad_magic: return "BadMagic";
    case errc::label_image_count_mismatch: return "LabelImageCountMismatch";
    case errc::digit_absent: return "DigitAbsent";
    case errc::invalid_spec: return "InvalidSpec";
    case errc::io_failure: return "IoFailure";
    case errc::invalid_config: return "InvalidConfig";
  }
  return "Unknown";
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

}  // namespace immunize
