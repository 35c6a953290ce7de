#pragma once

#include <string>
#include <utility>
#include <vector>

#include "immunize/error.hpp"
#include "immunize/spectral.hpp"

namespace immunize {

struct ColumnStats {
  double mean = 0.0;
  double std = 1.0;
};

struct Dataset {
  Matrix X;  // N x D_in
  Matrix Y;  // N x D_out
  std::vector<std::string> feature_names;
  std::vector<ColumnStats> normalization;  // per feature column; empty if not normalized
  std::vector<std::string> warnings;
  std::string provenance;

  Index rows() const { return X.rows(); }
  Index dim() const { return X.cols(); }

  void validate() const {
    if (X.rows() == 0 || X.cols() == 0) throw error(errc::empty_split, "dataset has no rows or no features");
    if (Y.rows() != X.rows()) throw error(errc::dimension_mismatch, "X and Y row counts differ");
    if (!X.allFinite() || !Y.allFinite()) throw error(errc::numerical_failure, "dataset has non-finite entries");
  }
};

}  // namespace immunize
