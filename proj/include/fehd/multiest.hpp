#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fehd/data.hpp"
#include "fehd/error.hpp"
#include "fehd/estimators.hpp"
#include "fehd/formula.hpp"

namespace fehd::multi {

struct MultiOptions {
  est::FitOptions fit;
  std::optional<std::string> split;  // one estimation per level
  bool fsplit = false;               // plus the full sample, first
  bool pool = true;                  // share demeaning between OLS models
};

struct Entry {
  formula::ModelSpec model;  // provenance carries the sample label
  std::optional<est::FitResult> fit;
  std::string error;  // set when the fit failed
  ErrorKind error_kind = ErrorKind::Estimation;
};

// One batched demeaning shared by several models.
struct PoolBatch {
  std::vector<std::size_t> entries;  // indices into MultiResult::entries
  std::vector<std::string> columns;
  std::size_t iterations = 0;
};

struct MultiResult {
  std::vector<Entry> entries;  // lhs, rhs step, fe step, then sample
  std::vector<PoolBatch> batches;
  std::size_t n_failed() const;
};

inline constexpr const char* kFullSampleLabel = "Full sample";

// Fits every expanded model on every sample. Failures are recorded per entry;
// an error is thrown only when all of them fail.
MultiResult run_multi(const formula::FormulaSpec& spec, const data::Dataset& ds,
                      const MultiOptions& opt);

}  // namespace fehd::multi
