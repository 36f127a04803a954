#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace fehd::data {

struct NumericColumn {
  std::vector<double> values;
  std::vector<std::uint8_t> missing;  // 1 = missing
};

// Level-coded column. Code -1 marks a missing entry.
struct CategoricalColumn {
  std::vector<std::int32_t> codes;
  std::vector<std::string> levels;
};

using Column = std::variant<NumericColumn, CategoricalColumn>;

std::size_t column_size(const Column& col);
bool is_missing(const Column& col, std::size_t row);
bool is_numeric(const Column& col);

// Display label of a numeric level: integers print without decimals.
std::string number_label(double v);

// Row label of a column entry ("" when missing).
std::string cell_label(const Column& col, std::size_t row);

struct PanelIds {
  std::string unit;
  std::string time;
};

// Column store. Built once, then shared read-only.
class Dataset {
 public:
  Dataset() = default;

  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_cols() const noexcept { return columns_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

  bool has(std::string_view name) const;
  const Column* find(std::string_view name) const;
  // Throws a data error naming the variable when absent.
  const Column& column(std::string_view name) const;
  const NumericColumn& numeric(std::string_view name) const;

  void add_column(std::string name, Column col);

  void set_panel(std::string unit, std::string time);
  const std::optional<PanelIds>& panel() const noexcept { return panel_; }

 private:
  std::size_t n_rows_ = 0;
  std::vector<std::string> names_;
  std::vector<Column> columns_;
  std::unordered_map<std::string, std::size_t> index_;
  std::optional<PanelIds> panel_;
};

// RFC-4180 subset: comma separated, optional double quotes, header row required.
// Columns whose non-empty fields all parse as numbers become numeric; others
// categorical. Empty fields and "NA" are missing.
Dataset read_csv(std::istream& in);
Dataset load_csv(const std::filesystem::path& path);
void write_csv(const Dataset& ds, std::ostream& out);

// ---------------------------------------------------------------------------
// Sample selection

struct Subset {
  enum class Op { Eq, Ne, Lt, Le, Gt, Ge };
  std::string column;
  Op op = Op::Eq;
  std::string value;
};

// Parses "col==value", "col!=value", "col<3", ... .
Subset parse_subset(std::string_view text);
bool subset_keeps(const Subset& s, const Column& col, std::size_t row);

struct SplitLevel {
  std::string column;
  std::string level;  // display label of the level
};

struct SampleMask {
  std::vector<std::uint8_t> keep;
  std::map<std::string, std::size_t> reason_counts;

  std::size_t n_used() const;
  std::vector<std::size_t> used_rows() const;
  bool operator==(const SampleMask&) const = default;
};

// Sorted levels of a split variable (numeric ascending, else lexicographic)
// observed on rows kept by `subset` (all rows when absent).
std::vector<std::string> split_levels(const Dataset& ds, std::string_view column,
                                      const std::optional<Subset>& subset = std::nullopt);

// ---------------------------------------------------------------------------
// Fixed-effect factors

struct FactorIndex {
  std::string name;                     // e.g. "Origin^Product"
  std::vector<std::uint32_t> group_of_row;  // length n_used
  std::uint32_t n_groups = 0;
  std::vector<std::size_t> group_sizes;
  std::vector<std::size_t> first_row;   // first used-row position of each group
};

// Groups are numbered in order of first appearance among kept rows. Several
// factors are combined into the observed tuples only.
FactorIndex make_factor_index(const Dataset& ds, const SampleMask& mask,
                              std::span<const std::string> factors);

// Display label of group `g`, e.g. "FR_12" for a combined factor.
// `used_rows` is SampleMask::used_rows() of the mask the index was built on.
std::string group_label(const Dataset& ds, std::span<const std::size_t> used_rows,
                        const FactorIndex& idx, std::span<const std::string> factors,
                        std::uint32_t g);

// Groups rows by an arbitrary (categorical or integer) column restricted to
// used rows. Used for clustering.
std::vector<std::uint32_t> group_codes(const Column& col, std::span<const std::size_t> rows,
                                       std::uint32_t* n_groups);

// ---------------------------------------------------------------------------
// Panel shifts

enum class ShiftOp { Lag, Lead, Diff };

// Shifts `values` within panel units using time arithmetic: lag k at time t
// reads time t-k of the same unit. Rows whose `eligible` flag is 0 neither
// provide nor receive values. Missing where no matching row exists.
NumericColumn shift_column(const Dataset& ds, const NumericColumn& values, ShiftOp op, int offset,
                           std::span<const std::uint8_t> eligible = {});

std::vector<NumericColumn> panel_shift(const Dataset& ds, const SampleMask& mask,
                                       std::string_view var, ShiftOp op,
                                       std::span<const int> offsets);

}  // namespace fehd::data
