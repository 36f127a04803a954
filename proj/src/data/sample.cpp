#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "fehd/data.hpp"
#include "fehd/error.hpp"

namespace fehd::data {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
    return s.substr(1, s.size() - 2);
  return s;
}

template <class T>
bool compare(Subset::Op op, const T& a, const T& b) {
  switch (op) {
    case Subset::Op::Eq: return a == b;
    case Subset::Op::Ne: return a != b;
    case Subset::Op::Lt: return a < b;
    case Subset::Op::Le: return a <= b;
    case Subset::Op::Gt: return a > b;
    case Subset::Op::Ge: return a >= b;
  }
  return false;
}

// Integer code of a factor value: categorical code or exact integer value.
struct FactorCoder {
  const Column& col;
  std::string name;
  std::unordered_map<double, std::int64_t> numeric_codes;

  std::int64_t code(std::size_t row) {
    if (const auto* c = std::get_if<CategoricalColumn>(&col)) {
      if (c->codes[row] < 0) throw data_error("missing value in factor '" + name + "'");
      return c->codes[row];
    }
    const auto& n = std::get<NumericColumn>(col);
    if (n.missing[row]) throw data_error("missing value in factor '" + name + "'");
    const double v = n.values[row];
    if (v != std::nearbyint(v))
      throw data_error("variable '" + name + "' is numeric with non-integer values and cannot be used as a factor");
    auto [it, fresh] =
        numeric_codes.emplace(v, static_cast<std::int64_t>(numeric_codes.size()));
    return it->second;
  }
};

// Codes of `rows` in [0, range). Integer-valued numeric columns with a compact
// span are offset by their minimum; wider spans fall back to hashing.
std::int64_t code_rows(const Column& col, const std::string& name, std::span<const std::size_t> rows,
                       std::vector<std::int64_t>& codes) {
  const std::size_t n = rows.size();
  codes.resize(n);
  if (const auto* c = std::get_if<CategoricalColumn>(&col)) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = c->codes[rows[i]];
      if (k < 0) throw data_error("missing value in factor '" + name + "'");
      codes[i] = k;
    }
    return static_cast<std::int64_t>(std::max<std::size_t>(c->levels.size(), 1));
  }
  const auto& num = std::get<NumericColumn>(col);
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rows[i];
    if (num.missing[r]) throw data_error("missing value in factor '" + name + "'");
    const double v = num.values[r];
    if (v != std::nearbyint(v))
      throw data_error("variable '" + name + "' is numeric with non-integer values and cannot be used as a factor");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (n == 0) return 1;
  if (hi - lo <= 4.0 * static_cast<double>(n) + 1024.0) {
    for (std::size_t i = 0; i < n; ++i) codes[i] = static_cast<std::int64_t>(num.values[rows[i]] - lo);
    return static_cast<std::int64_t>(hi - lo) + 1;
  }
  FactorCoder coder{col, name, {}};
  for (std::size_t i = 0; i < n; ++i) codes[i] = coder.code(rows[i]);
  return static_cast<std::int64_t>(coder.numeric_codes.size());
}

// Replaces each current[i] by the first-appearance id of the pair
// (current[i], codes[i]); current ids lie in [0, n) on entry. Returns the count.
std::int64_t relabel(std::vector<std::int64_t>& current, const std::vector<std::int64_t>& codes,
                     std::int64_t range) {
  const std::size_t n = current.size();
  std::int64_t count = 0;
  std::int64_t width = 0;
  for (std::size_t i = 0; i < n; ++i) width = std::max(width, current[i] + 1);
  if (width > 0 && range <= (static_cast<std::int64_t>(4 * n) + 4096) / width) {
    std::vector<std::int64_t> ids(static_cast<std::size_t>(width * range), -1);
    for (std::size_t i = 0; i < n; ++i) {
      auto& id = ids[static_cast<std::size_t>(current[i] * range + codes[i])];
      if (id < 0) id = count++;
      current[i] = id;
    }
    return count;
  }
  std::unordered_map<std::int64_t, std::int64_t> ids;
  ids.reserve(n / 4 + 16);
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = ids.emplace(current[i] * range + codes[i], count);
    if (fresh) ++count;
    current[i] = it->second;
  }
  return count;
}

}  // namespace

Subset parse_subset(std::string_view text) {
  static const std::pair<const char*, Subset::Op> ops[] = {
      {"==", Subset::Op::Eq}, {"!=", Subset::Op::Ne}, {"<=", Subset::Op::Le},
      {">=", Subset::Op::Ge}, {"<", Subset::Op::Lt},  {">", Subset::Op::Gt}};
  for (const auto& [tok, op] : ops) {
    const auto at = text.find(tok);
    if (at == std::string_view::npos) continue;
    Subset s;
    s.column = trim(text.substr(0, at));
    s.op = op;
    s.value = unquote(trim(text.substr(at + std::char_traits<char>::length(tok))));
    if (s.column.empty()) break;
    return s;
  }
  throw invalid_argument("invalid subset expression '" + std::string(text) +
                         "' (expected col==value, col!=value, col<value, ...)");
}

bool subset_keeps(const Subset& s, const Column& col, std::size_t row) {
  if (is_missing(col, row)) return false;
  if (const auto* n = std::get_if<NumericColumn>(&col)) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.value.data(), s.value.data() + s.value.size(), v);
    if (ec != std::errc() || p != s.value.data() + s.value.size())
      throw invalid_argument("subset value '" + s.value + "' is not a number but column '" +
                             s.column + "' is numeric");
    return compare(s.op, n->values[row], v);
  }
  return compare(s.op, cell_label(col, row), s.value);
}

std::size_t SampleMask::n_used() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

std::vector<std::size_t> SampleMask::used_rows() const {
  std::vector<std::size_t> out;
  out.reserve(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r)
    if (keep[r]) out.push_back(r);
  return out;
}

std::vector<std::string> split_levels(const Dataset& ds, std::string_view column,
                                      const std::optional<Subset>& subset) {
  const Column& col = ds.column(column);
  const Column* filter = subset ? &ds.column(subset->column) : nullptr;
  auto kept = [&](std::size_t r) { return !filter || subset_keeps(*subset, *filter, r); };
  if (const auto* n = std::get_if<NumericColumn>(&col)) {
    std::set<double> vals;
    for (std::size_t r = 0; r < n->values.size(); ++r)
      if (!n->missing[r] && kept(r)) vals.insert(n->values[r]);
    std::vector<std::string> out;
    for (double v : vals) out.push_back(number_label(v));
    return out;
  }
  const auto& c = std::get<CategoricalColumn>(col);
  std::vector<std::uint8_t> used(c.levels.size(), 0);
  for (std::size_t r = 0; r < c.codes.size(); ++r)
    if (c.codes[r] >= 0 && kept(r)) used[static_cast<std::size_t>(c.codes[r])] = 1;
  std::vector<std::string> out;
  for (std::size_t k = 0; k < c.levels.size(); ++k)
    if (used[k]) out.push_back(c.levels[k]);
  std::sort(out.begin(), out.end());
  return out;
}

FactorIndex make_factor_index(const Dataset& ds, const SampleMask& mask,
                              std::span<const std::string> factors) {
  if (factors.empty()) throw invalid_argument("fixed effect with no factor");
  FactorIndex idx;
  for (std::size_t j = 0; j < factors.size(); ++j) idx.name += (j ? "^" : "") + factors[j];
  const auto rows = mask.used_rows();
  const std::size_t n = rows.size();
  idx.group_of_row.resize(n);

  // Combine factors pairwise into first-appearance group ids.
  std::vector<std::int64_t> current(n, 0);
  std::int64_t n_current = 1;
  std::vector<std::int64_t> codes;
  for (const auto& f : factors) {
    const std::int64_t range = code_rows(ds.column(f), f, rows, codes);
    n_current = relabel(current, codes, range);
  }
  idx.n_groups = static_cast<std::uint32_t>(n == 0 ? 0 : n_current);
  idx.group_sizes.assign(idx.n_groups, 0);
  idx.first_row.assign(idx.n_groups, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = static_cast<std::uint32_t>(current[i]);
    idx.group_of_row[i] = g;
    if (idx.group_sizes[g]++ == 0) idx.first_row[g] = i;
  }
  return idx;
}

std::string group_label(const Dataset& ds, std::span<const std::size_t> used_rows,
                        const FactorIndex& idx, std::span<const std::string> factors,
                        std::uint32_t g) {
  const std::size_t row = used_rows[idx.first_row.at(g)];
  std::string out;
  for (std::size_t j = 0; j < factors.size(); ++j)
    out += (j ? "_" : "") + cell_label(ds.column(factors[j]), row);
  return out;
}

std::vector<std::uint32_t> group_codes(const Column& col, std::span<const std::size_t> rows,
                                       std::uint32_t* n_groups) {
  std::vector<std::int64_t> codes;
  const std::int64_t range = code_rows(col, "cluster", rows, codes);
  std::vector<std::int64_t> ids(rows.size(), 0);
  const std::int64_t count = relabel(ids, codes, range);
  std::vector<std::uint32_t> out(ids.begin(), ids.end());
  if (n_groups) *n_groups = static_cast<std::uint32_t>(count);
  return out;
}

// ---------------------------------------------------------------------------
// Panel shifts

NumericColumn shift_column(const Dataset& ds, const NumericColumn& values, ShiftOp op, int offset,
                           std::span<const std::uint8_t> eligible) {
  if (!ds.panel())
    throw invalid_argument("lags, leads and differences require panel identifiers (--panel unit,time)");
  const auto& unit_col = ds.column(ds.panel()->unit);
  const auto& time_col = ds.column(ds.panel()->time);
  const auto* time = std::get_if<NumericColumn>(&time_col);
  if (!time) throw data_error("panel time variable '" + ds.panel()->time + "' must be numeric");
  const std::size_t n = ds.n_rows();
  if (values.values.size() != n) throw invalid_argument("shifted column has the wrong length");

  auto ok = [&](std::size_t r) {
    return (eligible.empty() || eligible[r]) && !is_missing(unit_col, r) && !time->missing[r];
  };
  FactorCoder units{unit_col, ds.panel()->unit, {}};
  std::vector<std::int64_t> unit(n, -1);
  std::vector<std::int64_t> t(n, 0);
  std::unordered_map<std::uint64_t, std::size_t> at;
  at.reserve(n);
  auto key = [](std::int64_t u, std::int64_t tt) {
    return (static_cast<std::uint64_t>(u) << 32) ^ static_cast<std::uint32_t>(tt);
  };
  for (std::size_t r = 0; r < n; ++r) {
    if (!ok(r)) continue;
    unit[r] = units.code(r);
    const double tv = time->values[r];
    if (tv != std::nearbyint(tv))
      throw data_error("panel time variable '" + ds.panel()->time + "' must be integer-valued");
    t[r] = static_cast<std::int64_t>(tv);
    if (!at.emplace(key(unit[r], t[r]), r).second)
      throw data_error("duplicate (unit, time) pair in panel: unit '" + cell_label(unit_col, r) +
                       "', time " + number_label(tv));
  }

  const int lag = op == ShiftOp::Lead ? -offset : offset;
  NumericColumn out{std::vector<double>(n, 0.0), std::vector<std::uint8_t>(n, 1)};
  for (std::size_t r = 0; r < n; ++r) {
    if (!ok(r)) continue;
    auto it = at.find(key(unit[r], t[r] - lag));
    if (it == at.end() || values.missing[it->second]) continue;
    if (op == ShiftOp::Diff) {
      if (values.missing[r]) continue;
      out.values[r] = values.values[r] - values.values[it->second];
    } else {
      out.values[r] = values.values[it->second];
    }
    out.missing[r] = 0;
  }
  return out;
}

std::vector<NumericColumn> panel_shift(const Dataset& ds, const SampleMask& mask,
                                       std::string_view var, ShiftOp op,
                                       std::span<const int> offsets) {
  const NumericColumn& src = ds.numeric(var);
  std::vector<NumericColumn> out;
  for (int k : offsets) out.push_back(shift_column(ds, src, op, k, mask.keep));
  return out;
}

}  // namespace fehd::data
