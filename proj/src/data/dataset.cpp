#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "fehd/data.hpp"
#include "fehd/error.hpp"

namespace fehd::data {

std::size_t column_size(const Column& col) {
  return std::visit(
      [](const auto& c) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(c)>, NumericColumn>)
          return c.values.size();
        else
          return c.codes.size();
      },
      col);
}

bool is_missing(const Column& col, std::size_t row) {
  if (const auto* n = std::get_if<NumericColumn>(&col)) return n->missing[row] != 0;
  return std::get<CategoricalColumn>(col).codes[row] < 0;
}

bool is_numeric(const Column& col) { return std::holds_alternative<NumericColumn>(col); }

std::string number_label(double v) {
  if (std::isfinite(v) && v == std::nearbyint(v) && std::fabs(v) < 1e15) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<long long>(v));
    return std::string(buf, p);
  }
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string cell_label(const Column& col, std::size_t row) {
  if (const auto* n = std::get_if<NumericColumn>(&col))
    return n->missing[row] ? std::string() : number_label(n->values[row]);
  const auto& c = std::get<CategoricalColumn>(col);
  return c.codes[row] < 0 ? std::string() : c.levels[static_cast<std::size_t>(c.codes[row])];
}

bool Dataset::has(std::string_view name) const { return find(name) != nullptr; }

const Column* Dataset::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  return it == index_.end() ? nullptr : &columns_[it->second];
}

const Column& Dataset::column(std::string_view name) const {
  const Column* c = find(name);
  if (!c) throw data_error("variable '" + std::string(name) + "' not found in the data");
  return *c;
}

const NumericColumn& Dataset::numeric(std::string_view name) const {
  const auto* n = std::get_if<NumericColumn>(&column(name));
  if (!n) throw data_error("variable '" + std::string(name) + "' is not numeric");
  return *n;
}

void Dataset::add_column(std::string name, Column col) {
  if (index_.count(name)) throw data_error("duplicate column name '" + name + "'");
  const std::size_t n = column_size(col);
  if (columns_.empty()) {
    n_rows_ = n;
  } else if (n != n_rows_) {
    throw data_error("column '" + name + "' has " + std::to_string(n) + " rows, expected " +
                     std::to_string(n_rows_));
  }
  index_.emplace(name, columns_.size());
  names_.push_back(std::move(name));
  columns_.push_back(std::move(col));
}

void Dataset::set_panel(std::string unit, std::string time) {
  column(unit);
  column(time);
  panel_ = PanelIds{std::move(unit), std::move(time)};
}

// ---------------------------------------------------------------------------
// CSV

namespace {

// Reads one record; returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++line;
      fields.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (in_quotes) throw data_error("unterminated quoted field near line " + std::to_string(line));
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

bool is_na(const std::string& s) { return s.empty() || s == "NA"; }

bool parse_double(const std::string& s, double& v) {
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && e[-1] == ' ') --e;
  if (b < e && *b == '+') ++b;
  if (b == e) return false;
  auto [p, ec] = std::from_chars(b, e, v);
  return ec == std::errc() && p == e && std::isfinite(v);
}

bool blank_record(const std::vector<std::string>& f) { return f.size() == 1 && f[0].empty(); }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

Dataset read_csv(std::istream& in) {
  std::vector<std::string> header;
  std::size_t line = 1;
  if (!read_record(in, header, line) || blank_record(header))
    throw data_error("CSV input has no header row");
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
  for (std::size_t i = 0; i < header.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (header[i] == header[j]) throw data_error("duplicate column name '" + header[i] + "'");

  const std::size_t k = header.size();
  std::vector<std::vector<std::string>> cells(k);
  std::vector<std::string> rec;
  while (true) {
    const std::size_t rec_line = line + 1;
    if (!read_record(in, rec, line)) break;
    if (blank_record(rec)) continue;
    if (rec.size() != k)
      throw data_error("ragged CSV row at line " + std::to_string(rec_line) + ": expected " +
                       std::to_string(k) + " fields, found " + std::to_string(rec.size()));
    for (std::size_t j = 0; j < k; ++j) cells[j].push_back(std::move(rec[j]));
  }
  if (cells.empty() || cells[0].empty()) throw data_error("CSV input has zero data rows");

  Dataset ds;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& col = cells[j];
    const std::size_t n = col.size();
    NumericColumn num{std::vector<double>(n, 0.0), std::vector<std::uint8_t>(n, 0)};
    bool numeric = true;
    for (std::size_t r = 0; r < n && numeric; ++r) {
      if (is_na(col[r])) {
        num.missing[r] = 1;
        continue;
      }
      numeric = parse_double(col[r], num.values[r]);
    }
    if (numeric) {
      ds.add_column(header[j], std::move(num));
      continue;
    }
    CategoricalColumn cat;
    cat.codes.resize(n);
    std::unordered_map<std::string, std::int32_t> seen;
    for (std::size_t r = 0; r < n; ++r) {
      if (is_na(col[r])) {
        cat.codes[r] = -1;
        continue;
      }
      auto [it, fresh] = seen.emplace(col[r], static_cast<std::int32_t>(cat.levels.size()));
      if (fresh) cat.levels.push_back(col[r]);
      cat.codes[r] = it->second;
    }
    ds.add_column(header[j], std::move(cat));
  }
  return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open data file '" + path.string() + "'");
  return read_csv(in);
}

void write_csv(const Dataset& ds, std::ostream& out) {
  const auto& names = ds.names();
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << csv_escape(names[j]);
  out << '\n';
  std::vector<const Column*> cols;
  for (const auto& n : names) cols.push_back(&ds.column(n));
  char buf[64];
  for (std::size_t r = 0; r < ds.n_rows(); ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (j) out << ',';
      if (const auto* num = std::get_if<NumericColumn>(cols[j])) {
        if (num->missing[r]) continue;
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, num->values[r]);
        out.write(buf, p - buf);
      } else {
        out << csv_escape(cell_label(*cols[j], r));
      }
    }
    out << '\n';
  }
}

}  // namespace fehd::data
