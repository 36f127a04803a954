#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fehd/data.hpp"
#include "fehd/estimators.hpp"
#include "fehd/inference.hpp"

namespace fehd::present {

enum class Format { Text, Latex, Json };
Format parse_format(std::string_view s);

// Console: *** 0.001 ** 0.01 * 0.05 . 0.1; Aer: *** 0.01 ** 0.05 * 0.1.
enum class Signif { Auto, Console, Aer, None };
Signif parse_signif(std::string_view s);

struct TableSpec {
  std::vector<const est::FitResult*> models;
  std::vector<inf::VcovSpec> vcovs;  // empty: iid; several: one column per model and spec
  inf::Ssc ssc = inf::Ssc::Default;
  std::map<std::string, std::string> dict;
  std::vector<std::string> keep, drop, order;  // regexes, `!` negates
  std::vector<std::string> fitstats;           // empty: family defaults
  Signif signif = Signif::Auto;
  Format format = Format::Text;
  std::optional<std::string> split_var;  // heading of the sample row
  std::string caption, label;            // LaTeX only
};

// One estimate/SE/fit-statistic column of a table.
struct Column {
  const est::FitResult* fit = nullptr;
  inf::VcovMatrix vcov;
  std::vector<inf::CoefRow> coefs;
  std::vector<std::pair<std::string, inf::Stat>> stats;
};

struct TableData {
  std::vector<Column> columns;
  std::vector<std::string> rows;  // raw coefficient names after keep/drop/order
  std::vector<std::string> fe_rows;
};

// Variances are computed here; coefficient values are never altered.
TableData build_table(const TableSpec& spec, const data::Dataset& ds);

// Applies keep, drop then order to raw names.
std::vector<std::string> select_rows(const std::vector<std::string>& names,
                                     const std::vector<std::string>& keep,
                                     const std::vector<std::string>& drop,
                                     const std::vector<std::string>& order);

std::string render_text(const TableSpec& spec, const TableData& t);
std::string render_latex(const TableSpec& spec, const TableData& t);
nlohmann::json render_json(const TableSpec& spec, const TableData& t);
std::string render(const TableSpec& spec, const data::Dataset& ds);

// 4 significant digits, scientific below 1e-4 in absolute value.
std::string format_number(double v);
std::string stars(double p, Signif style);

struct PlotRow {
  std::size_t model = 0;  // 1-based column
  std::string depvar, sample, vcov, coef;
  double estimate = 0.0, se = 0.0, ci_low = 0.0, ci_high = 0.0, level = 0.95;
};

std::vector<PlotRow> plot_data(const TableData& t, double level);
void write_plot_csv(const std::vector<PlotRow>& rows, std::ostream& out);

// Recovered FE coefficients of every fit that kept them.
void write_fixef_csv(const std::vector<const est::FitResult*>& fits, std::ostream& out);

}  // namespace fehd::present
