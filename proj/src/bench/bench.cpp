#include "fehd/bench.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "fehd/error.hpp"
#include "fehd/formula.hpp"

namespace fehd::bench {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

enum Stream : std::uint32_t { kFirmSimple = 0, kUnitFe, kYearFe, kFirmFe, kX1, kEps };

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> x, std::array<std::uint32_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kW0;
      k[1] += kW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, x[0], hi0, lo0);
    mulhilo(kM1, x[2], hi1, lo1);
    x = {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
  }
  return x;
}

std::array<std::uint32_t, 4> Philox::block(std::uint32_t stream, std::uint64_t j) const {
  return philox4x32({static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(j >> 32), stream, 0u},
                    {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
}

namespace {

double to_unit(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(a >> 5) << 26) | (b >> 6);
  return (static_cast<double>(bits) + 0.5) / 9007199254740992.0;
}

}  // namespace

double Philox::uniform(std::uint32_t stream, std::uint64_t j) const {
  const auto b = block(stream, j);
  return to_unit(b[0], b[1]);
}

double Philox::normal(std::uint32_t stream, std::uint64_t j) const {
  const auto b = block(stream, j);
  const double u1 = to_unit(b[0], b[1]);
  const double u2 = to_unit(b[2], b[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::size_t round_half_even(double v) { return static_cast<std::size_t>(std::nearbyint(v)); }

std::vector<double> rep_length(std::size_t k, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(i % k + 1);
  return out;
}

data::Dataset simulate_panel(const DgpConfig& cfg) {
  if (cfg.nb_year == 0 || cfg.nb_indiv_per_firm == 0) throw invalid_argument("DGP sizes must be positive");
  if (cfg.n < cfg.nb_year)
    throw invalid_argument("DGP needs n >= " + std::to_string(cfg.nb_year) + " observations");
  const std::size_t nb_indiv = std::max<std::size_t>(1, round_half_even(static_cast<double>(cfg.n) / static_cast<double>(cfg.nb_year)));
  const std::size_t nb_firm =
      std::max<std::size_t>(1, round_half_even(static_cast<double>(nb_indiv) / static_cast<double>(cfg.nb_indiv_per_firm)));
  const std::size_t n = nb_indiv * cfg.nb_year;
  const Philox rng(cfg.seed);

  std::vector<double> unit_fe(nb_indiv), year_fe(cfg.nb_year), firm_fe(nb_firm);
  for (std::size_t i = 0; i < nb_indiv; ++i) unit_fe[i] = rng.normal(kUnitFe, i);
  for (std::size_t t = 0; t < cfg.nb_year; ++t) year_fe[t] = rng.normal(kYearFe, t);
  for (std::size_t f = 0; f < nb_firm; ++f) firm_fe[f] = rng.normal(kFirmFe, f);

  std::vector<double> indiv(n), year(n), firm(n), x1(n), x2(n), y(n);
  const auto firm_difficult = rep_length(nb_firm, n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = r / cfg.nb_year;
    const std::size_t t = r % cfg.nb_year;
    const auto f = std::min(nb_firm - 1, static_cast<std::size_t>(rng.uniform(kFirmSimple, r) * static_cast<double>(nb_firm)));
    indiv[r] = static_cast<double>(i + 1);
    year[r] = static_cast<double>(t + 1);
    firm[r] = static_cast<double>(f + 1);
    x1[r] = rng.normal(kX1, r);
    x2[r] = x1[r] * x1[r];
    y[r] = x1[r] + 0.05 * x2[r] + firm_fe[f] + unit_fe[i] + year_fe[t] + rng.normal(kEps, r);
  }
  data::Dataset ds;
  auto add = [&](const char* name, std::vector<double> v) {
    data::NumericColumn c;
    c.missing.assign(v.size(), 0);
    c.values = std::move(v);
    ds.add_column(name, std::move(c));
  };
  add("indiv_id", std::move(indiv));
  add("year", std::move(year));
  add("firm_id", std::move(firm));
  add("firm_id_difficult", firm_difficult);
  add("x1", std::move(x1));
  add("x2", std::move(x2));
  std::vector<double> ey(n);
  for (std::size_t r = 0; r < n; ++r) ey[r] = std::exp(y[r]);
  add("y", std::move(y));
  add("exp_y", std::move(ey));
  ds.set_panel("indiv_id", "year");
  return ds;
}

std::string BenchCase::name() const {
  std::string s = assignment == Assignment::Simple ? "simple" : "difficult";
  s += std::to_string(n_fe) + "fe";
  if (family != est::Family::Ols) s += "-" + est::family_name(family);
  return s;
}

BenchCase parse_case(std::string_view name) {
  BenchCase c;
  std::string_view s = name;
  const auto dash = s.find('-');
  if (dash != std::string_view::npos) {
    c.family = est::parse_family(s.substr(dash + 1));
    if (c.family != est::Family::Ols && c.family != est::Family::Poisson)
      throw invalid_argument("benchmark cases use ols or poisson, got '" + std::string(name) + "'");
    s = s.substr(0, dash);
  }
  if (s.rfind("simple", 0) == 0) {
    c.assignment = Assignment::Simple;
    s.remove_prefix(6);
  } else if (s.rfind("difficult", 0) == 0) {
    c.assignment = Assignment::Difficult;
    s.remove_prefix(9);
  } else {
    throw invalid_argument("unknown benchmark case '" + std::string(name) +
                           "' (expected simple2fe, simple3fe, difficult2fe or difficult3fe, optionally -poisson)");
  }
  if (s == "2fe")
    c.n_fe = 2;
  else if (s == "3fe")
    c.n_fe = 3;
  else
    throw invalid_argument("unknown benchmark case '" + std::string(name) + "': expected 2fe or 3fe");
  return c;
}

std::string case_formula(const BenchCase& c) {
  std::string f = c.family == est::Family::Poisson ? "exp_y" : "y";
  f += " ~ x1 + x2 | indiv_id + ";
  f += c.assignment == Assignment::Simple ? "firm_id" : "firm_id_difficult";
  if (c.n_fe == 3) f += " + year";
  return f;
}

BenchRow run_case(const data::Dataset& ds, const BenchCase& c, const BenchOptions& opt) {
  BenchRow row;
  row.case_name = c.name();
  row.n = ds.n_rows();
  const auto models = formula::expand_models(formula::parse_formula(case_formula(c)));
  est::FitOptions fo;
  fo.family = c.family;
  fo.demean.threads = opt.threads;
  fo.demean.accelerate = opt.accelerate;
  fo.only_coef = true;
  const auto start = std::chrono::steady_clock::now();
  if (opt.timeout_seconds)
    fo.demean.deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                     std::chrono::duration<double>(*opt.timeout_seconds));
  try {
    const auto fit = est::fit(ds, models.front(), fo);
    row.demean_iterations = fit.demean_iterations;
    row.demean_sweeps = fit.demean_sweeps;
    const bool late = fo.demean.deadline && std::chrono::steady_clock::now() > *fo.demean.deadline;
    row.status = fit.converged ? "ok" : (late ? "timeout" : "not-converged");
  } catch (const std::exception& e) {
    const bool late = fo.demean.deadline && std::chrono::steady_clock::now() > *fo.demean.deadline;
    row.status = late ? "timeout" : std::string("error: ") + e.what();
  }
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

std::vector<BenchRow> run_benchmark(const BenchOptions& opt) {
  if (!std::is_sorted(opt.sizes.begin(), opt.sizes.end()))
    throw invalid_argument("benchmark sizes must be sorted ascending");
  std::vector<BenchRow> rows;
  for (const auto n : opt.sizes)
    for (std::size_t rep = 0; rep < opt.reps; ++rep) {
      DgpConfig cfg;
      cfg.n = n;
      cfg.seed = opt.seed + rep;
      const auto ds = simulate_panel(cfg);
      std::vector<BenchRow> batch(opt.cases.size());
      if (opt.parallel_cases) {
        std::vector<std::thread> workers;
        for (std::size_t c = 0; c < opt.cases.size(); ++c)
          workers.emplace_back([&, c] { batch[c] = run_case(ds, opt.cases[c], opt); });
        for (auto& w : workers) w.join();
      } else {
        for (std::size_t c = 0; c < opt.cases.size(); ++c) batch[c] = run_case(ds, opt.cases[c], opt);
      }
      for (auto& row : batch) {
        row.n = n;
        row.rep = rep + 1;
        rows.push_back(std::move(row));
      }
    }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << "case,n,rep,seconds,demean_iterations,demean_sweeps,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    if (status.find_first_of(",\"\n") != std::string::npos) {
      std::string q = "\"";
      for (char ch : status) {
        if (ch == '"') q += '"';
        q += ch;
      }
      status = q + "\"";
    }
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.6f", r.seconds);
    out << r.case_name << ',' << r.n << ',' << r.rep << ',' << secs << ',' << r.demean_iterations << ','
        << r.demean_sweeps << ',' << status << '\n';
  }
}

}  // namespace fehd::bench
