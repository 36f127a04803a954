#include <doctest.h>

#include <cstring>
#include <string>

#include "fehd/fehd.h"

namespace {

const char* kCsv =
    "y,x,g\n1.0,0.5,a\n2.1,1.0,a\n2.9,1.6,b\n4.2,2.0,b\n5.1,2.4,c\n5.8,3.1,c\n7.2,3.3,a\n8.1,4.0,b\n";

std::string take(char* s) {
  std::string out = s ? s : "";
  fehd_string_free(s);
  return out;
}

}  // namespace

TEST_CASE("c api: load, fit, render") {
  fehd_dataset* ds = nullptr;
  REQUIRE(fehd_dataset_read_csv_text(kCsv, &ds) == FEHD_OK);
  CHECK(fehd_dataset_nrows(ds) == 8);
  CHECK(fehd_dataset_ncols(ds) == 3);
  fehd_options* opt = nullptr;
  REQUIRE(fehd_options_new(&opt) == FEHD_OK);
  CHECK(fehd_options_set(opt, "vcov", "hc1") == FEHD_OK);
  CHECK(fehd_options_set(opt, "output", "json") == FEHD_OK);
  CHECK(fehd_options_validate(opt) == FEHD_OK);

  fehd_results* res = nullptr;
  REQUIRE(fehd_fit(ds, "y ~ x | g", opt, &res) == FEHD_OK);
  CHECK(fehd_results_count(res) == 1);
  CHECK(fehd_results_failed(res) == 0);
  CHECK(fehd_results_error(res, 0) == nullptr);
  REQUIRE(fehd_results_ncoef(res, 0) == 1);
  CHECK(std::strcmp(fehd_results_coef_name(res, 0, 0), "x") == 0);
  double b = 0.0, v = 0.0;
  CHECK(fehd_results_coef(res, 0, &b) == FEHD_OK);
  CHECK(b > 0.0);
  CHECK(fehd_results_vcov(res, 0, opt, &v) == FEHD_OK);
  CHECK(v > 0.0);
  char* out = nullptr;
  CHECK(fehd_results_render(res, opt, &out) == FEHD_OK);
  CHECK(take(out).find("\"models\"") != std::string::npos);
  CHECK(fehd_results_plot_csv(res, opt, &out) == FEHD_OK);
  CHECK(take(out).rfind("model,", 0) == 0);
  fehd_results_free(res);
  fehd_options_free(opt);
  fehd_dataset_free(ds);
}

TEST_CASE("c api: error codes and messages") {
  fehd_dataset* ds = nullptr;
  REQUIRE(fehd_dataset_read_csv_text(kCsv, &ds) == FEHD_OK);
  fehd_options* opt = nullptr;
  REQUIRE(fehd_options_new(&opt) == FEHD_OK);
  fehd_results* res = nullptr;

  CHECK(fehd_fit(ds, "y ~ x +", opt, &res) == FEHD_ERR_PARSE);
  CHECK(res == nullptr);
  CHECK(std::string(fehd_last_error()).find("offset") != std::string::npos);

  CHECK(fehd_fit(ds, "y ~ missing_col", opt, &res) == FEHD_ERR_DATA);
  CHECK(std::string(fehd_last_error()).find("missing_col") != std::string::npos);

  CHECK(fehd_options_set(opt, "no_such_key", "1") == FEHD_ERR_INVALID_ARGUMENT);
  CHECK(fehd_options_set(opt, "demean_tol", "-1") == FEHD_OK);
  CHECK(fehd_options_validate(opt) == FEHD_ERR_INVALID_ARGUMENT);
  fehd_options_free(opt);

  fehd_dataset* none = nullptr;
  CHECK(fehd_dataset_load_csv("/nonexistent/x.csv", &none) == FEHD_ERR_IO);
  CHECK(fehd_dataset_read_csv_text(nullptr, &none) == FEHD_ERR_INVALID_ARGUMENT);
  CHECK(fehd_fit(nullptr, "y ~ x", nullptr, &res) == FEHD_ERR_INVALID_ARGUMENT);

  char* json = nullptr;
  CHECK(fehd_formula_dump("y ~ sw(a, b)", &json) == FEHD_OK);
  CHECK(take(json).find("\"models\"") != std::string::npos);
  fehd_dataset_free(ds);
}

TEST_CASE("c api: simulate and bench") {
  fehd_dataset* ds = nullptr;
  REQUIRE(fehd_dataset_simulate(1000, 42, &ds) == FEHD_OK);
  CHECK(fehd_dataset_nrows(ds) == 1000);
  fehd_dataset_free(ds);

  fehd_options* opt = nullptr;
  REQUIRE(fehd_options_new(&opt) == FEHD_OK);
  CHECK(fehd_options_set(opt, "sizes", "1000,2000") == FEHD_OK);
  CHECK(fehd_options_set(opt, "cases", "simple2fe,difficult2fe") == FEHD_OK);
  CHECK(fehd_options_set(opt, "reps", "1") == FEHD_OK);
  CHECK(fehd_options_set(opt, "parallel_cases", "true") == FEHD_OK);
  char* csv = nullptr;
  REQUIRE(fehd_bench_run(opt, &csv) == FEHD_OK);
  const auto text = take(csv);
  CHECK(text.rfind("case,n,rep,seconds", 0) == 0);
  CHECK(text.find("difficult2fe,2000,1,") != std::string::npos);
  CHECK(fehd_options_set(opt, "sizes", "2000,1000") == FEHD_OK);
  CHECK(fehd_bench_run(opt, &csv) == FEHD_ERR_INVALID_ARGUMENT);
  fehd_options_free(opt);
}
