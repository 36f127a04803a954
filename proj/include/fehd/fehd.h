/* C interface of the fehd fixed-effects regression engine.
 *
 * Every call returns a fehd_status. On failure, fehd_last_error() returns the
 * message of the most recent error raised on the calling thread. Strings
 * returned through char** out-parameters are owned by the caller and released
 * with fehd_string_free. Handles are released with their _free function.
 */
#ifndef FEHD_H
#define FEHD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FEHD_API __declspec(dllexport)
#else
#define FEHD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fehd_status {
  FEHD_OK = 0,
  FEHD_ERR_INVALID_ARGUMENT = 1,
  FEHD_ERR_PARSE = 2,
  FEHD_ERR_IO = 3,
  FEHD_ERR_DATA = 4,
  FEHD_ERR_ESTIMATION = 5,
  FEHD_ERR_INTERNAL = 6
} fehd_status;

typedef struct fehd_dataset fehd_dataset;
typedef struct fehd_options fehd_options;
typedef struct fehd_results fehd_results;

FEHD_API const char* fehd_version(void);
FEHD_API const char* fehd_last_error(void);
FEHD_API void fehd_string_free(char* s);

/* Datasets */
FEHD_API fehd_status fehd_dataset_load_csv(const char* path, fehd_dataset** out);
FEHD_API fehd_status fehd_dataset_read_csv_text(const char* text, fehd_dataset** out);
/* Simulated employee-firm panel with columns indiv_id, year, firm_id,
 * firm_id_difficult, x1, x2, y and exp_y; panel set to (indiv_id, year). */
FEHD_API fehd_status fehd_dataset_simulate(size_t n, uint64_t seed, fehd_dataset** out);
FEHD_API fehd_status fehd_dataset_write_csv(const fehd_dataset* ds, const char* path);
FEHD_API fehd_status fehd_dataset_set_panel(fehd_dataset* ds, const char* unit, const char* time);
FEHD_API size_t fehd_dataset_nrows(const fehd_dataset* ds);
FEHD_API size_t fehd_dataset_ncols(const fehd_dataset* ds);
FEHD_API void fehd_dataset_free(fehd_dataset* ds);

/* Formulas: canonical JSON of the parsed formula and its expanded models. */
FEHD_API fehd_status fehd_formula_dump(const char* formula, char** json_out);

/* Options are string key/value pairs. Repeatable keys (vcov) append; the
 * others overwrite. Recognized keys:
 *   family, weights, offset, subset, split, fsplit, vcov, ssc, collin_tol,
 *   demean_tol, demean_maxiter, accelerate, glm_tol, irls_maxiter, threads,
 *   fe_coefs, output, dict, keep, drop, order, fitstat, signif, caption,
 *   label, ci_level, sizes, cases, reps, seed, timeout, parallel_cases */
FEHD_API fehd_status fehd_options_new(fehd_options** out);
FEHD_API fehd_status fehd_options_set(fehd_options* opt, const char* key, const char* value);
/* Parses every stored value; reports the first invalid one. */
FEHD_API fehd_status fehd_options_validate(const fehd_options* opt);
FEHD_API void fehd_options_free(fehd_options* opt);

/* Estimation. The dataset must outlive the results. */
FEHD_API fehd_status fehd_fit(const fehd_dataset* ds, const char* formula, const fehd_options* opt,
                              fehd_results** out);
FEHD_API size_t fehd_results_count(const fehd_results* res);
FEHD_API size_t fehd_results_failed(const fehd_results* res);
/* Error message of entry i, or NULL when it succeeded. */
FEHD_API const char* fehd_results_error(const fehd_results* res, size_t i);
FEHD_API size_t fehd_results_ncoef(const fehd_results* res, size_t i);
FEHD_API const char* fehd_results_coef_name(const fehd_results* res, size_t i, size_t j);
FEHD_API fehd_status fehd_results_coef(const fehd_results* res, size_t i, double* out);
/* Row-major K x K variance of entry i under the first vcov of opt. */
FEHD_API fehd_status fehd_results_vcov(const fehd_results* res, size_t i, const fehd_options* opt,
                                       double* out);
FEHD_API fehd_status fehd_results_render(const fehd_results* res, const fehd_options* opt, char** out);
FEHD_API fehd_status fehd_results_plot_csv(const fehd_results* res, const fehd_options* opt, char** out);
FEHD_API fehd_status fehd_results_fixef_csv(const fehd_results* res, char** out);
FEHD_API void fehd_results_free(fehd_results* res);

/* Benchmarks: CSV of case, n, rep, seconds, iteration counts, status. */
FEHD_API fehd_status fehd_bench_run(const fehd_options* opt, char** csv_out);

#ifdef __cplusplus
}
#endif

#endif /* FEHD_H */
