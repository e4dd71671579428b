/* C interface to the flowtopo library. All functions return a status code;
 * on failure flowtopo_last_error() describes the problem for the calling
 * thread until the next call. */
#ifndef FLOWTOPO_FLOWTOPO_H
#define FLOWTOPO_FLOWTOPO_H

#include <stddef.h>
#include <stdint.h>

#if defined(FLOWTOPO_BUILDING_LIBRARY)
#define FLOWTOPO_API __attribute__((visibility("default")))
#else
#define FLOWTOPO_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum flowtopo_status {
  FLOWTOPO_OK = 0,
  FLOWTOPO_ERR_INVALID_INPUT = 1,
  FLOWTOPO_ERR_NUMERIC = 2,
  FLOWTOPO_ERR_STATE = 3,
  FLOWTOPO_ERR_USAGE = 4,
  FLOWTOPO_ERR_CONFIG = 5,
  FLOWTOPO_ERR_IO = 6,
  FLOWTOPO_ERR_VERSION = 7,
  FLOWTOPO_ERR_PARSE = 8,
  FLOWTOPO_ERR_INTERNAL = 99
} flowtopo_status;

typedef struct flowtopo_model flowtopo_model;

typedef struct flowtopo_train_summary {
  long long steps;
  double final_loss;
  double z_min;
  double z_max;
  double val_nll;
} flowtopo_train_summary;

typedef struct flowtopo_metrics {
  double kld;
  double kld_se;
  double auroc;
  double tpr05;
  double tpr10;
  double tpr20;
} flowtopo_metrics;

FLOWTOPO_API const char* flowtopo_version(void);
FLOWTOPO_API const char* flowtopo_last_error(void);
FLOWTOPO_API const char* flowtopo_status_name(flowtopo_status status);
/* Process exit status for a result: 0 ok, 2 config/usage, 3 numeric, 4 I/O or version. */
FLOWTOPO_API int flowtopo_exit_code(flowtopo_status status);

FLOWTOPO_API flowtopo_status flowtopo_model_load(const char* path, flowtopo_model** out);
FLOWTOPO_API flowtopo_status flowtopo_model_save(const flowtopo_model* model, const char* path);
FLOWTOPO_API void flowtopo_model_free(flowtopo_model* model);
FLOWTOPO_API flowtopo_status flowtopo_model_shape(const flowtopo_model* model, int* dim, int* classes);
/* log p(u | y) for y >= 0, the prior-marginalised log p(u) for y < 0.
 * u is row-major n x dim; out receives n values. */
FLOWTOPO_API flowtopo_status flowtopo_model_logprob(const flowtopo_model* model, const double* u, size_t n, int y,
                                                    double* out);
/* Frozen normalizers of a resampled base. *count receives the number of
 * entries (0 for other bases); at most cap are written. */
FLOWTOPO_API flowtopo_status flowtopo_model_normalizers(const flowtopo_model* model, double* out, size_t cap,
                                                        size_t* count);

/* seed may be NULL to keep the config's seed. summary may be NULL. */
FLOWTOPO_API flowtopo_status flowtopo_train(const char* config_path, const char* out_path, const uint64_t* seed,
                                            flowtopo_train_summary* summary);
FLOWTOPO_API flowtopo_status flowtopo_eval(const char* model_path, const char* config_path, const char* out_csv,
                                           const uint64_t* seed, flowtopo_metrics* metrics);
/* mode: "density" or "acceptance"; cls < 0 renders the marginal density. */
FLOWTOPO_API flowtopo_status flowtopo_render(const char* model_path, const char* mode, int cls, int resolution,
                                             double lo, double hi, const char* out_prefix);
/* jobs <= 0 uses the sweep spec's value. failed_cells may be NULL. Failed
 * cells do not stop the sweep; FLOWTOPO_ERR_NUMERIC is returned at the end
 * if any failed. */
FLOWTOPO_API flowtopo_status flowtopo_sweep(const char* sweep_path, const char* out_dir, int jobs, int* failed_cells);

#ifdef __cplusplus
}
#endif

#endif
