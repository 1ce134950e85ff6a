#ifndef QGARS_QGARS_H
#define QGARS_QGARS_H

/* C interface to the qgars pipeline. Every call returns a qgars_status;
 * on failure qgars_last_error_message() describes it for the calling
 * thread until that thread's next failing call. Strings handed out by the
 * library are released with qgars_string_free. */

#include <stddef.h>

#if defined(_WIN32)
#  if defined(QGARS_BUILDING_LIBRARY)
#    define QGARS_API __declspec(dllexport)
#  else
#    define QGARS_API __declspec(dllimport)
#  endif
#else
#  define QGARS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qgars_status {
    QGARS_OK = 0,
    QGARS_ERR_UNKNOWN = 1,
    QGARS_ERR_INVALID_CONFIG = 2,
    QGARS_ERR_INVALID_INPUT = 3,
    QGARS_ERR_SHAPE = 4,
    QGARS_ERR_NUMERICAL = 5,
    QGARS_ERR_IO = 6,
    QGARS_ERR_FORMAT = 7,
    QGARS_ERR_TRAINING = 8,
    QGARS_ERR_STATE = 9,
    QGARS_ERR_INSUFFICIENT_DATA = 10,
    QGARS_ERR_NULL_ARGUMENT = 11
} qgars_status;

typedef struct qgars_config qgars_config;
typedef struct qgars_reservoir qgars_reservoir;

/* Progress lines from long-running calls. May be NULL. */
typedef void (*qgars_log_fn)(const char* message, void* user_data);

QGARS_API const char* qgars_version(void);
QGARS_API const char* qgars_status_string(qgars_status status);
QGARS_API const char* qgars_last_error_message(void);
QGARS_API void qgars_string_free(char* s);

/* ---- configuration ---- */

/* profile: "desk" or "paper". */
QGARS_API qgars_status qgars_config_create(const char* profile, qgars_config** out);
QGARS_API qgars_status qgars_config_load(const char* path, qgars_config** out);
QGARS_API qgars_status qgars_config_from_json(const char* json, qgars_config** out);
/* Dotted key such as "guided.lambda"; value is a JSON literal. */
QGARS_API qgars_status qgars_config_set(qgars_config* config, const char* key, const char* json_value);
QGARS_API qgars_status qgars_config_validate(const qgars_config* config);
QGARS_API qgars_status qgars_config_to_json(const qgars_config* config, char** out_json);
QGARS_API void qgars_config_destroy(qgars_config* config);

/* ---- pipeline ---- */

/* Full multi-seed experiment; out_report_json may be NULL. */
QGARS_API qgars_status qgars_run(const qgars_config* config, qgars_log_fn log, void* user_data,
                                 char** out_report_json);
/* axis: "lambda", "update_frequency" or "n_qubits". out_csv may be NULL. */
QGARS_API qgars_status qgars_sweep(const qgars_config* config, const char* axis, const double* values,
                                   size_t n_values, qgars_log_fn log, void* user_data, char** out_csv);

/* Single-seed stages over a work directory. */
QGARS_API qgars_status qgars_gen_data(const qgars_config* config, const char* work_dir, qgars_log_fn log,
                                      void* user_data);
QGARS_API qgars_status qgars_train(const qgars_config* config, const char* work_dir, qgars_log_fn log,
                                   void* user_data);
QGARS_API qgars_status qgars_embed(const qgars_config* config, const char* work_dir, qgars_log_fn log,
                                   void* user_data);
QGARS_API qgars_status qgars_classify(const qgars_config* config, const char* work_dir, qgars_log_fn log,
                                      void* user_data, char** out_report_json);
/* split: "train" or "test". out_path may be NULL. */
QGARS_API qgars_status qgars_export(const qgars_config* config, const char* work_dir, const char* split,
                                    char** out_path);

/* ---- reservoir ---- */

/* Snapshot of the configuration's reservoir section. */
QGARS_API qgars_status qgars_reservoir_create(const qgars_config* config, qgars_reservoir** out);
QGARS_API qgars_status qgars_reservoir_dims(const qgars_reservoir* reservoir, size_t* n_atoms,
                                            size_t* embedding_dim);
/* latents: n_rows x n_atoms row-major; out: n_rows x embedding_dim
 * row-major with out_len >= n_rows * embedding_dim. */
QGARS_API qgars_status qgars_reservoir_embed(const qgars_reservoir* reservoir, const double* latents,
                                             size_t n_rows, size_t n_cols, double* out, size_t out_len,
                                             int parallelism);
QGARS_API void qgars_reservoir_destroy(qgars_reservoir* reservoir);

#ifdef __cplusplus
}
#endif

#endif
