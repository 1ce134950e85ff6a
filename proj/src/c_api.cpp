#include "qgars/qgars.h"

#include "qgars/config.hpp"
#include "qgars/error.hpp"
#include "qgars/pipeline.hpp"

#include <cstring>
#include <new>
#include <string>

struct qgars_config {
    qgars::ExperimentConfig value;
};

struct qgars_reservoir {
    qgars::ReservoirConfig value;
    int embedding_dim = 0;
};

namespace {

thread_local std::string last_error;

qgars_status to_status(qgars::ErrorCode code) {
    // The core codes were numbered to line up with the C ones.
    return static_cast<qgars_status>(static_cast<int>(code));
}

// Runs `f`, turning exceptions into status codes and the thread's message.
template <typename F>
qgars_status guarded(F&& f) {
    try {
        f();
        return QGARS_OK;
    } catch (const qgars::Error& e) {
        last_error = e.what();
        return to_status(e.code());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return QGARS_ERR_UNKNOWN;
    } catch (const std::exception& e) {
        last_error = e.what();
        return QGARS_ERR_UNKNOWN;
    } catch (...) {
        last_error = "unknown failure";
        return QGARS_ERR_UNKNOWN;
    }
}

qgars_status null_argument(const char* what) {
    last_error = std::string(what) + " must not be NULL";
    return QGARS_ERR_NULL_ARGUMENT;
}

char* copy_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

qgars::LogFn wrap(qgars_log_fn log, void* user_data) {
    if (log == nullptr) return {};
    return [log, user_data](const std::string& line) { log(line.c_str(), user_data); };
}

}  // namespace

extern "C" {

const char* qgars_version(void) { return "0.1.0"; }

const char* qgars_status_string(qgars_status status) {
    switch (status) {
        case QGARS_OK: return "ok";
        case QGARS_ERR_UNKNOWN: return "unknown error";
        case QGARS_ERR_NULL_ARGUMENT: return "null argument";
        default: break;
    }
    if (status >= QGARS_ERR_INVALID_CONFIG && status <= QGARS_ERR_INSUFFICIENT_DATA) {
        return qgars::to_string(static_cast<qgars::ErrorCode>(status));
    }
    return "unrecognised status";
}

const char* qgars_last_error_message(void) { return last_error.c_str(); }

void qgars_string_free(char* s) { delete[] s; }

qgars_status qgars_config_create(const char* profile, qgars_config** out) {
    if (out == nullptr) return null_argument("out");
    *out = nullptr;
    return guarded([&] { *out = new qgars_config{qgars::profile_config(profile ? profile : "desk")}; });
}

qgars_status qgars_config_load(const char* path, qgars_config** out) {
    if (path == nullptr) return null_argument("path");
    if (out == nullptr) return null_argument("out");
    *out = nullptr;
    return guarded([&] { *out = new qgars_config{qgars::load_config(path)}; });
}

qgars_status qgars_config_from_json(const char* json, qgars_config** out) {
    if (json == nullptr) return null_argument("json");
    if (out == nullptr) return null_argument("out");
    *out = nullptr;
    return guarded([&] { *out = new qgars_config{qgars::config_from_json(json)}; });
}

qgars_status qgars_config_set(qgars_config* config, const char* key, const char* json_value) {
    if (config == nullptr) return null_argument("config");
    if (key == nullptr) return null_argument("key");
    if (json_value == nullptr) return null_argument("json_value");
    return guarded([&] { qgars::set_config_value(config->value, key, json_value); });
}

qgars_status qgars_config_validate(const qgars_config* config) {
    if (config == nullptr) return null_argument("config");
    return guarded([&] { config->value.validate(); });
}

qgars_status qgars_config_to_json(const qgars_config* config, char** out_json) {
    if (config == nullptr) return null_argument("config");
    if (out_json == nullptr) return null_argument("out_json");
    return guarded([&] { *out_json = copy_string(qgars::config_to_json(config->value)); });
}

void qgars_config_destroy(qgars_config* config) { delete config; }

qgars_status qgars_run(const qgars_config* config, qgars_log_fn log, void* user_data, char** out_report_json) {
    if (config == nullptr) return null_argument("config");
    return guarded([&] {
        const auto report = qgars::run_experiment(config->value, wrap(log, user_data));
        if (out_report_json) *out_report_json = copy_string(qgars::report_to_json(report));
    });
}

qgars_status qgars_sweep(const qgars_config* config, const char* axis, const double* values, size_t n_values,
                         qgars_log_fn log, void* user_data, char** out_csv) {
    if (config == nullptr) return null_argument("config");
    if (axis == nullptr) return null_argument("axis");
    if (values == nullptr && n_values > 0) return null_argument("values");
    return guarded([&] {
        const auto sweep = qgars::run_sweep(config->value, axis, std::span<const double>(values, n_values), wrap(log, user_data));
        if (out_csv) *out_csv = copy_string(qgars::sweep_to_csv(sweep));
    });
}

qgars_status qgars_gen_data(const qgars_config* config, const char* work_dir, qgars_log_fn log, void* user_data) {
    if (config == nullptr) return null_argument("config");
    if (work_dir == nullptr) return null_argument("work_dir");
    return guarded([&] { qgars::stage_gen_data(config->value, work_dir, wrap(log, user_data)); });
}

qgars_status qgars_train(const qgars_config* config, const char* work_dir, qgars_log_fn log, void* user_data) {
    if (config == nullptr) return null_argument("config");
    if (work_dir == nullptr) return null_argument("work_dir");
    return guarded([&] { qgars::stage_train(config->value, work_dir, wrap(log, user_data)); });
}

qgars_status qgars_embed(const qgars_config* config, const char* work_dir, qgars_log_fn log, void* user_data) {
    if (config == nullptr) return null_argument("config");
    if (work_dir == nullptr) return null_argument("work_dir");
    return guarded([&] { qgars::stage_embed(config->value, work_dir, wrap(log, user_data)); });
}

qgars_status qgars_classify(const qgars_config* config, const char* work_dir, qgars_log_fn log, void* user_data,
                            char** out_report_json) {
    if (config == nullptr) return null_argument("config");
    if (work_dir == nullptr) return null_argument("work_dir");
    return guarded([&] {
        const auto report = qgars::stage_classify(config->value, work_dir, wrap(log, user_data));
        if (out_report_json) *out_report_json = copy_string(qgars::report_to_json(report));
    });
}

qgars_status qgars_export(const qgars_config* config, const char* work_dir, const char* split, char** out_path) {
    if (config == nullptr) return null_argument("config");
    if (work_dir == nullptr) return null_argument("work_dir");
    if (split == nullptr) return null_argument("split");
    return guarded([&] {
        const auto path = qgars::export_embeddings(config->value, work_dir, split);
        if (out_path) *out_path = copy_string(path.string());
    });
}

qgars_status qgars_reservoir_create(const qgars_config* config, qgars_reservoir** out) {
    if (config == nullptr) return null_argument("config");
    if (out == nullptr) return null_argument("out");
    *out = nullptr;
    return guarded([&] {
        config->value.reservoir.validate();
        *out = new qgars_reservoir{config->value.reservoir, qgars::embedding_dimension(config->value.reservoir)};
    });
}

qgars_status qgars_reservoir_dims(const qgars_reservoir* reservoir, size_t* n_atoms, size_t* embedding_dim) {
    if (reservoir == nullptr) return null_argument("reservoir");
    if (n_atoms) *n_atoms = static_cast<size_t>(reservoir->value.n_atoms);
    if (embedding_dim) *embedding_dim = static_cast<size_t>(reservoir->embedding_dim);
    return QGARS_OK;
}

qgars_status qgars_reservoir_embed(const qgars_reservoir* reservoir, const double* latents, size_t n_rows, size_t n_cols,
                                   double* out, size_t out_len, int parallelism) {
    if (reservoir == nullptr) return null_argument("reservoir");
    if (n_rows > 0 && latents == nullptr) return null_argument("latents");
    if (n_rows > 0 && out == nullptr) return null_argument("out");
    return guarded([&] {
        if (n_cols != static_cast<size_t>(reservoir->value.n_atoms)) {
            qgars::fail(qgars::ErrorCode::shape, "latents have " + std::to_string(n_cols) + " columns, reservoir has " +
                                                     std::to_string(reservoir->value.n_atoms) + " atoms");
        }
        const size_t need = n_rows * static_cast<size_t>(reservoir->embedding_dim);
        if (out_len < need) {
            qgars::fail(qgars::ErrorCode::shape, "output buffer holds " + std::to_string(out_len) + " values, need " +
                                                     std::to_string(need));
        }
        if (n_rows == 0) return;
        const Eigen::Map<const qgars::Matrix> in(latents, static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(n_cols));
        const qgars::Matrix q = qgars::embed_batch(in, reservoir->value, parallelism < 1 ? 1 : parallelism);
        std::memcpy(out, q.data(), need * sizeof(double));
    });
}

void qgars_reservoir_destroy(qgars_reservoir* reservoir) { delete reservoir; }

}  // extern "C"
