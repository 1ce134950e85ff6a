#include "qgars/pipeline.hpp"

#include "qgars/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <fstream>
#include <thread>

namespace qgars {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Runs fn(0), ..., fn(n-1) on up to `workers` threads. After a failure no
// new indices start; the lowest failing index's error is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    auto work = [&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Re-raises core errors with the pipeline stage and seed attached.
template <typename F>
auto in_stage(const char* stage, std::uint64_t seed, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        fail(e.code(), std::string("stage ") + stage + " (seed " + std::to_string(seed) + "): " + e.what());
    } catch (const std::exception& e) {
        fail(ErrorCode::state, std::string("stage ") + stage + " (seed " + std::to_string(seed) + "): " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

std::string method_title(Method m) {
    switch (m) {
        case Method::pca: return "PCA";
        case Method::ae: return "AE";
        case Method::qgars: return "QGARS";
    }
    return "?";
}

std::string result_label(Method m, bool qrc, ClassifierKind k) {
    std::string s = method_title(m);
    if (qrc) return s + " + QRC" + (k == ClassifierKind::mlp ? " + NN" : "");
    return s + (k == ClassifierKind::mlp ? " + NN" : " + Linear");
}

AutoencoderArch arch_for(const ExperimentConfig& c, int input_dim) {
    AutoencoderArch a = c.autoencoder;
    a.input_dim = input_dim;
    a.latent_dim = c.n_features;
    return a;
}

TrainConfig training_for(const ExperimentConfig& c, std::uint64_t seed) {
    TrainConfig t = c.training;
    t.seed = seed;
    return t;
}

std::uint64_t split_seed(std::uint64_t seed) { return derive_seed(seed, 10); }

// ---------------------------------------------------------------- reduction

struct ReductionModel {
    Method method = Method::pca;
    PCAModel pca;
    Autoencoder ae;
    std::optional<nn::Network> surrogate;
    std::vector<EpochLoss> trace;
    std::vector<ReservoirQuery> queries;
};

ReductionModel fit_reduction(const ExperimentConfig& c, const Dataset& train, std::uint64_t seed) {
    ReductionModel m;
    m.method = c.method;
    const int d = static_cast<int>(train.images.cols());
    switch (c.method) {
        case Method::pca:
            m.pca = pca_fit(train.images, c.n_features);
            break;
        case Method::ae: {
            auto r = ae_train(train.images, arch_for(c, d), training_for(c, seed));
            m.ae = std::move(r.model);
            m.trace = std::move(r.trace);
            break;
        }
        case Method::qgars: {
            auto s = qgars_train(train.images, train.labels, c.reservoir, arch_for(c, d), training_for(c, seed), c.guided, {},
                                 c.parallelism);
            m.ae = std::move(s.autoencoder);
            m.surrogate = std::move(s.surrogate);
            m.trace = std::move(s.trace);
            m.queries = std::move(s.queries);
            break;
        }
    }
    return m;
}

Matrix reduce(const ReductionModel& m, const Matrix& images) {
    return m.method == Method::pca ? pca_transform(m.pca, images) : encode(m.ae.encoder, images);
}

void save_model(const ReductionModel& m, const fs::path& dir) {
    if (m.method == Method::pca) {
        save_pca(dir / "pca.bin", m.pca);
        return;
    }
    nn::save_network(dir / "encoder.qgnn", m.ae.encoder);
    nn::save_network(dir / "decoder.qgnn", m.ae.decoder);
    if (m.surrogate) nn::save_network(dir / "surrogate.qgnn", *m.surrogate);
}

ReductionModel load_model(const ExperimentConfig& c, const fs::path& dir) {
    ReductionModel m;
    m.method = c.method;
    const fs::path file = dir / (c.method == Method::pca ? "pca.bin" : "encoder.qgnn");
    if (!fs::exists(file)) fail(ErrorCode::io, "missing model checkpoint " + file.string() + "; run the train stage first");
    if (c.method == Method::pca) {
        m.pca = load_pca(file);
        if (m.pca.components.rows() != c.n_features) fail(ErrorCode::format, file.string() + " does not match n_features");
    } else {
        m.ae.encoder = nn::load_network(file);
        if (m.ae.encoder.output_dim() != c.n_features) fail(ErrorCode::format, file.string() + " does not match n_features");
    }
    return m;
}

void write_trace(const fs::path& path, const std::vector<EpochLoss>& trace) {
    std::string out = "epoch,L_R,L_C,L_sur,total\n";
    for (const auto& e : trace) {
        out += std::to_string(e.epoch) + "," + format_double(e.reconstruction) + "," + format_double(e.classification) + "," +
               format_double(e.surrogate) + "," + format_double(e.total) + "\n";
    }
    write_text(path, out);
}

void write_queries(const fs::path& path, const std::vector<ReservoirQuery>& queries) {
    std::string out;
    for (const auto& q : queries) {
        out += ordered_json{{"epoch", q.epoch},
                            {"batch_size", q.batch_size},
                            {"wall_seconds", q.wall_seconds},
                            {"surrogate_mse", q.surrogate_mse}}
                   .dump() +
               "\n";
    }
    write_text(path, out);
}

void write_model_artifacts(const ReductionModel& m, const fs::path& dir) {
    save_model(m, dir);
    if (m.method != Method::pca) write_trace(dir / "loss_trace.csv", m.trace);
    if (m.method == Method::qgars) write_queries(dir / "reservoir_queries.jsonl", m.queries);
}

Matrix representation(const ExperimentConfig& c, const Matrix& features) {
    return c.qrc ? embed_batch(features, c.reservoir, c.parallelism) : features;
}

std::vector<std::string> column_names(const ExperimentConfig& c) {
    if (c.qrc) return embedding_labels(c.reservoir);
    std::vector<std::string> names;
    for (int i = 0; i < c.n_features; ++i) names.push_back("f" + std::to_string(i));
    return names;
}

// ---------------------------------------------------------------- classification

struct SeedScores {
    std::vector<double> test;
    std::vector<double> train;
    std::vector<std::size_t> parameters;
};

SeedScores classify_all(const ExperimentConfig& c, const Matrix& x_train, std::span<const int> y_train, const Matrix& x_test,
                        std::span<const int> y_test, std::uint64_t seed) {
    SeedScores s;
    for (std::size_t k = 0; k < c.classifiers.size(); ++k) {
        ClassifierConfig cc = c.classifier;
        cc.kind = c.classifiers[k];
        cc.seed = derive_seed(seed, 20 + k);
        const auto clf = train_classifier(x_train, y_train, cc);
        s.test.push_back(evaluate(clf, x_test, y_test));
        s.train.push_back(evaluate(clf, x_train, y_train));
        s.parameters.push_back(nn::parameter_count(clf.network));
    }
    return s;
}

ExperimentReport make_report(const ExperimentConfig& c, int feature_dim) {
    ExperimentReport r;
    r.method = to_string(c.method);
    r.qrc = c.qrc;
    r.dataset = to_string(c.dataset.kind);
    r.n_train = c.dataset.n_train;
    r.n_test = c.dataset.n_test;
    r.feature_dim = feature_dim;
    r.embedding_dim = c.qrc ? embedding_dimension(c.reservoir) : 0;
    r.reservoir_refreshes_per_seed = c.method == Method::qgars ? refresh_count(c.training.epochs, c.guided.update_frequency) : 0;
    for (auto k : c.classifiers) {
        ClassifierResult cr;
        cr.kind = k;
        cr.label = result_label(c.method, c.qrc, k);
        r.results.push_back(cr);
    }
    return r;
}

void add_seed(ExperimentReport& r, std::uint64_t seed, const SeedScores& s, long long queries) {
    r.seeds.push_back(seed);
    r.reservoir_queries_per_seed.push_back(queries);
    r.reservoir_query_count += queries;
    for (std::size_t k = 0; k < r.results.size(); ++k) {
        r.results[k].accuracies.push_back(s.test[k]);
        r.results[k].train_accuracies.push_back(s.train[k]);
        r.results[k].parameter_count = s.parameters[k];
    }
}

void finalize(ExperimentReport& r) {
    for (auto& cr : r.results) {
        if (cr.accuracies.size() >= 2) {
            const auto agg = aggregate_seeds(cr.accuracies);
            cr.mean = agg.mean;
            cr.std = agg.std;
            cr.max = agg.max;
        } else {
            cr.mean = cr.max = cr.accuracies.front();
            cr.std.reset();
        }
    }
}

std::vector<EvalReport> table_rows(const ExperimentReport& r) {
    std::vector<EvalReport> rows;
    for (const auto& cr : r.results) {
        EvalReport e;
        e.method = cr.label;
        e.n_train = static_cast<int>(r.n_train);
        e.n_test = static_cast<int>(r.n_test);
        e.accuracies = cr.accuracies;
        e.mean = cr.mean;
        e.std = cr.std.value_or(0.0);
        e.max = cr.max;
        rows.push_back(e);
    }
    return rows;
}

Dataset read_split(const fs::path& work, const std::string& split) {
    const fs::path stem = work / split;
    if (!fs::exists(stem.string() + ".bin")) fail(ErrorCode::io, "missing " + stem.string() + ".bin; run gen-data first");
    auto ds = load_dataset(stem);
    if (ds.size() == 0) fail(ErrorCode::insufficient_data, "split '" + split + "' is empty");
    return ds;
}

void check_split_name(const std::string& split) {
    if (split != "train" && split != "test") fail(ErrorCode::invalid_input, "split must be train or test, got '" + split + "'");
}

}  // namespace

// ---------------------------------------------------------------- public

std::string report_to_json(const ExperimentReport& r) {
    ordered_json results = ordered_json::array();
    for (const auto& cr : r.results) {
        results.push_back(ordered_json{
            {"label", cr.label},
            {"classifier", to_string(cr.kind)},
            {"parameter_count", cr.parameter_count},
            {"accuracies", cr.accuracies},
            {"train_accuracies", cr.train_accuracies},
            {"mean", cr.mean},
            {"std", cr.std ? ordered_json(*cr.std) : ordered_json(nullptr)},
            {"max", cr.max},
        });
    }
    const ordered_json j{
        {"schema_version", 1},
        {"method", r.method},
        {"qrc", r.qrc},
        {"dataset", r.dataset},
        {"n_train", r.n_train},
        {"n_test", r.n_test},
        {"feature_dim", r.feature_dim},
        {"embedding_dim", r.embedding_dim},
        {"seeds", r.seeds},
        {"results", results},
        {"reservoir_refreshes_per_seed", r.reservoir_refreshes_per_seed},
        {"reservoir_query_count", r.reservoir_query_count},
        {"reservoir_queries_per_seed", r.reservoir_queries_per_seed},
    };
    return j.dump(2) + "\n";
}

Dataset load_configured_dataset(const ExperimentConfig& c) {
    Dataset ds;
    switch (c.dataset.kind) {
        case DatasetKind::synthetic:
            ds = generate_synthetic_polyps(static_cast<int>(c.dataset.n_train + c.dataset.n_test), c.dataset.seed, c.dataset.polyp);
            break;
        case DatasetKind::mnist:
            ds = load_mnist_idx(c.dataset.mnist_images, c.dataset.mnist_labels);
            break;
        case DatasetKind::patches:
            ds = load_image_patches(c.dataset.patch_dir, c.dataset.patch_manifest, c.dataset.patch_size);
            break;
    }
    ds.validate();
    return ds;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const LogFn& log) {
    config.validate();
    const auto t_start = Clock::now();
    const fs::path out = config.output_dir;
    fs::create_directories(out);
    write_text(out / "resolved_config.json", config_to_json(config));
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };

    const Dataset data = in_stage("load-data", config.seeds.front(), [&] { return load_configured_dataset(config); });
    say("loaded " + std::to_string(data.size()) + " samples (" + data.provenance + ")");

    ExperimentReport report = make_report(config, config.n_features);
    struct SeedOutcome {
        SeedScores scores;
        long long queries = 0;
        ordered_json telemetry;
    };
    std::vector<SeedOutcome> outcomes(config.seeds.size());
    std::mutex log_mutex;
    auto say_locked = [&](const std::string& s) {
        const std::lock_guard lock(log_mutex);
        say(s);
    };

    parallel_for(config.seeds.size(), config.workers, [&](std::size_t i) {
        const auto seed = config.seeds[i];
        const fs::path seed_dir = out / ("seed_" + std::to_string(seed));
        fs::create_directories(seed_dir);

        const auto [train, test] = in_stage("split", seed, [&] {
            return split_train_test(data, config.dataset.n_train, config.dataset.n_test, split_seed(seed));
        });
        auto t0 = Clock::now();
        const auto model = in_stage("reduce", seed, [&] { return fit_reduction(config, train, seed); });
        const double reduce_s = seconds_since(t0);
        in_stage("write-model", seed, [&] { write_model_artifacts(model, seed_dir); });

        t0 = Clock::now();
        const Matrix x_train = in_stage("embed", seed, [&] { return representation(config, reduce(model, train.images)); });
        const Matrix x_test = in_stage("embed", seed, [&] { return representation(config, reduce(model, test.images)); });
        const double embed_s = seconds_since(t0);
        if (config.qrc && config.outputs.save_embeddings) {
            in_stage("write-embeddings", seed, [&] {
                write_matrix_binary(seed_dir / "embeddings_train.bin", x_train);
                write_matrix_binary(seed_dir / "embeddings_test.bin", x_test);
                if (config.outputs.embeddings_csv) {
                    const auto names = column_names(config);
                    write_matrix_csv(seed_dir / "embeddings_train.csv", x_train, names, train.labels);
                    write_matrix_csv(seed_dir / "embeddings_test.csv", x_test, names, test.labels);
                }
            });
        }

        t0 = Clock::now();
        auto& o = outcomes[i];
        o.scores =
            in_stage("classify", seed, [&] { return classify_all(config, x_train, train.labels, x_test, test.labels, seed); });
        const double classify_s = seconds_since(t0);

        ordered_json query_log = ordered_json::array();
        for (const auto& q : model.queries) {
            o.queries += q.batch_size;
            query_log.push_back({{"epoch", q.epoch}, {"batch_size", q.batch_size}, {"wall_seconds", q.wall_seconds}});
        }
        o.telemetry = {{"seed", seed},
                       {"reduce_seconds", reduce_s},
                       {"embed_seconds", embed_s},
                       {"classify_seconds", classify_s},
                       {"reservoir_queries", query_log}};
        std::string line = "seed " + std::to_string(seed) + ":";
        for (std::size_t k = 0; k < o.scores.test.size(); ++k) {
            line += " " + report.results[k].label + " " + format_double(o.scores.test[k]) + "%";
        }
        say_locked(line);
    });

    // Assembled in seed order so the report does not depend on scheduling.
    ordered_json telemetry_seeds = ordered_json::array();
    for (std::size_t i = 0; i < config.seeds.size(); ++i) {
        add_seed(report, config.seeds[i], outcomes[i].scores, outcomes[i].queries);
        telemetry_seeds.push_back(std::move(outcomes[i].telemetry));
    }
    finalize(report);

    write_text(out / "report.json", report_to_json(report));
    const auto rows = table_rows(report);
    write_text(out / "table.csv", render_table_csv(rows));
    write_text(out / "table.txt", render_table_text(rows));
    write_text(out / "telemetry.json",
               ordered_json{{"total_seconds", seconds_since(t_start)}, {"seeds", telemetry_seeds}}.dump(2) + "\n");
    return report;
}

SweepResult run_sweep(const ExperimentConfig& base, const std::string& axis, std::span<const double> values,
                      const LogFn& log) {
    if (axis != "lambda" && axis != "update_frequency" && axis != "n_qubits") {
        fail(ErrorCode::invalid_config, "unknown sweep axis '" + axis + "' (expected lambda, update_frequency or n_qubits)");
    }
    if (values.empty()) fail(ErrorCode::invalid_config, "sweep needs at least one value");
    SweepResult sweep;
    sweep.axis = axis;
    sweep.cells.resize(values.size());
    std::mutex log_mutex;
    const LogFn cell_log = [&](const std::string& line) {
        if (!log) return;
        const std::lock_guard lock(log_mutex);
        log(line);
    };
    // Cells fan out instead of seeds; nesting both would oversubscribe.
    parallel_for(values.size(), base.workers, [&](std::size_t i) {
        const double v = values[i];
        SweepCell& cell = sweep.cells[i];
        cell.value = v;
        ExperimentConfig c = base;
        c.workers = 1;
        c.output_dir = (fs::path(base.output_dir) / (axis + "_" + format_double(v))).string();
        try {
            if (axis == "lambda") {
                c.guided.lambda = v;
            } else {
                if (v != std::floor(v)) fail(ErrorCode::invalid_config, axis + " values must be integers");
                if (axis == "update_frequency") {
                    c.guided.update_frequency = static_cast<int>(v);
                } else {
                    c.reservoir.n_atoms = static_cast<int>(v);
                    c.n_features = static_cast<int>(v);
                    c.autoencoder.latent_dim = c.n_features;
                }
            }
            cell_log(axis + " = " + format_double(v));
            cell.report = run_experiment(c, cell_log);
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.error = e.what();
            cell_log(axis + " = " + format_double(v) + " failed: " + cell.error);
        }
    });
    fs::create_directories(base.output_dir);
    write_text(fs::path(base.output_dir) / "sweep.csv", sweep_to_csv(sweep));
    return sweep;
}

std::string sweep_to_csv(const SweepResult& sweep) {
    auto quote = [](const std::string& s) {
        std::string q = "\"";
        for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
        return q + "\"";
    };
    std::string out = sweep.axis + ",classifier,mean,std,max,status\n";
    for (const auto& cell : sweep.cells) {
        if (!cell.ok) {
            out += format_double(cell.value) + ",,,,," + quote("error: " + cell.error) + "\n";
            continue;
        }
        for (const auto& r : cell.report->results) {
            out += format_double(cell.value) + "," + quote(r.label) + "," + format_double(r.mean) + "," +
                   (r.std ? format_double(*r.std) : std::string()) + "," + format_double(r.max) + ",ok\n";
        }
    }
    return out;
}

void stage_gen_data(const ExperimentConfig& config, const fs::path& work, const LogFn& log) {
    config.validate();
    const auto seed = config.seeds.front();
    const Dataset data = in_stage("gen-data", seed, [&] { return load_configured_dataset(config); });
    const auto [train, test] = in_stage("gen-data", seed, [&] {
        return split_train_test(data, config.dataset.n_train, config.dataset.n_test, split_seed(seed));
    });
    fs::create_directories(work);
    save_dataset(work / "train", train);
    save_dataset(work / "test", test);
    write_text(work / "resolved_config.json", config_to_json(config));
    if (log) log("wrote " + std::to_string(train.size()) + " train / " + std::to_string(test.size()) + " test samples");
}

void stage_train(const ExperimentConfig& config, const fs::path& work, const LogFn& log) {
    config.validate();
    const auto seed = config.seeds.front();
    const Dataset train = read_split(work, "train");
    const auto model = in_stage("train", seed, [&] { return fit_reduction(config, train, seed); });
    write_model_artifacts(model, work);
    if (log) log(std::string("trained ") + to_string(config.method) + " model");
}

void stage_embed(const ExperimentConfig& config, const fs::path& work, const LogFn& log) {
    config.validate();
    const auto seed = config.seeds.front();
    const auto model = load_model(config, work);
    for (const std::string split : {"train", "test"}) {
        const Dataset ds = read_split(work, split);
        const Matrix features = in_stage("embed", seed, [&] { return reduce(model, ds.images); });
        write_matrix_binary(work / ("features_" + split + ".bin"), features);
        if (config.qrc) {
            const Matrix q = in_stage("embed", seed, [&] { return embed_batch(features, config.reservoir, config.parallelism); });
            write_matrix_binary(work / ("embeddings_" + split + ".bin"), q);
        }
    }
    if (log) log("wrote representations for train and test");
}

ExperimentReport stage_classify(const ExperimentConfig& config, const fs::path& work, const LogFn& log) {
    config.validate();
    const auto seed = config.seeds.front();
    const std::string prefix = config.qrc ? "embeddings_" : "features_";
    auto load = [&](const std::string& split) {
        const fs::path p = work / (prefix + split + ".bin");
        if (!fs::exists(p)) fail(ErrorCode::io, "missing " + p.string() + "; run the embed stage first");
        return read_matrix_binary(p);
    };
    const Dataset train = read_split(work, "train");
    const Dataset test = read_split(work, "test");
    const Matrix x_train = load("train");
    const Matrix x_test = load("test");
    if (x_train.rows() != static_cast<Eigen::Index>(train.size()) || x_test.rows() != static_cast<Eigen::Index>(test.size())) {
        fail(ErrorCode::shape, "representations in " + work.string() + " do not match the stored splits");
    }
    const auto scores = in_stage("classify", seed, [&] { return classify_all(config, x_train, train.labels, x_test, test.labels, seed); });
    ExperimentReport report = make_report(config, config.n_features);
    report.n_train = train.size();
    report.n_test = test.size();
    long long queries = 0;
    if (config.method == Method::qgars && fs::exists(work / "reservoir_queries.jsonl")) {
        std::ifstream in(work / "reservoir_queries.jsonl");
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) queries += ordered_json::parse(line).at("batch_size").get<long long>();
    }
    add_seed(report, seed, scores, queries);
    finalize(report);
    write_text(work / "report.json", report_to_json(report));
    if (log) {
        for (const auto& r : report.results) log(r.label + ": " + format_double(r.mean) + "%");
    }
    return report;
}

fs::path export_embeddings(const ExperimentConfig& config, const fs::path& work, const std::string& split) {
    config.validate();
    check_split_name(split);
    const auto model = load_model(config, work);
    const Dataset ds = read_split(work, split);
    const Matrix x = in_stage("export", config.seeds.front(), [&] { return representation(config, reduce(model, ds.images)); });
    const fs::path path = work / (split + "_embeddings.csv");
    write_matrix_csv(path, x, column_names(config), ds.labels);
    return path;
}

}  // namespace qgars
