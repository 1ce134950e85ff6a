#pragma once

#include "qgars/config.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qgars {

using LogFn = std::function<void(const std::string&)>;

struct ClassifierResult {
    ClassifierKind kind = ClassifierKind::linear;
    std::string label;  // e.g. "QGARS + QRC", "PCA + NN"
    std::size_t parameter_count = 0;
    std::vector<double> accuracies;        // test, per seed
    std::vector<double> train_accuracies;  // per seed
    double mean = 0.0;
    std::optional<double> std;  // absent for a single seed
    double max = 0.0;
};

struct ExperimentReport {
    std::string method;
    bool qrc = false;
    std::string dataset;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    int feature_dim = 0;
    int embedding_dim = 0;  // 0 without the reservoir stage
    std::vector<std::uint64_t> seeds;
    std::vector<ClassifierResult> results;
    // Latent samples pushed through the reservoir while training (guided
    // refreshes), summed over seeds and per seed.
    long long reservoir_query_count = 0;
    std::vector<long long> reservoir_queries_per_seed;
    int reservoir_refreshes_per_seed = 0;
};

// Deterministic serialisation: identical inputs give identical bytes.
std::string report_to_json(const ExperimentReport& report);

Dataset load_configured_dataset(const ExperimentConfig& config);

// reduce -> (reservoir) -> classify for every seed, then aggregate. Writes
// resolved_config.json, report.json, table.csv, table.txt, telemetry.json
// and a seed_<s>/ directory of per-seed artifacts under output_dir.
// Failures carry the stage name and seed.
ExperimentReport run_experiment(const ExperimentConfig& config, const LogFn& log = {});

struct SweepCell {
    double value = 0.0;
    bool ok = false;
    std::string error;
    std::optional<ExperimentReport> report;
};

struct SweepResult {
    std::string axis;
    std::vector<SweepCell> cells;
};

// One run_experiment per value under output_dir/<axis>_<value>; failing
// cells are recorded and the sweep moves on. Axes: lambda,
// update_frequency, n_qubits. Writes sweep.csv.
SweepResult run_sweep(const ExperimentConfig& base, const std::string& axis, std::span<const double> values,
                      const LogFn& log = {});
std::string sweep_to_csv(const SweepResult& sweep);

// Single-seed stages sharing a work directory; each reads what the
// previous one wrote. The seed is config.seeds.front().
void stage_gen_data(const ExperimentConfig& config, const std::filesystem::path& work, const LogFn& log = {});
void stage_train(const ExperimentConfig& config, const std::filesystem::path& work, const LogFn& log = {});
void stage_embed(const ExperimentConfig& config, const std::filesystem::path& work, const LogFn& log = {});
ExperimentReport stage_classify(const ExperimentConfig& config, const std::filesystem::path& work, const LogFn& log = {});

// `<work>/<split>_embeddings.csv`: one row per sample, label column first.
// Needs the trained model checkpoint and the split written by gen-data.
std::filesystem::path export_embeddings(const ExperimentConfig& config, const std::filesystem::path& work,
                                        const std::string& split);

}  // namespace qgars
