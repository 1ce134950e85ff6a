#pragma once

#include "qgars/classify.hpp"
#include "qgars/data.hpp"
#include "qgars/reduction.hpp"
#include "qgars/reservoir.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace qgars {

inline constexpr int kConfigSchemaVersion = 1;

enum class DatasetKind { synthetic, mnist, patches };
enum class Method { pca, ae, qgars };

const char* to_string(DatasetKind k);
const char* to_string(Method m);
Method method_from_string(const std::string& name);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::synthetic;
    std::size_t n_train = 400;
    std::size_t n_test = 100;
    std::uint64_t seed = 1234;     // synthetic generator seed
    PolypConfig polyp;             // synthetic recipe
    std::string mnist_images;      // IDX paths, relative to the config file
    std::string mnist_labels;
    std::string patch_dir;         // image patch directory and manifest
    std::string patch_manifest;
    int patch_size = 32;
};

struct OutputSpec {
    bool save_embeddings = true;   // binary train/test embeddings per seed
    bool embeddings_csv = false;   // also CSV with a leading label column
};

struct ExperimentConfig {
    std::string profile = "desk";
    DatasetSpec dataset;
    Method method = Method::qgars;
    bool qrc = true;
    int n_features = 8;            // PCA k or latent width
    AutoencoderArch autoencoder;   // input_dim is filled from the data
    TrainConfig training;          // seed is filled per run
    GuidedConfig guided;
    ReservoirConfig reservoir;
    ClassifierConfig classifier;   // kind and seed are filled per run
    std::vector<ClassifierKind> classifiers{ClassifierKind::linear};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    int parallelism = 1;           // reservoir batch threads
    int workers = 1;               // seeds (or sweep cells) run concurrently
    std::string output_dir = "runs/desk";
    OutputSpec outputs;

    // Throws Error(invalid_config) naming the offending field.
    void validate() const;
};

// Named presets: "desk" (8 qubits, T = 8, 400/100 synthetic, 5 seeds) and
// "paper" (12 qubits, T = 16, 2000/400).
ExperimentConfig profile_config(const std::string& name);

// JSON with schema_version. Unknown keys are rejected so typos surface;
// missing keys keep the profile defaults. `base_dir` resolves relative
// dataset paths.
ExperimentConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
// Fully resolved, every field present.
std::string config_to_json(const ExperimentConfig& config);

// Sets one dotted key ("guided.lambda", "reservoir.n_atoms", ...) from a
// JSON literal.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& json_value);

}  // namespace qgars
