#pragma once

#include "qgars/matrix_io.hpp"
#include "qgars/nn.hpp"
#include "qgars/reservoir.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace qgars {

// ---------------------------------------------------------------- PCA

struct PCAModel {
    Vector mean;                // d
    Matrix components;          // k x d, orthonormal rows
    Vector explained_variance;  // k, non-increasing, (n-1) denominator
};

// Top-k right singular directions of the mean-centred data. Each
// component's sign is fixed so that its largest-magnitude entry is positive.
PCAModel pca_fit(const Matrix& data, int k);
Matrix pca_transform(const PCAModel& model, const Matrix& data);
Matrix pca_inverse_transform(const PCAModel& model, const Matrix& codes);

void save_pca(const std::filesystem::path& path, const PCAModel& model);
PCAModel load_pca(const std::filesystem::path& path);

// ---------------------------------------------------------------- autoencoder

struct AutoencoderArch {
    int input_dim = 0;
    std::vector<int> hidden{128};
    int latent_dim = 8;
    double dropout = 0.1;  // encoder hidden layers only
    bool batch_norm = true;
    // Batch-normalise the latent layer so codes stay on the scale the
    // detuning map expects.
    bool latent_batch_norm = true;
};

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    double learning_rate = 3e-3;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
};

struct Autoencoder {
    nn::Network encoder;
    nn::Network decoder;
};

struct EpochLoss {
    int epoch = 0;
    double reconstruction = 0.0;
    double classification = 0.0;
    double surrogate = 0.0;
    double total = 0.0;
};

using EpochCallback = std::function<void(int epoch, const Autoencoder&)>;

struct AETrainResult {
    Autoencoder model;
    std::vector<EpochLoss> trace;
};

// Builds the encoder (hidden: dense+bn+relu+dropout, latent: dense+bn) and
// the mirrored decoder (relu hidden, sigmoid output) from `seed`.
Autoencoder make_autoencoder(const AutoencoderArch& arch, Rng& rng);

// Minimises mean reconstruction MSE with Adam. Throws Error(training) with
// the epoch index when the loss becomes non-finite.
AETrainResult ae_train(const Matrix& images, const AutoencoderArch& arch, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

// Eval-mode latent codes.
Matrix encode(const nn::Network& encoder, const Matrix& images);

// ---------------------------------------------------------------- surrogate

struct SurrogateConfig {
    std::vector<int> hidden{256, 1024};
    int steps = 200;          // Adam steps per refresh
    int initial_steps = 600;  // Adam steps for the first fit from scratch
    int batch_size = 64;
    double learning_rate = 1e-3;
};

struct SurrogateFit {
    nn::Network network;
    double initial_mse = 0.0;  // on the given pairs, before this fit
    double final_mse = 0.0;    // on the given pairs, after this fit
};

nn::Network make_surrogate(int latent_dim, int embedding_dim, const SurrogateConfig& config, Rng& rng);

// Fits `network` (warm start) to map latents onto embeddings by minimising
// mean ||q' - q||^2 for `steps` minibatch Adam steps.
SurrogateFit surrogate_fit(nn::Network network, const Matrix& latents, const Matrix& embeddings,
                           const SurrogateConfig& config, int steps, Rng& rng);

// ---------------------------------------------------------------- guided AE

struct GuidedConfig {
    double lambda = 0.5;
    int update_frequency = 10;  // epochs between reservoir queries
    int probe_size = 0;         // 0 = every training sample
    SurrogateConfig surrogate;
};

struct ReservoirQuery {
    int epoch = 0;
    int batch_size = 0;
    double wall_seconds = 0.0;
    double surrogate_mse = 0.0;
};

// Maps a latent batch to reservoir embeddings; defaults to embed_batch.
using ReservoirFn = std::function<Matrix(const Matrix& latents)>;

struct GuidedTrainState {
    Autoencoder autoencoder;
    nn::Network surrogate;
    nn::Network classifier;  // embedding_dim -> 2
    double lambda = 0.5;
    int update_frequency = 10;
    int epoch = 0;
    Matrix cached_latents;
    Matrix cached_embeddings;
    std::vector<EpochLoss> trace;
    std::vector<ReservoirQuery> queries;
};

// Guided autoencoder training. Every `update_frequency` epochs the probe
// latents go through the reservoir and the surrogate is refitted on the
// fresh pairs; every epoch the encoder, decoder and guided classifier
// minimise (1 - lambda) * L_R + lambda * L_C, with L_C computed through the
// frozen surrogate. Consumes the main random stream exactly like ae_train.
GuidedTrainState qgars_train(const Matrix& images, std::span<const int> labels,
                             const ReservoirConfig& reservoir, const AutoencoderArch& arch,
                             const TrainConfig& config, const GuidedConfig& guided,
                             const ReservoirFn& reservoir_fn = {}, int parallelism = 1,
                             const EpochCallback& on_epoch = {});

// Number of reservoir queries a run of `epochs` epochs performs.
int refresh_count(int epochs, int update_frequency);

}  // namespace qgars
