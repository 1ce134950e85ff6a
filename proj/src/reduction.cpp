#include "qgars/reduction.hpp"

#include "qgars/error.hpp"

#include <Eigen/SVD>

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace qgars {

namespace {

constexpr std::uint32_t kPcaMagic = 0x43504751;  // "QGPC"
constexpr std::uint32_t kPcaVersion = 1;

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

std::vector<int> gather_labels(std::span<const int> labels, std::span<const std::size_t> rows) {
    std::vector<int> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
    return out;
}

// Minibatch boundaries over a permutation of n samples; a trailing batch of
// a single sample is dropped because batch statistics need two rows.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, int batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const auto b = static_cast<std::size_t>(std::max(1, batch_size));
    for (std::size_t start = 0; start < n; start += b) {
        const std::size_t end = std::min(n, start + b);
        if (end - start >= 2 || n == 1) out.emplace_back(start, end);
    }
    return out;
}

void check_finite(double loss, int epoch, const char* what) {
    if (!std::isfinite(loss)) {
        fail(ErrorCode::training, std::string(what) + " diverged (non-finite loss) at epoch " + std::to_string(epoch));
    }
}

nn::AdamConfig adam_for(const TrainConfig& c) {
    nn::AdamConfig a;
    a.learning_rate = c.learning_rate;
    a.weight_decay = c.weight_decay;
    return a;
}

// One encoder/decoder update on a minibatch. When `guide` is set the
// classification branch through the frozen surrogate contributes
// lambda * L_C; otherwise the step is plain reconstruction.
struct GuideBranch {
    const nn::Network* surrogate = nullptr;
    nn::Network* classifier = nullptr;
    nn::OptimizerState* classifier_opt = nullptr;
    std::span<const int> labels;
    double lambda = 0.0;
};

struct StepLosses {
    double reconstruction = 0.0;
    double classification = 0.0;
};

StepLosses train_step(Autoencoder& ae, nn::OptimizerState& enc_opt, nn::OptimizerState& dec_opt, const Matrix& x,
                      Rng& rng, const GuideBranch* guide) {
    const auto enc_rec = nn::forward(ae.encoder, x, nn::Mode::train, &rng);
    const auto dec_rec = nn::forward(ae.decoder, enc_rec.output, nn::Mode::train, &rng);
    auto recon = nn::mse_loss(dec_rec.output, x);
    StepLosses losses;
    losses.reconstruction = recon.value;

    const double recon_weight = guide ? 1.0 - guide->lambda : 1.0;
    auto dec_grads = nn::backward(ae.decoder, dec_rec, recon_weight * recon.grad);
    Matrix latent_grad = std::move(dec_grads.input);

    if (guide != nullptr) {
        const auto sur_rec = nn::forward_eval(*guide->surrogate, enc_rec.output);
        const auto cls_rec = nn::forward(*guide->classifier, sur_rec.output, nn::Mode::train, nullptr);
        auto ce = nn::cross_entropy_loss(cls_rec.output, guide->labels);
        losses.classification = ce.value;
        if (guide->lambda > 0.0) {
            auto cls_grads = nn::backward(*guide->classifier, cls_rec, guide->lambda * ce.grad);
            const auto sur_grads = nn::backward(*guide->surrogate, sur_rec, cls_grads.input);
            latent_grad += sur_grads.input;
            nn::adam_step(*guide->classifier, cls_grads, *guide->classifier_opt);
        }
    }

    const auto enc_grads = nn::backward(ae.encoder, enc_rec, latent_grad);
    nn::adam_step(ae.encoder, enc_grads, enc_opt);
    nn::adam_step(ae.decoder, dec_grads, dec_opt);
    return losses;
}

void validate_training(const Matrix& images, const AutoencoderArch& arch, const TrainConfig& config) {
    if (images.rows() < 2) fail(ErrorCode::insufficient_data, "autoencoder training needs at least 2 samples");
    if (images.cols() != arch.input_dim) {
        fail(ErrorCode::shape, "images have " + std::to_string(images.cols()) + " columns, encoder expects " +
                                   std::to_string(arch.input_dim));
    }
    if (config.epochs < 1) fail(ErrorCode::invalid_config, "epochs must be >= 1");
    if (config.batch_size < 2) fail(ErrorCode::invalid_config, "batch_size must be >= 2");
}

}  // namespace

// ---------------------------------------------------------------- PCA

PCAModel pca_fit(const Matrix& data, int k) {
    const auto n = data.rows();
    const auto d = data.cols();
    if (k < 1) fail(ErrorCode::invalid_input, "pca_fit: k must be >= 1");
    if (k > std::min(n, d)) {
        fail(ErrorCode::invalid_input, "pca_fit: k = " + std::to_string(k) + " exceeds min(n, d) = " +
                                           std::to_string(std::min(n, d)));
    }
    PCAModel model;
    model.mean = data.colwise().mean().transpose();
    const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const auto& v = svd.matrixV();
    const auto& s = svd.singularValues();
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    model.components.resize(k, d);
    model.explained_variance.resize(k);
    for (int i = 0; i < k; ++i) {
        Vector c = v.col(i);
        Eigen::Index arg = 0;
        c.cwiseAbs().maxCoeff(&arg);
        if (c(arg) < 0.0) c = -c;
        model.components.row(i) = c.transpose();
        model.explained_variance(i) = s(i) * s(i) / denom;
    }
    return model;
}

Matrix pca_transform(const PCAModel& model, const Matrix& data) {
    if (data.cols() != model.mean.size()) {
        fail(ErrorCode::shape, "pca_transform: data has " + std::to_string(data.cols()) + " columns, model expects " +
                                   std::to_string(model.mean.size()));
    }
    return (data.rowwise() - model.mean.transpose()) * model.components.transpose();
}

Matrix pca_inverse_transform(const PCAModel& model, const Matrix& codes) {
    if (codes.cols() != model.components.rows()) fail(ErrorCode::shape, "pca_inverse_transform: code width mismatch");
    Matrix out = codes * model.components;
    out.rowwise() += model.mean.transpose();
    return out;
}

void save_pca(const std::filesystem::path& path, const PCAModel& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
    const std::uint32_t header[4] = {kPcaMagic, kPcaVersion, static_cast<std::uint32_t>(model.components.rows()),
                                     static_cast<std::uint32_t>(model.components.cols())};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(model.mean.data()), model.mean.size() * 8);
    out.write(reinterpret_cast<const char*>(model.components.data()), model.components.size() * 8);
    out.write(reinterpret_cast<const char*>(model.explained_variance.data()), model.explained_variance.size() * 8);
    if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

PCAModel load_pca(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open PCA model " + path.string());
    std::uint32_t header[4] = {};
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (in.gcount() != sizeof(header) || header[0] != kPcaMagic) fail(ErrorCode::format, path.string() + ": not a PCA model");
    if (header[1] != kPcaVersion) fail(ErrorCode::format, path.string() + ": unsupported PCA model version");
    PCAModel m;
    m.mean.resize(header[3]);
    m.components.resize(header[2], header[3]);
    m.explained_variance.resize(header[2]);
    auto read = [&](double* p, Eigen::Index count) {
        in.read(reinterpret_cast<char*>(p), count * 8);
        if (in.gcount() != count * 8) fail(ErrorCode::format, path.string() + ": truncated PCA model");
    };
    read(m.mean.data(), m.mean.size());
    read(m.components.data(), m.components.size());
    read(m.explained_variance.data(), m.explained_variance.size());
    return m;
}

// ---------------------------------------------------------------- autoencoder

Autoencoder make_autoencoder(const AutoencoderArch& arch, Rng& rng) {
    if (arch.input_dim < 1 || arch.latent_dim < 1) fail(ErrorCode::invalid_config, "autoencoder dimensions must be positive");
    std::vector<nn::LayerSpec> enc;
    for (int h : arch.hidden) enc.push_back({h, nn::Activation::relu, arch.batch_norm, arch.dropout});
    enc.push_back({arch.latent_dim, nn::Activation::identity, arch.latent_batch_norm, 0.0});
    std::vector<nn::LayerSpec> dec;
    for (auto it = arch.hidden.rbegin(); it != arch.hidden.rend(); ++it) dec.push_back({*it, nn::Activation::relu, false, 0.0});
    dec.push_back({arch.input_dim, nn::Activation::sigmoid, false, 0.0});
    Autoencoder ae;
    ae.encoder = nn::Network(arch.input_dim, enc, rng);
    ae.decoder = nn::Network(arch.latent_dim, dec, rng);
    return ae;
}

AETrainResult ae_train(const Matrix& images, const AutoencoderArch& arch, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
    validate_training(images, arch, config);
    Rng rng(config.seed);
    AETrainResult result;
    result.model = make_autoencoder(arch, rng);
    auto enc_opt = nn::make_optimizer(result.model.encoder, adam_for(config));
    auto dec_opt = nn::make_optimizer(result.model.decoder, adam_for(config));

    std::vector<std::size_t> order(static_cast<std::size_t>(images.rows()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batches = batch_ranges(order.size(), config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double sum = 0.0;
        for (const auto& [start, end] : batches) {
            const Matrix x = gather_rows(images, std::span(order).subspan(start, end - start));
            sum += train_step(result.model, enc_opt, dec_opt, x, rng, nullptr).reconstruction;
        }
        EpochLoss e;
        e.epoch = epoch;
        e.reconstruction = sum / static_cast<double>(batches.size());
        e.total = e.reconstruction;
        check_finite(e.total, epoch, "autoencoder");
        result.trace.push_back(e);
        if (on_epoch) on_epoch(epoch, result.model);
    }
    return result;
}

Matrix encode(const nn::Network& encoder, const Matrix& images) {
    if (images.cols() != encoder.input_dim()) {
        fail(ErrorCode::shape, "encode: images have " + std::to_string(images.cols()) + " columns, encoder expects " +
                                   std::to_string(encoder.input_dim()));
    }
    return nn::predict(encoder, images);
}

// ---------------------------------------------------------------- surrogate

nn::Network make_surrogate(int latent_dim, int embedding_dim, const SurrogateConfig& config, Rng& rng) {
    std::vector<nn::LayerSpec> specs;
    for (int h : config.hidden) specs.push_back({h, nn::Activation::relu, false, 0.0});
    specs.push_back({embedding_dim, nn::Activation::identity, false, 0.0});
    return nn::Network(latent_dim, specs, rng);
}

SurrogateFit surrogate_fit(nn::Network network, const Matrix& latents, const Matrix& embeddings,
                           const SurrogateConfig& config, int steps, Rng& rng) {
    if (latents.rows() < 1) fail(ErrorCode::insufficient_data, "surrogate_fit needs at least one pair");
    if (latents.rows() != embeddings.rows()) fail(ErrorCode::shape, "surrogate_fit: latent and embedding counts differ");
    if (latents.cols() != network.input_dim()) {
        fail(ErrorCode::shape, "surrogate_fit: latent width " + std::to_string(latents.cols()) + " != surrogate input " +
                                   std::to_string(network.input_dim()));
    }
    if (embeddings.cols() != network.output_dim()) {
        fail(ErrorCode::shape, "surrogate_fit: embedding width " + std::to_string(embeddings.cols()) +
                                   " != surrogate output " + std::to_string(network.output_dim()));
    }
    SurrogateFit fit;
    fit.initial_mse = nn::mse_loss(nn::predict(network, latents), embeddings).value;

    nn::AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    auto opt = nn::make_optimizer(network, adam);
    const auto n = static_cast<std::size_t>(latents.rows());
    const std::size_t batch = std::min(n, static_cast<std::size_t>(std::max(1, config.batch_size)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = n;
    for (int step = 0; step < steps; ++step) {
        if (cursor + batch > n) {
            rng.shuffle(order);
            cursor = 0;
        }
        const auto rows = std::span(order).subspan(cursor, batch);
        cursor += batch;
        const Matrix x = gather_rows(latents, rows);
        const Matrix q = gather_rows(embeddings, rows);
        const auto rec = nn::forward(network, x, nn::Mode::train, &rng);
        const auto loss = nn::mse_loss(rec.output, q);
        if (!std::isfinite(loss.value)) fail(ErrorCode::training, "surrogate fit diverged at step " + std::to_string(step));
        nn::adam_step(network, nn::backward(network, rec, loss.grad), opt);
    }
    fit.final_mse = nn::mse_loss(nn::predict(network, latents), embeddings).value;
    fit.network = std::move(network);
    return fit;
}

// ---------------------------------------------------------------- guided AE

int refresh_count(int epochs, int update_frequency) {
    if (epochs <= 0) return 0;
    return (epochs + update_frequency - 1) / update_frequency;
}

GuidedTrainState qgars_train(const Matrix& images, std::span<const int> labels, const ReservoirConfig& reservoir,
                             const AutoencoderArch& arch, const TrainConfig& config, const GuidedConfig& guided,
                             const ReservoirFn& reservoir_fn, int parallelism, const EpochCallback& on_epoch) {
    validate_training(images, arch, config);
    reservoir.validate();
    if (!(guided.lambda >= 0.0 && guided.lambda <= 1.0)) fail(ErrorCode::invalid_config, "lambda must lie in [0, 1]");
    if (guided.update_frequency < 1) fail(ErrorCode::invalid_config, "quantum update frequency must be >= 1");
    if (arch.latent_dim != reservoir.n_atoms) {
        fail(ErrorCode::invalid_config, "latent dimension " + std::to_string(arch.latent_dim) + " != n_atoms " +
                                            std::to_string(reservoir.n_atoms));
    }
    if (static_cast<Eigen::Index>(labels.size()) != images.rows()) fail(ErrorCode::shape, "qgars_train: label count mismatch");

    const int embedding_dim = embedding_dimension(reservoir);
    ReservoirFn query = reservoir_fn;
    if (!query) {
        query = [&reservoir, parallelism](const Matrix& z) { return embed_batch(z, reservoir, parallelism); };
    }

    // The main stream reproduces ae_train draw for draw; everything the
    // guided branch needs comes from a separate stream.
    Rng rng(config.seed);
    Rng aux(derive_seed(config.seed, 1));
    GuidedTrainState state;
    state.lambda = guided.lambda;
    state.update_frequency = guided.update_frequency;
    state.autoencoder = make_autoencoder(arch, rng);
    state.surrogate = make_surrogate(arch.latent_dim, embedding_dim, guided.surrogate, aux);
    const std::array<nn::LayerSpec, 1> head{nn::LayerSpec{2, nn::Activation::identity, false, 0.0}};
    state.classifier = nn::Network(embedding_dim, head, aux);

    auto enc_opt = nn::make_optimizer(state.autoencoder.encoder, adam_for(config));
    auto dec_opt = nn::make_optimizer(state.autoencoder.decoder, adam_for(config));
    nn::AdamConfig cls_adam;
    cls_adam.learning_rate = config.learning_rate;
    auto cls_opt = nn::make_optimizer(state.classifier, cls_adam);

    const auto n = static_cast<std::size_t>(images.rows());
    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (guided.probe_size > 0 && static_cast<std::size_t>(guided.probe_size) < n) {
        aux.shuffle(probe);
        probe.resize(static_cast<std::size_t>(guided.probe_size));
    }
    const Matrix probe_images = gather_rows(images, probe);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batches = batch_ranges(n, config.batch_size);
    double last_surrogate_mse = 0.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        state.epoch = epoch;
        if (epoch % guided.update_frequency == 0) {
            ReservoirQuery q;
            q.epoch = epoch;
            q.batch_size = static_cast<int>(probe.size());
            state.cached_latents = encode(state.autoencoder.encoder, probe_images);
            const auto t0 = std::chrono::steady_clock::now();
            try {
                state.cached_embeddings = query(state.cached_latents);
            } catch (const Error& e) {
                fail(e.code(), "reservoir query at epoch " + std::to_string(epoch) + ": " + e.what());
            }
            q.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (state.cached_embeddings.rows() != state.cached_latents.rows() ||
                state.cached_embeddings.cols() != embedding_dim) {
                fail(ErrorCode::shape, "reservoir returned a " + std::to_string(state.cached_embeddings.rows()) + "x" +
                                           std::to_string(state.cached_embeddings.cols()) + " embedding batch");
            }
            const int steps = state.queries.empty() ? guided.surrogate.initial_steps : guided.surrogate.steps;
            auto fit = surrogate_fit(std::move(state.surrogate), state.cached_latents, state.cached_embeddings,
                                     guided.surrogate, steps, aux);
            state.surrogate = std::move(fit.network);
            last_surrogate_mse = fit.final_mse;
            q.surrogate_mse = fit.final_mse;
            state.queries.push_back(q);
        }

        rng.shuffle(order);
        double sum_r = 0.0;
        double sum_c = 0.0;
        for (const auto& [start, end] : batches) {
            const auto rows = std::span(order).subspan(start, end - start);
            const Matrix x = gather_rows(images, rows);
            const auto y = gather_labels(labels, rows);
            GuideBranch guide{&state.surrogate, &state.classifier, &cls_opt, y, guided.lambda};
            const auto l = train_step(state.autoencoder, enc_opt, dec_opt, x, rng, &guide);
            sum_r += l.reconstruction;
            sum_c += l.classification;
        }
        EpochLoss e;
        e.epoch = epoch;
        e.reconstruction = sum_r / static_cast<double>(batches.size());
        e.classification = sum_c / static_cast<double>(batches.size());
        e.surrogate = last_surrogate_mse;
        e.total = (1.0 - guided.lambda) * e.reconstruction + guided.lambda * e.classification;
        check_finite(e.total, epoch, "guided autoencoder");
        state.trace.push_back(e);
        if (on_epoch) on_epoch(epoch, state.autoencoder);
    }
    return state;
}

}  // namespace qgars
