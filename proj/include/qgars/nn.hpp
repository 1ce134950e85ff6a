#pragma once

#include "qgars/matrix_io.hpp"
#include "qgars/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Layered dense networks with reverse-mode gradients. Batches are row-major
// matrices with one sample per row.
namespace qgars::nn {

// Softmax is folded into cross_entropy_loss; classifier heads use identity.
enum class Activation : std::uint8_t { identity = 0, relu = 1, sigmoid = 2, tanh = 3 };

enum class Mode { train, eval };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct BatchNorm {
    Vector scale;
    Vector shift;
    Vector running_mean;
    Vector running_var;
    double momentum = 0.9;
    double epsilon = 1e-5;
};

// y = dropout(act(bn(x * weight + bias)))
struct DenseLayer {
    Matrix weight;  // in x out
    Vector bias;    // out
    Activation activation = Activation::identity;
    std::optional<BatchNorm> batch_norm;
    double dropout = 0.0;

    int in_dim() const { return static_cast<int>(weight.rows()); }
    int out_dim() const { return static_cast<int>(weight.cols()); }
};

struct LayerSpec {
    int out = 0;
    Activation activation = Activation::identity;
    bool batch_norm = false;
    double dropout = 0.0;
};

class Network {
public:
    Network() = default;
    // Uniform fan-in initialisation: bound sqrt(6/fan_in) ahead of relu,
    // sqrt(3/fan_in) otherwise; zero biases.
    Network(int input_dim, std::span<const LayerSpec> specs, Rng& rng);

    std::vector<DenseLayer> layers;

    int input_dim() const;
    int output_dim() const;
    bool empty() const { return layers.empty(); }

    // Throws Error(shape) if consecutive layers do not chain or a
    // dropout rate lies outside [0, 1).
    void validate() const;
};

std::size_t parameter_count(const Network& net);

struct LayerCache {
    Matrix input;
    Matrix pre_activation;  // input to the activation function
    Matrix normalized;      // batch-norm x-hat (empty without batch norm)
    Vector inv_std;         // 1/sqrt(var + eps) used by the forward pass
    Matrix activated;       // act(...)
    Matrix dropout_mask;    // scaled keep mask (empty when inactive)
};

struct ForwardRecord {
    Mode mode = Mode::eval;
    std::vector<LayerCache> layers;
    Matrix output;

    bool valid() const { return !layers.empty(); }
};

// Train mode samples dropout masks from `rng` (required when any layer has
// a non-zero rate) and updates batch-norm running statistics.
ForwardRecord forward(Network& net, const Matrix& batch, Mode mode, Rng* rng = nullptr);
// Eval-mode forward on a frozen network.
ForwardRecord forward_eval(const Network& net, const Matrix& batch);
Matrix predict(const Network& net, const Matrix& batch);

struct LayerGrad {
    Matrix weight;
    Vector bias;
    Vector bn_scale;
    Vector bn_shift;
};

struct Gradients {
    std::vector<LayerGrad> layers;
    Matrix input;  // d loss / d batch
};

// Gradients of a scalar loss given d loss / d output. Throws Error(state)
// when `record` is empty.
Gradients backward(const Network& net, const ForwardRecord& record, const Matrix& loss_grad);

struct LossResult {
    double value = 0.0;
    Matrix grad;
};

// Mean over the batch of the squared Euclidean distance between rows.
LossResult mse_loss(const Matrix& pred, const Matrix& target);
// Softmax + negative log-likelihood over two classes, mean over the batch.
LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // decoupled
};

struct OptimizerState {
    AdamConfig config;
    std::vector<LayerGrad> first_moment;
    std::vector<LayerGrad> second_moment;
    long step = 0;
};

OptimizerState make_optimizer(const Network& net, const AdamConfig& config);
void adam_step(Network& net, const Gradients& grads, OptimizerState& opt);

// Checkpoint: magic "QGNN", version, layer count, then per layer the
// dimensions, activation, flags and row-major f64 payloads.
void save_network(const std::filesystem::path& path, const Network& net);
Network load_network(const std::filesystem::path& path);

}  // namespace qgars::nn
