#include "qgars/nn.hpp"

#include "qgars/error.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace qgars::nn {

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4E4E4751;  // "QGNN"
constexpr std::uint32_t kCheckpointVersion = 1;

void apply_activation(Activation a, Matrix& m) {
    switch (a) {
        case Activation::identity: break;
        case Activation::relu: m = m.cwiseMax(0.0); break;
        case Activation::sigmoid:
            m = m.unaryExpr([](double x) {
                return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            });
            break;
        case Activation::tanh: m = m.array().tanh().matrix(); break;
    }
}

// d act / d pre, expressed through the pre-activation `pre` and output `post`.
Matrix activation_grad(Activation a, const Matrix& pre, const Matrix& post, const Matrix& upstream) {
    switch (a) {
        case Activation::identity: return upstream;
        case Activation::relu: return (pre.array() > 0.0).select(upstream, 0.0);
        case Activation::sigmoid: return (upstream.array() * post.array() * (1.0 - post.array())).matrix();
        case Activation::tanh: return (upstream.array() * (1.0 - post.array().square())).matrix();
    }
    return upstream;
}

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) fail(ErrorCode::format, "truncated checkpoint reading " + what);
    return v;
}

void write_doubles(std::ofstream& out, const double* data, Eigen::Index n) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, Eigen::Index n) {
    const auto bytes = static_cast<std::streamsize>(n * sizeof(double));
    in.read(reinterpret_cast<char*>(data), bytes);
    if (in.gcount() != bytes) fail(ErrorCode::format, "truncated checkpoint payload");
}

LayerGrad zeros_like(const DenseLayer& layer) {
    LayerGrad g;
    g.weight = Matrix::Zero(layer.weight.rows(), layer.weight.cols());
    g.bias = Vector::Zero(layer.bias.size());
    if (layer.batch_norm) {
        g.bn_scale = Vector::Zero(layer.batch_norm->scale.size());
        g.bn_shift = Vector::Zero(layer.batch_norm->shift.size());
    }
    return g;
}

template <typename Param, typename Grad>
void adam_update(Param& p, const Grad& g, Grad& m, Grad& v, const AdamConfig& c, double bias1, double bias2) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    const auto m_hat = m.array() / bias1;
    const auto v_hat = v.array() / bias2;
    p.array() -= c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * p.array());
}

}  // namespace

const char* to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
    }
    return "identity";
}

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    if (name == "tanh") return Activation::tanh;
    fail(ErrorCode::invalid_config, "unknown activation '" + name + "'");
}

Network::Network(int input_dim, std::span<const LayerSpec> specs, Rng& rng) {
    int in = input_dim;
    for (const auto& spec : specs) {
        DenseLayer layer;
        const double bound = std::sqrt((spec.activation == Activation::relu ? 6.0 : 3.0) / in);
        layer.weight.resize(in, spec.out);
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
        layer.bias = Vector::Zero(spec.out);
        layer.activation = spec.activation;
        layer.dropout = spec.dropout;
        if (spec.batch_norm) {
            BatchNorm bn;
            bn.scale = Vector::Ones(spec.out);
            bn.shift = Vector::Zero(spec.out);
            bn.running_mean = Vector::Zero(spec.out);
            bn.running_var = Vector::Ones(spec.out);
            layer.batch_norm = bn;
        }
        layers.push_back(std::move(layer));
        in = spec.out;
    }
    validate();
}

int Network::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
int Network::output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

void Network::validate() const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.bias.size() != l.weight.cols()) fail(ErrorCode::shape, "layer " + std::to_string(i) + ": bias length mismatch");
        if (i + 1 < layers.size() && l.out_dim() != layers[i + 1].in_dim()) {
            fail(ErrorCode::shape, "layer " + std::to_string(i) + " output " + std::to_string(l.out_dim()) +
                                       " does not feed layer " + std::to_string(i + 1) + " input " +
                                       std::to_string(layers[i + 1].in_dim()));
        }
        if (!(l.dropout >= 0.0 && l.dropout < 1.0)) fail(ErrorCode::shape, "layer " + std::to_string(i) + ": dropout outside [0,1)");
        if (l.batch_norm && l.batch_norm->scale.size() != l.weight.cols()) {
            fail(ErrorCode::shape, "layer " + std::to_string(i) + ": batch-norm width mismatch");
        }
    }
}

std::size_t parameter_count(const Network& net) {
    std::size_t total = 0;
    for (const auto& l : net.layers) {
        total += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        if (l.batch_norm) total += 2 * static_cast<std::size_t>(l.out_dim());
    }
    return total;
}

namespace {

ForwardRecord run_forward(const Network& net, Network* mutable_net, const Matrix& batch, Mode mode, Rng* rng) {
    if (net.layers.empty()) fail(ErrorCode::shape, "forward on an empty network");
    ForwardRecord rec;
    rec.mode = mode;
    rec.layers.resize(net.layers.size());
    Matrix x = batch;
    const auto n = static_cast<double>(batch.rows());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& layer = net.layers[i];
        if (x.cols() != layer.in_dim()) {
            fail(ErrorCode::shape, "layer " + std::to_string(i) + " expects " + std::to_string(layer.in_dim()) +
                                       " inputs, got " + std::to_string(x.cols()));
        }
        auto& cache = rec.layers[i];
        cache.input = x;
        Matrix pre = x * layer.weight;
        pre.rowwise() += layer.bias.transpose();
        if (layer.batch_norm) {
            const auto& bn = *layer.batch_norm;
            Vector mean;
            Vector var;
            if (mode == Mode::train) {
                mean = pre.colwise().mean().transpose();
                Matrix centered = pre.rowwise() - mean.transpose();
                var = centered.colwise().squaredNorm().transpose() / n;
                if (mutable_net != nullptr) {
                    auto& mbn = *mutable_net->layers[i].batch_norm;
                    const Vector unbiased = batch.rows() > 1 ? Vector(var * (n / (n - 1.0))) : var;
                    mbn.running_mean = bn.momentum * mbn.running_mean + (1.0 - bn.momentum) * mean;
                    mbn.running_var = bn.momentum * mbn.running_var + (1.0 - bn.momentum) * unbiased;
                }
            } else {
                mean = bn.running_mean;
                var = bn.running_var;
            }
            cache.inv_std = (var.array() + bn.epsilon).rsqrt().matrix();
            cache.normalized = (pre.rowwise() - mean.transpose()).array().rowwise() * cache.inv_std.transpose().array();
            pre = (cache.normalized.array().rowwise() * bn.scale.transpose().array()).matrix();
            pre.rowwise() += bn.shift.transpose();
        }
        cache.activated = pre;
        apply_activation(layer.activation, cache.activated);
        cache.pre_activation = std::move(pre);
        x = cache.activated;
        if (mode == Mode::train && layer.dropout > 0.0) {
            if (rng == nullptr) fail(ErrorCode::state, "dropout in train mode needs a random source");
            const double keep = 1.0 - layer.dropout;
            cache.dropout_mask.resize(x.rows(), x.cols());
            for (Eigen::Index r = 0; r < x.rows(); ++r)
                for (Eigen::Index c = 0; c < x.cols(); ++c) cache.dropout_mask(r, c) = rng->uniform() < keep ? 1.0 / keep : 0.0;
            x = x.cwiseProduct(cache.dropout_mask);
        }
    }
    rec.output = std::move(x);
    return rec;
}

}  // namespace

ForwardRecord forward(Network& net, const Matrix& batch, Mode mode, Rng* rng) {
    return run_forward(net, &net, batch, mode, rng);
}

ForwardRecord forward_eval(const Network& net, const Matrix& batch) {
    return run_forward(net, nullptr, batch, Mode::eval, nullptr);
}

Matrix predict(const Network& net, const Matrix& batch) { return forward_eval(net, batch).output; }

Gradients backward(const Network& net, const ForwardRecord& record, const Matrix& loss_grad) {
    if (!record.valid()) fail(ErrorCode::state, "backward called without a cached forward pass");
    if (record.layers.size() != net.layers.size()) fail(ErrorCode::state, "forward record does not match the network");
    if (loss_grad.rows() != record.output.rows() || loss_grad.cols() != record.output.cols()) {
        fail(ErrorCode::shape, "loss gradient shape does not match the network output");
    }
    Gradients grads;
    grads.layers.resize(net.layers.size());
    Matrix upstream = loss_grad;
    const auto n = static_cast<double>(loss_grad.rows());
    for (std::size_t idx = net.layers.size(); idx-- > 0;) {
        const auto& layer = net.layers[idx];
        const auto& cache = record.layers[idx];
        auto& g = grads.layers[idx];
        if (cache.dropout_mask.size() > 0) upstream = upstream.cwiseProduct(cache.dropout_mask);
        Matrix d = activation_grad(layer.activation, cache.pre_activation, cache.activated, upstream);
        if (layer.batch_norm) {
            const auto& bn = *layer.batch_norm;
            g.bn_scale = (d.cwiseProduct(cache.normalized)).colwise().sum().transpose();
            g.bn_shift = d.colwise().sum().transpose();
            Matrix dxhat = d.array().rowwise() * bn.scale.transpose().array();
            if (record.mode == Mode::train) {
                const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
                const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(cache.normalized).colwise().sum();
                Matrix t = (n * dxhat).rowwise() - sum_dxhat;
                t -= (cache.normalized.array().rowwise() * sum_dxhat_xhat.array()).matrix();
                d = (t.array().rowwise() * (cache.inv_std.transpose().array() / n)).matrix();
            } else {
                d = (dxhat.array().rowwise() * cache.inv_std.transpose().array()).matrix();
            }
        }
        g.weight = cache.input.transpose() * d;
        g.bias = d.colwise().sum().transpose();
        upstream = d * layer.weight.transpose();
    }
    grads.input = std::move(upstream);
    return grads;
}

LossResult mse_loss(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        fail(ErrorCode::shape, "mse_loss: prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                                   " vs target " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
    }
    if (pred.rows() == 0) fail(ErrorCode::shape, "mse_loss: empty batch");
    const auto n = static_cast<double>(pred.rows());
    Matrix diff = pred - target;
    LossResult r;
    r.value = diff.squaredNorm() / n;
    r.grad = (2.0 / n) * diff;
    return r;
}

LossResult cross_entropy_loss(const Matrix& logits, std::span<const int> labels) {
    if (logits.cols() != 2) fail(ErrorCode::shape, "cross_entropy_loss expects 2 logit columns");
    if (static_cast<std::size_t>(logits.rows()) != labels.size()) fail(ErrorCode::shape, "cross_entropy_loss: label count mismatch");
    if (logits.rows() == 0) fail(ErrorCode::shape, "cross_entropy_loss: empty batch");
    const auto n = static_cast<double>(logits.rows());
    LossResult r;
    r.grad.resize(logits.rows(), 2);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y != 0 && y != 1) fail(ErrorCode::invalid_input, "label " + std::to_string(y) + " out of range {0,1}");
        const double m = std::max(logits(i, 0), logits(i, 1));
        const double e0 = std::exp(logits(i, 0) - m);
        const double e1 = std::exp(logits(i, 1) - m);
        const double log_z = m + std::log(e0 + e1);
        total += log_z - logits(i, y);
        const double p0 = e0 / (e0 + e1);
        const double p1 = e1 / (e0 + e1);
        r.grad(i, 0) = (p0 - (y == 0 ? 1.0 : 0.0)) / n;
        r.grad(i, 1) = (p1 - (y == 1 ? 1.0 : 0.0)) / n;
    }
    r.value = total / n;
    return r;
}

OptimizerState make_optimizer(const Network& net, const AdamConfig& config) {
    OptimizerState opt;
    opt.config = config;
    for (const auto& layer : net.layers) {
        opt.first_moment.push_back(zeros_like(layer));
        opt.second_moment.push_back(zeros_like(layer));
    }
    return opt;
}

void adam_step(Network& net, const Gradients& grads, OptimizerState& opt) {
    if (grads.layers.size() != net.layers.size() || opt.first_moment.size() != net.layers.size()) {
        fail(ErrorCode::shape, "adam_step: gradient/optimizer layout does not match the network");
    }
    ++opt.step;
    const auto& c = opt.config;
    const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
    const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& layer = net.layers[i];
        const auto& g = grads.layers[i];
        auto& m = opt.first_moment[i];
        auto& v = opt.second_moment[i];
        if (g.weight.rows() != layer.weight.rows() || g.weight.cols() != layer.weight.cols() || g.bias.size() != layer.bias.size()) {
            fail(ErrorCode::shape, "adam_step: gradient shape mismatch at layer " + std::to_string(i));
        }
        adam_update(layer.weight, g.weight, m.weight, v.weight, c, bias1, bias2);
        adam_update(layer.bias, g.bias, m.bias, v.bias, c, bias1, bias2);
        if (layer.batch_norm) {
            adam_update(layer.batch_norm->scale, g.bn_scale, m.bn_scale, v.bn_scale, c, bias1, bias2);
            adam_update(layer.batch_norm->shift, g.bn_shift, m.bn_shift, v.bn_shift, c, bias1, bias2);
        }
    }
}

void save_network(const std::filesystem::path& path, const Network& net) {
    net.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
    write_pod(out, kCheckpointMagic);
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint32_t>(net.layers.size()));
    for (const auto& l : net.layers) {
        write_pod(out, static_cast<std::uint32_t>(l.in_dim()));
        write_pod(out, static_cast<std::uint32_t>(l.out_dim()));
        write_pod(out, static_cast<std::uint8_t>(l.activation));
        write_pod(out, static_cast<std::uint8_t>(l.batch_norm ? 1 : 0));
        write_pod(out, l.dropout);
        write_doubles(out, l.weight.data(), l.weight.size());
        write_doubles(out, l.bias.data(), l.bias.size());
        if (l.batch_norm) {
            const auto& bn = *l.batch_norm;
            write_pod(out, bn.momentum);
            write_pod(out, bn.epsilon);
            write_doubles(out, bn.scale.data(), bn.scale.size());
            write_doubles(out, bn.shift.data(), bn.shift.size());
            write_doubles(out, bn.running_mean.data(), bn.running_mean.size());
            write_doubles(out, bn.running_var.data(), bn.running_var.size());
        }
    }
    if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open checkpoint " + path.string());
    const auto magic = read_pod<std::uint32_t>(in, "magic");
    if (magic != kCheckpointMagic) fail(ErrorCode::format, path.string() + ": bad checkpoint magic " + std::to_string(magic));
    const auto version = read_pod<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) fail(ErrorCode::format, path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto n_layers = read_pod<std::uint32_t>(in, "layer count");
    Network net;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        DenseLayer l;
        const auto rows = read_pod<std::uint32_t>(in, "input dim");
        const auto cols = read_pod<std::uint32_t>(in, "output dim");
        const auto act = read_pod<std::uint8_t>(in, "activation");
        if (act > 3) fail(ErrorCode::format, "unknown activation tag " + std::to_string(act));
        l.activation = static_cast<Activation>(act);
        const auto has_bn = read_pod<std::uint8_t>(in, "batch-norm flag");
        l.dropout = read_pod<double>(in, "dropout");
        l.weight.resize(rows, cols);
        l.bias.resize(cols);
        read_doubles(in, l.weight.data(), l.weight.size());
        read_doubles(in, l.bias.data(), l.bias.size());
        if (has_bn) {
            BatchNorm bn;
            bn.momentum = read_pod<double>(in, "momentum");
            bn.epsilon = read_pod<double>(in, "epsilon");
            bn.scale.resize(cols);
            bn.shift.resize(cols);
            bn.running_mean.resize(cols);
            bn.running_var.resize(cols);
            read_doubles(in, bn.scale.data(), cols);
            read_doubles(in, bn.shift.data(), cols);
            read_doubles(in, bn.running_mean.data(), cols);
            read_doubles(in, bn.running_var.data(), cols);
            l.batch_norm = std::move(bn);
        }
        net.layers.push_back(std::move(l));
    }
    net.validate();
    return net;
}

}  // namespace qgars::nn
