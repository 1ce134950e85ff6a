#include "qgars/classify.hpp"

#include "qgars/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace qgars {

const char* to_string(ClassifierKind k) { return k == ClassifierKind::linear ? "linear" : "mlp"; }

ClassifierKind classifier_kind_from_string(const std::string& name) {
    if (name == "linear") return ClassifierKind::linear;
    if (name == "mlp") return ClassifierKind::mlp;
    fail(ErrorCode::invalid_config, "unknown classifier '" + name + "' (expected linear or mlp)");
}

Standardizer fit_standardizer(const Matrix& x) {
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.inv_std.resize(x.cols());
    const double n = static_cast<double>(std::max<Eigen::Index>(x.rows(), 1));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double var = (x.col(j).array() - s.mean(j)).square().sum() / n;
        s.inv_std(j) = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
    if (x.cols() != mean.size()) fail(ErrorCode::shape, "standardizer fitted on " + std::to_string(mean.size()) + " features");
    return (x.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose().array();
}

namespace {

void check_labels(const Matrix& features, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
        fail(ErrorCode::shape, "classifier: " + std::to_string(features.rows()) + " samples but " +
                                   std::to_string(labels.size()) + " labels");
    }
    for (int y : labels)
        if (y != 0 && y != 1) fail(ErrorCode::invalid_input, "classifier labels must be 0 or 1, got " + std::to_string(y));
    if (features.rows() < 1) fail(ErrorCode::insufficient_data, "classifier needs at least one sample");
}

Classifier fit(const Matrix& features, std::span<const int> labels, const ClassifierConfig& config,
               std::vector<nn::LayerSpec> specs, ClassifierKind kind) {
    check_labels(features, labels);
    if (config.epochs < 1 || config.batch_size < 1) fail(ErrorCode::invalid_config, "classifier epochs and batch size must be positive");
    Rng rng(config.seed);
    Classifier clf;
    clf.kind = kind;
    clf.network = nn::Network(static_cast<int>(features.cols()), specs, rng);
    Matrix x = features;
    if (config.standardize) {
        clf.standardizer = fit_standardizer(features);
        x = clf.standardizer->apply(features);
    }
    nn::AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    adam.weight_decay = config.weight_decay;
    auto opt = nn::make_optimizer(clf.network, adam);

    const auto n = static_cast<std::size_t>(x.rows());
    const auto b = std::min(n, static_cast<std::size_t>(config.batch_size));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < n; start += b) {
            const std::size_t end = std::min(n, start + b);
            Matrix xb(static_cast<Eigen::Index>(end - start), x.cols());
            std::vector<int> yb(end - start);
            for (std::size_t i = start; i < end; ++i) {
                xb.row(static_cast<Eigen::Index>(i - start)) = x.row(static_cast<Eigen::Index>(order[i]));
                yb[i - start] = labels[order[i]];
            }
            const auto rec = nn::forward(clf.network, xb, nn::Mode::train, &rng);
            const auto loss = nn::cross_entropy_loss(rec.output, yb);
            nn::adam_step(clf.network, nn::backward(clf.network, rec, loss.grad), opt);
            sum += loss.value;
            ++batches;
        }
        const double mean = sum / batches;
        if (!std::isfinite(mean)) fail(ErrorCode::training, "classifier diverged at epoch " + std::to_string(epoch));
        clf.loss_trace.push_back(mean);
    }
    return clf;
}

}  // namespace

Classifier linear_train(const Matrix& features, std::span<const int> labels, const ClassifierConfig& config) {
    return fit(features, labels, config, {nn::LayerSpec{2, nn::Activation::identity, false, 0.0}}, ClassifierKind::linear);
}

Classifier mlp_train(const Matrix& features, std::span<const int> labels, const ClassifierConfig& config) {
    std::vector<nn::LayerSpec> specs;
    for (int h : config.mlp_hidden) specs.push_back({h, nn::Activation::relu, false, 0.0});
    specs.push_back({2, nn::Activation::identity, false, 0.0});
    return fit(features, labels, config, std::move(specs), ClassifierKind::mlp);
}

Classifier train_classifier(const Matrix& features, std::span<const int> labels, const ClassifierConfig& config) {
    return config.kind == ClassifierKind::linear ? linear_train(features, labels, config)
                                                 : mlp_train(features, labels, config);
}

std::vector<int> predict_labels(const Classifier& clf, const Matrix& features) {
    const Matrix logits = nn::predict(clf.network, clf.standardizer ? clf.standardizer->apply(features) : features);
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = logits(i, 1) > logits(i, 0) ? 1 : 0;
    return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size()) fail(ErrorCode::shape, "accuracy: prediction and label counts differ");
    if (labels.empty()) fail(ErrorCode::insufficient_data, "accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
    return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate(const Classifier& clf, const Matrix& features, std::span<const int> labels) {
    const auto pred = predict_labels(clf, features);
    return accuracy(pred, labels);
}

EvalReport aggregate_seeds(std::span<const double> accuracies, std::string method, int n_train, int n_test) {
    if (accuracies.size() < 2) {
        fail(ErrorCode::insufficient_data, "standard deviation needs at least 2 seeds, got " + std::to_string(accuracies.size()));
    }
    EvalReport r;
    r.method = std::move(method);
    r.n_train = n_train;
    r.n_test = n_test;
    r.accuracies.assign(accuracies.begin(), accuracies.end());
    const double n = static_cast<double>(accuracies.size());
    r.mean = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : accuracies) ss += (a - r.mean) * (a - r.mean);
    r.std = std::sqrt(ss / (n - 1.0));
    r.max = *std::max_element(accuracies.begin(), accuracies.end());
    return r;
}

namespace {

std::string fixed2(double v) {
    std::array<char, 64> buf{};
    std::snprintf(buf.data(), buf.size(), "%.2f", v);
    return buf.data();
}

}  // namespace

std::string render_table_csv(std::span<const EvalReport> rows) {
    std::string out = "method,mean,std,max,seeds,n_train,n_test\n";
    for (const auto& r : rows) {
        out += r.method + "," + fixed2(r.mean) + "," + fixed2(r.std) + "," + fixed2(r.max) + "," +
               std::to_string(r.accuracies.size()) + "," + std::to_string(r.n_train) + "," + std::to_string(r.n_test) + "\n";
    }
    return out;
}

std::string render_table_text(std::span<const EvalReport> rows) {
    std::size_t width = std::string("Method").size();
    for (const auto& r : rows) width = std::max(width, r.method.size());
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(w, s.size()), ' ');
        return s;
    };
    std::string out = pad("Method", width) + "  Accuracy (%)      Max\n";
    out += std::string(width, '-') + "  ----------------  ------\n";
    for (const auto& r : rows) {
        out += pad(r.method, width) + "  " + pad(fixed2(r.mean) + " +/- " + fixed2(r.std), 16) + "  " + fixed2(r.max) + "\n";
    }
    return out;
}

}  // namespace qgars
