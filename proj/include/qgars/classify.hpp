#pragma once

#include "qgars/matrix_io.hpp"
#include "qgars/nn.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qgars {

enum class ClassifierKind { linear, mlp };

const char* to_string(ClassifierKind k);
ClassifierKind classifier_kind_from_string(const std::string& name);

struct ClassifierConfig {
    ClassifierKind kind = ClassifierKind::linear;
    std::vector<int> mlp_hidden{100, 100};
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    bool standardize = true;
    std::uint64_t seed = 0;
};

// Per-feature affine map to zero mean and unit variance on the data it was
// fitted on. Constant features keep unit scale.
struct Standardizer {
    Vector mean;
    Vector inv_std;

    Matrix apply(const Matrix& x) const;
};

Standardizer fit_standardizer(const Matrix& x);

struct Classifier {
    ClassifierKind kind = ClassifierKind::linear;
    std::optional<Standardizer> standardizer;
    nn::Network network;
    std::vector<double> loss_trace;  // mean cross-entropy per epoch
};

// Single dense layer in -> 2 trained with cross-entropy and Adam.
Classifier linear_train(const Matrix& features, std::span<const int> labels, const ClassifierConfig& config);
// in -> hidden... -> 2 with relu hidden layers.
Classifier mlp_train(const Matrix& features, std::span<const int> labels, const ClassifierConfig& config);
Classifier train_classifier(const Matrix& features, std::span<const int> labels, const ClassifierConfig& config);

std::vector<int> predict_labels(const Classifier& clf, const Matrix& features);
// Percentage of samples whose argmax prediction matches the label.
double evaluate(const Classifier& clf, const Matrix& features, std::span<const int> labels);
double accuracy(std::span<const int> predicted, std::span<const int> labels);

struct EvalReport {
    std::string method;
    int n_train = 0;
    int n_test = 0;
    std::vector<double> accuracies;  // per seed, percent
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation
    double max = 0.0;
};

// Throws Error(insufficient_data) for fewer than two seeds, where the sample
// deviation is undefined.
EvalReport aggregate_seeds(std::span<const double> accuracies, std::string method = {}, int n_train = 0,
                           int n_test = 0);

// Method rows in the layout of a results table: CSV and aligned text.
std::string render_table_csv(std::span<const EvalReport> rows);
std::string render_table_text(std::span<const EvalReport> rows);

}  // namespace qgars
