#include "doctest.h"

#include "qgars/error.hpp"
#include "qgars/nn.hpp"
#include "qgars/rng.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

using namespace qgars;
using namespace qgars::nn;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// Every trainable scalar in a fixed order, paired with the matching
// gradient entry, so finite differences can walk them uniformly.
void for_each_param(Network& net, Gradients& g, const std::function<void(double&, double)>& fn) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        auto& lg = g.layers[l];
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) fn(layer.weight.data()[i], lg.weight.data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) fn(layer.bias(i), lg.bias(i));
        if (layer.batch_norm) {
            for (Eigen::Index i = 0; i < layer.batch_norm->scale.size(); ++i) fn(layer.batch_norm->scale(i), lg.bn_scale(i));
            for (Eigen::Index i = 0; i < layer.batch_norm->shift.size(); ++i) fn(layer.batch_norm->shift(i), lg.bn_shift(i));
        }
    }
}

// Loss of a train-mode pass without dropout. Running statistics are
// restored afterwards so repeated probes see the same network.
double probe_loss(Network& net, const Matrix& x, const Matrix& target) {
    Network copy = net;
    const auto rec = forward(copy, x, Mode::train, nullptr);
    return mse_loss(rec.output, target).value;
}

double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("identity layer passes input through") {
    Rng rng(1);
    const std::array<LayerSpec, 1> spec{LayerSpec{3, Activation::identity, false, 0.0}};
    Network net(3, spec, rng);
    net.layers[0].weight = Matrix::Identity(3, 3);
    net.layers[0].bias.setZero();
    Matrix x(2, 3);
    x << 1, -2, 3, 0.5, 0.25, -7;
    CHECK((predict(net, x) - x).norm() == 0.0);
}

TEST_CASE("dropout rate zero in train mode equals eval mode") {
    Rng rng(2);
    const std::array<LayerSpec, 2> spec{LayerSpec{5, Activation::relu, false, 0.0}, LayerSpec{2, Activation::tanh, false, 0.0}};
    Network net(4, spec, rng);
    const Matrix x = random_matrix(6, 4, rng);
    Rng drop(3);
    const auto train = forward(net, x, Mode::train, &drop);
    CHECK((train.output - predict(net, x)).norm() == 0.0);
}

TEST_CASE("two-layer net matches hand matrix arithmetic") {
    Rng rng(4);
    const std::array<LayerSpec, 2> spec{LayerSpec{2, Activation::relu, false, 0.0},
                                        LayerSpec{1, Activation::sigmoid, false, 0.0}};
    Network net(2, spec, rng);
    net.layers[0].weight << 1.0, -1.0, 0.5, 2.0;
    net.layers[0].bias << 0.1, -0.2;
    net.layers[1].weight << 0.3, -0.7;
    net.layers[1].bias << 0.05;
    Matrix x(1, 2);
    x << 2.0, 1.0;
    // hidden pre = [2*1 + 1*0.5 + 0.1, 2*-1 + 1*2 - 0.2] = [2.6, -0.2] -> relu [2.6, 0]
    // out pre = 2.6*0.3 + 0.05 = 0.83
    const double expected = 1.0 / (1.0 + std::exp(-0.83));
    CHECK(predict(net, x)(0, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("forward rejects a batch of the wrong width") {
    Rng rng(5);
    const std::array<LayerSpec, 1> spec{LayerSpec{2, Activation::identity, false, 0.0}};
    Network net(3, spec, rng);
    try {
        (void)predict(net, Matrix::Zero(1, 4));
        FAIL("expected shape error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::shape);
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("backward matches central finite differences on random nets") {
    const Activation acts[] = {Activation::relu, Activation::sigmoid, Activation::tanh, Activation::identity};
    for (int trial = 0; trial < 20; ++trial) {
        CAPTURE(trial);
        Rng rng(100 + static_cast<std::uint64_t>(trial));
        const int in = 2 + static_cast<int>(rng.below(4));
        const int depth = 1 + static_cast<int>(rng.below(3));
        std::vector<LayerSpec> specs;
        for (int l = 0; l < depth; ++l) {
            LayerSpec s;
            s.out = 2 + static_cast<int>(rng.below(5));
            s.activation = acts[rng.below(4)];
            s.batch_norm = rng.below(2) == 0;
            specs.push_back(s);
        }
        Network net(in, specs, rng);
        // Perturb batch-norm affine parameters away from their identity init.
        for (auto& layer : net.layers) {
            if (layer.batch_norm) {
                for (Eigen::Index i = 0; i < layer.batch_norm->scale.size(); ++i) {
                    layer.batch_norm->scale(i) = 1.0 + 0.3 * rng.normal();
                    layer.batch_norm->shift(i) = 0.3 * rng.normal();
                }
            }
            layer.bias = 0.1 * Vector::NullaryExpr(layer.bias.size(), [&] { return rng.normal(); });
        }
        const Matrix x = random_matrix(5, in, rng);
        const Matrix target = random_matrix(5, net.output_dim(), rng);

        Network work = net;
        const auto rec = forward(work, x, Mode::train, nullptr);
        const auto loss = mse_loss(rec.output, target);
        auto grads = backward(net, rec, loss.grad);

        const double h = 1e-4;
        int checked = 0;
        for_each_param(net, grads, [&](double& p, double g) {
            const double orig = p;
            p = orig + h;
            const double up = probe_loss(net, x, target);
            p = orig - h;
            const double down = probe_loss(net, x, target);
            p = orig;
            const double fd = (up - down) / (2 * h);
            CHECK(relative_error(fd, g) < 1e-4);
            ++checked;
        });
        CHECK(checked > 0);

        // Input gradient as well.
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            Matrix xp = x;
            Matrix xm = x;
            xp.data()[i] += h;
            xm.data()[i] -= h;
            const double fd = (probe_loss(net, xp, target) - probe_loss(net, xm, target)) / (2 * h);
            CHECK(relative_error(fd, grads.input.data()[i]) < 1e-4);
        }
    }
}

TEST_CASE("eval-mode batch norm backward matches finite differences") {
    Rng rng(7);
    const std::array<LayerSpec, 2> spec{LayerSpec{4, Activation::tanh, true, 0.0},
                                        LayerSpec{3, Activation::identity, true, 0.0}};
    Network net(3, spec, rng);
    for (auto& layer : net.layers) {
        layer.batch_norm->running_mean = Vector::NullaryExpr(layer.out_dim(), [&] { return 0.2 * rng.normal(); });
        layer.batch_norm->running_var = Vector::NullaryExpr(layer.out_dim(), [&] { return 0.5 + rng.uniform(); });
    }
    const Matrix x = random_matrix(4, 3, rng);
    const Matrix target = random_matrix(4, 3, rng);
    const auto rec = forward_eval(net, x);
    auto grads = backward(net, rec, mse_loss(rec.output, target).grad);
    const double h = 1e-4;
    auto loss_of = [&](const Network& n) { return mse_loss(predict(n, x), target).value; };
    for_each_param(net, grads, [&](double& p, double g) {
        const double orig = p;
        p = orig + h;
        const double up = loss_of(net);
        p = orig - h;
        const double down = loss_of(net);
        p = orig;
        CHECK(relative_error((up - down) / (2 * h), g) < 1e-4);
    });
}

TEST_CASE("batch norm eval output is an affine map of the input") {
    Rng rng(8);
    const std::array<LayerSpec, 1> spec{LayerSpec{3, Activation::identity, true, 0.0}};
    Network net(3, spec, rng);
    auto& bn = *net.layers[0].batch_norm;
    bn.running_mean << 0.1, -0.2, 0.3;
    bn.running_var << 2.0, 0.5, 1.0;
    bn.scale << 1.5, -0.5, 2.0;
    bn.shift << 0.0, 1.0, -1.0;
    const Matrix x = random_matrix(5, 3, rng);
    const Matrix y = predict(net, x);
    const Matrix lin = (x * net.layers[0].weight).rowwise() + net.layers[0].bias.transpose();
    for (Eigen::Index i = 0; i < 5; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) {
            const double expect = bn.scale(j) * (lin(i, j) - bn.running_mean(j)) / std::sqrt(bn.running_var(j) + bn.epsilon) +
                                  bn.shift(j);
            CHECK(y(i, j) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("train-mode batch norm updates running statistics") {
    Rng rng(9);
    const std::array<LayerSpec, 1> spec{LayerSpec{2, Activation::identity, true, 0.0}};
    Network net(2, spec, rng);
    net.layers[0].weight = Matrix::Identity(2, 2);
    Matrix x(4, 2);
    x << 1, 0, 2, 0, 3, 0, 4, 8;
    (void)forward(net, x, Mode::train, nullptr);
    const auto& bn = *net.layers[0].batch_norm;
    // batch mean (2.5, 2), unbiased variance (5/3, 16)
    CHECK(bn.running_mean(0) == doctest::Approx(0.1 * 2.5));
    CHECK(bn.running_mean(1) == doctest::Approx(0.1 * 2.0));
    CHECK(bn.running_var(0) == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
    CHECK(bn.running_var(1) == doctest::Approx(0.9 + 0.1 * 16.0));
}

TEST_CASE("dropout masks are inverted and seeded") {
    Rng rng(10);
    const std::array<LayerSpec, 1> spec{LayerSpec{200, Activation::identity, false, 0.5}};
    Network net(1, spec, rng);
    net.layers[0].weight.setOnes();
    const Matrix x = Matrix::Ones(10, 1);
    Rng a(11);
    Rng b(11);
    const auto ra = forward(net, x, Mode::train, &a);
    const auto rb = forward(net, x, Mode::train, &b);
    CHECK((ra.output - rb.output).norm() == 0.0);
    int kept = 0;
    for (Eigen::Index i = 0; i < ra.output.size(); ++i) {
        const double v = ra.output.data()[i];
        CHECK((v == 0.0 || v == doctest::Approx(2.0)));
        kept += v != 0.0;
    }
    CHECK(kept > 800);
    CHECK(kept < 1200);
    CHECK_THROWS_AS((void)forward(net, x, Mode::train, nullptr), Error);
}

TEST_CASE("linear MSE gradient is 2 (y_hat - y) x^T") {
    Rng rng(12);
    const std::array<LayerSpec, 1> spec{LayerSpec{3, Activation::identity, false, 0.0}};
    Network net(4, spec, rng);
    const Matrix x = random_matrix(1, 4, rng);
    const Matrix y = random_matrix(1, 3, rng);
    const auto rec = forward(net, x, Mode::train, nullptr);
    const auto g = backward(net, rec, mse_loss(rec.output, y).grad);
    const Matrix resid = rec.output - y;
    const Matrix expected = 2.0 * x.transpose() * resid;
    CHECK((g.layers[0].weight - expected).norm() < 1e-14);
    CHECK((g.layers[0].bias - 2.0 * resid.row(0).transpose()).norm() < 1e-14);
}

TEST_CASE("zero loss gradient gives zero parameter gradients") {
    Rng rng(13);
    const std::array<LayerSpec, 2> spec{LayerSpec{6, Activation::relu, true, 0.0}, LayerSpec{2, Activation::identity, false, 0.0}};
    Network net(3, spec, rng);
    const auto rec = forward(net, random_matrix(4, 3, rng), Mode::train, nullptr);
    const auto g = backward(net, rec, Matrix::Zero(4, 2));
    for (const auto& l : g.layers) {
        CHECK(l.weight.norm() == 0.0);
        CHECK(l.bias.norm() == 0.0);
    }
    CHECK(g.input.norm() == 0.0);
}

TEST_CASE("backward without a forward record is a state error") {
    Rng rng(14);
    const std::array<LayerSpec, 1> spec{LayerSpec{1, Activation::identity, false, 0.0}};
    Network net(1, spec, rng);
    try {
        (void)backward(net, ForwardRecord{}, Matrix::Zero(1, 1));
        FAIL("expected state error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::state);
    }
}

TEST_CASE("mse loss values and finite differences") {
    Matrix p(2, 3);
    p << 1, 2, 3, 4, 5, 6;
    CHECK(mse_loss(p, p).value == 0.0);
    const Matrix q = p.array() - 1.0;
    CHECK(mse_loss(p, q).value == doctest::Approx(3.0));  // d = 3 per row, mean over 2 rows
    CHECK_THROWS_AS((void)mse_loss(p, Matrix::Zero(2, 2)), Error);

    Rng rng(15);
    const Matrix a = random_matrix(3, 4, rng);
    const Matrix b = random_matrix(3, 4, rng);
    const auto l = mse_loss(a, b);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        Matrix ap = a;
        Matrix am = a;
        ap.data()[i] += 1e-5;
        am.data()[i] -= 1e-5;
        const double fd = (mse_loss(ap, b).value - mse_loss(am, b).value) / 2e-5;
        CHECK(relative_error(fd, l.grad.data()[i]) < 1e-6);
    }
}

TEST_CASE("cross entropy") {
    const std::vector<int> zero{0};
    CHECK(cross_entropy_loss(Matrix::Zero(1, 2), zero).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    Matrix sat(1, 2);
    sat << 20.0, 0.0;
    CHECK(cross_entropy_loss(sat, zero).value < 1e-8);

    Rng rng(16);
    const Matrix logits = random_matrix(5, 2, rng, 2.0);
    const std::vector<int> labels{0, 1, 1, 0, 1};
    const auto l = cross_entropy_loss(logits, labels);
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        Matrix lp = logits;
        Matrix lm = logits;
        lp.data()[i] += 1e-5;
        lm.data()[i] -= 1e-5;
        const double fd = (cross_entropy_loss(lp, labels).value - cross_entropy_loss(lm, labels).value) / 2e-5;
        CHECK(relative_error(fd, l.grad.data()[i]) < 1e-6);
    }
    const std::vector<int> bad{2};
    CHECK_THROWS_AS((void)cross_entropy_loss(Matrix::Zero(1, 2), bad), Error);
    CHECK_THROWS_AS((void)cross_entropy_loss(Matrix::Zero(1, 3), zero), Error);
}

TEST_CASE("adam single step, zero gradient and weight decay") {
    Rng rng(17);
    const std::array<LayerSpec, 1> spec{LayerSpec{2, Activation::identity, false, 0.0}};
    Network net(2, spec, rng);
    const Network start = net;

    Gradients g;
    g.layers.resize(1);
    g.layers[0].weight = Matrix::Zero(2, 2);
    g.layers[0].bias = Vector::Zero(2);

    AdamConfig cfg;
    cfg.learning_rate = 0.01;
    auto opt = make_optimizer(net, cfg);
    adam_step(net, g, opt);
    CHECK((net.layers[0].weight - start.layers[0].weight).norm() == 0.0);
    CHECK((net.layers[0].bias - start.layers[0].bias).norm() == 0.0);

    // First step: m_hat = g, v_hat = g^2, update = -lr g / (|g| + eps).
    net = start;
    opt = make_optimizer(net, cfg);
    g.layers[0].weight << 0.5, -2.0, 1e-3, 0.0;
    g.layers[0].bias << 3.0, -0.25;
    adam_step(net, g, opt);
    for (Eigen::Index i = 0; i < 4; ++i) {
        const double gi = g.layers[0].weight.data()[i];
        const double expect = start.layers[0].weight.data()[i] - 0.01 * gi / (std::abs(gi) + 1e-8);
        CHECK(net.layers[0].weight.data()[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    // Weight decay alone shrinks by (1 - lr * wd).
    net = start;
    cfg.weight_decay = 0.1;
    opt = make_optimizer(net, cfg);
    g.layers[0].weight.setZero();
    g.layers[0].bias.setZero();
    adam_step(net, g, opt);
    CHECK((net.layers[0].weight - (1.0 - 0.01 * 0.1) * start.layers[0].weight).norm() < 1e-15);
}

TEST_CASE("parameter counts") {
    Rng rng(18);
    const std::array<LayerSpec, 1> linear{LayerSpec{2, Activation::identity, false, 0.0}};
    CHECK(parameter_count(Network(4768, linear, rng)) == 9538);
    CHECK(parameter_count(Network(12, linear, rng)) == 26);
    const std::array<LayerSpec, 3> mlp{LayerSpec{100, Activation::relu, false, 0.0},
                                       LayerSpec{100, Activation::relu, false, 0.0},
                                       LayerSpec{2, Activation::identity, false, 0.0}};
    CHECK(parameter_count(Network(12, mlp, rng)) == 11602);
    CHECK(parameter_count(Network(4, mlp, rng)) == 10802);
    const std::array<LayerSpec, 1> one{LayerSpec{1, Activation::identity, false, 0.0}};
    CHECK(parameter_count(Network(1, one, rng)) == 2);
    const std::array<LayerSpec, 1> bn{LayerSpec{3, Activation::relu, true, 0.0}};
    CHECK(parameter_count(Network(2, bn, rng)) == 2 * 3 + 3 + 3 + 3);
}

TEST_CASE("initialisation bounds follow fan-in") {
    Rng rng(19);
    const std::array<LayerSpec, 2> spec{LayerSpec{50, Activation::relu, false, 0.0},
                                        LayerSpec{50, Activation::sigmoid, false, 0.0}};
    Network net(100, spec, rng);
    CHECK(net.layers[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 100));
    CHECK(net.layers[0].weight.cwiseAbs().maxCoeff() > 0.9 * std::sqrt(6.0 / 100));
    CHECK(net.layers[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(3.0 / 50));
    CHECK(net.layers[0].bias.norm() == 0.0);
}

TEST_CASE("checkpoint round trip is exact") {
    Rng rng(20);
    const std::array<LayerSpec, 3> spec{LayerSpec{7, Activation::relu, true, 0.1}, LayerSpec{5, Activation::tanh, false, 0.0},
                                        LayerSpec{2, Activation::sigmoid, true, 0.0}};
    Network net(4, spec, rng);
    net.layers[0].batch_norm->running_var(2) = 3.25;
    const auto path = std::filesystem::temp_directory_path() / "qgars_test_net.bin";
    save_network(path, net);
    const Network back = load_network(path);
    REQUIRE(back.layers.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
        const auto& a = net.layers[l];
        const auto& b = back.layers[l];
        CHECK(a.weight == b.weight);
        CHECK(a.bias == b.bias);
        CHECK(a.activation == b.activation);
        CHECK(a.dropout == b.dropout);
        CHECK(a.batch_norm.has_value() == b.batch_norm.has_value());
        if (a.batch_norm) {
            CHECK(a.batch_norm->scale == b.batch_norm->scale);
            CHECK(a.batch_norm->running_var == b.batch_norm->running_var);
            CHECK(a.batch_norm->momentum == b.batch_norm->momentum);
        }
    }
    {
        std::ofstream junk(path, std::ios::binary | std::ios::trunc);
        junk << "nope";
    }
    CHECK_THROWS_AS((void)load_network(path), Error);
    std::filesystem::remove(path);
}

TEST_CASE("training loss on a tiny set falls monotonically") {
    int monotone = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const std::array<LayerSpec, 2> spec{LayerSpec{8, Activation::tanh, false, 0.0},
                                            LayerSpec{2, Activation::identity, false, 0.0}};
        Network net(3, spec, rng);
        const Matrix x = random_matrix(10, 3, rng);
        const Matrix y = random_matrix(10, 2, rng);
        auto opt = make_optimizer(net, AdamConfig{});
        double prev = 1e300;
        bool ok = true;
        for (int step = 0; step < 100; ++step) {
            const auto rec = forward(net, x, Mode::train, nullptr);
            const auto l = mse_loss(rec.output, y);
            if (l.value > prev + 1e-12) ok = false;
            prev = l.value;
            adam_step(net, backward(net, rec, l.grad), opt);
        }
        monotone += ok;
    }
    CHECK(monotone >= 4);
}
