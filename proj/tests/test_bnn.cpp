#include "ginnbo/bnn.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace bnn = ginnbo::bnn;
using ginnbo::Rng;
using ginnbo::testing::central_difference;
using ginnbo::testing::relative_error;

namespace {

constexpr double kHalfLog2Pi = 0.918938533204672741780;

bnn::NetworkParams random_params(const bnn::Architecture& arch, Rng& rng, double scale = 0.8) {
    std::vector<double> v(arch.parameter_count());
    for (double& x : v) x = rng.uniform(-scale, scale);
    v.back() = rng.uniform(-1.0, 0.5);
    return bnn::NetworkParams(arch, v);
}

// Straight-line MLP: value and input-gradient by explicit loops.
struct Reference {
    double value;
    std::vector<double> input_gradient;
};

Reference reference_mlp(const bnn::NetworkParams& p, std::span<const double> x) {
    const auto layers = p.layers();
    std::vector<std::vector<double>> acts{std::vector<double>(x.begin(), x.end())};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        std::vector<double> z(L.fan_out);
        for (std::size_t o = 0; o < L.fan_out; ++o) {
            double acc = L.biases[o];
            for (std::size_t i = 0; i < L.fan_in; ++i) acc += L.weights[o * L.fan_in + i] * acts.back()[i];
            z[o] = l + 1 < layers.size() ? std::tanh(acc) : acc;
        }
        acts.push_back(z);
    }
    // Backprop d out / d x for the first output.
    std::vector<double> delta(layers.back().fan_out, 0.0);
    delta[0] = 1.0;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& L = layers[l];
        if (l + 1 < layers.size()) {
            for (std::size_t o = 0; o < L.fan_out; ++o) delta[o] *= 1.0 - acts[l + 1][o] * acts[l + 1][o];
        }
        std::vector<double> prev(L.fan_in, 0.0);
        for (std::size_t o = 0; o < L.fan_out; ++o)
            for (std::size_t i = 0; i < L.fan_in; ++i) prev[i] += L.weights[o * L.fan_in + i] * delta[o];
        delta = prev;
    }
    return {acts.back()[0], delta};
}

bnn::Batch random_batch(Rng& rng, std::size_t rows, std::size_t dim, bool gradients = true) {
    bnn::Batch b{dim, {}, {}, {}};
    for (std::size_t i = 0; i < rows * dim; ++i) b.x.push_back(rng.uniform(-1, 1));
    for (std::size_t i = 0; i < rows; ++i) b.y.push_back(rng.uniform(-1, 1));
    if (gradients)
        for (std::size_t i = 0; i < rows * dim; ++i) b.gradients.push_back(rng.uniform(-2, 2));
    return b;
}

double reference_value_nll(const bnn::NetworkParams& p, const bnn::Batch& b) {
    const double var = p.noise_var();
    double acc = 0.0;
    for (std::size_t r = 0; r < b.rows(); ++r) {
        const double res = b.y[r] - reference_mlp(p, std::span(b.x).subspan(r * b.dim, b.dim)).value;
        acc += res * res / (2.0 * var) + 0.5 * std::log(2.0 * M_PI * var);
    }
    return acc / static_cast<double>(b.rows());
}

double reference_gradient_nll(const bnn::NetworkParams& p, const bnn::Batch& b) {
    const double var = p.noise_var();
    double acc = 0.0;
    for (std::size_t r = 0; r < b.rows(); ++r) {
        const auto g = reference_mlp(p, std::span(b.x).subspan(r * b.dim, b.dim)).input_gradient;
        double sq = 0.0;
        for (std::size_t j = 0; j < b.dim; ++j) sq += std::pow(b.gradients[r * b.dim + j] - g[j], 2);
        acc += sq / (2.0 * var) + 0.5 * std::log(2.0 * M_PI * var);
    }
    return acc / static_cast<double>(b.rows());
}

bnn::Architecture arch(std::size_t d, std::size_t layers, std::size_t width, std::size_t outputs = 1) {
    return bnn::Architecture{d, layers, width, outputs};
}

// Network whose output is the constant `bias` (all weights zero).
bnn::NetworkParams constant_network(const bnn::Architecture& a, double bias, double log_noise_var) {
    std::vector<double> v(a.parameter_count(), 0.0);
    v[a.weight_count() - 1] = bias;
    v.back() = log_noise_var;
    return bnn::NetworkParams(a, v);
}

}  // namespace

TEST(Architecture, DefaultsAndCounts) {
    const bnn::Architecture a;
    EXPECT_EQ(a.hidden_layers, 5u);
    EXPECT_EQ(a.nodes_per_layer, 80u);
    const auto b = arch(3, 2, 4);
    EXPECT_EQ(b.parameter_count(), (3 * 4 + 4) + (4 * 4 + 4) + (4 + 1) + 1u);
}

TEST(NetworkParams, FlattenUnflattenRoundTrip) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = arch(1 + rng.index(5), rng.index(4), 1 + rng.index(9), 1 + rng.index(3));
        const auto p = random_params(a, rng);
        const auto layers = p.layers();
        EXPECT_EQ(bnn::NetworkParams::from_layers(a, layers, p.log_noise_var()), p);
    }
}

TEST(NetworkParams, NoiseVarianceAlwaysPositiveAndSizeChecked) {
    Rng rng(2);
    const auto a = arch(2, 1, 3);
    auto p = bnn::NetworkParams::initialize(a, rng);
    EXPECT_NEAR(p.noise_var(), 1e-2, 1e-15);
    p.values().back() = -700.0;
    EXPECT_GT(p.noise_var(), 0.0);
    EXPECT_THROW(bnn::NetworkParams(a, std::vector<double>(3)), std::invalid_argument);
}

TEST(Forward, ZeroNetworkGivesZero) {
    const auto a = arch(3, 2, 5);
    const bnn::NetworkParams p(a, std::vector<double>(a.parameter_count(), 0.0));
    const std::vector<double> x{0.3, -2.0, 7.0};
    EXPECT_EQ(bnn::forward(p, x), 0.0);
}

TEST(Forward, BiasOnlyNetworkGivesFinalBias) {
    const auto a = arch(2, 3, 4);
    const auto p = constant_network(a, 1.75, 0.0);
    Rng rng(3);
    for (int i = 0; i < 5; ++i) {
        const std::vector<double> x{rng.uniform(-5, 5), rng.uniform(-5, 5)};
        EXPECT_EQ(bnn::forward(p, x), 1.75);
    }
}

TEST(Forward, MatchesStraightLineImplementation) {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = arch(1 + rng.index(4), 1 + rng.index(3), 2 + rng.index(7));
        const auto p = random_params(a, rng);
        std::vector<double> x(a.input_dim);
        for (double& v : x) v = rng.uniform(-1, 1);
        EXPECT_NEAR(bnn::forward(p, x), reference_mlp(p, x).value, 1e-12);
    }
}

TEST(Forward, DimensionMismatchThrows) {
    const auto a = arch(2, 1, 3);
    const bnn::NetworkParams p(a, std::vector<double>(a.parameter_count(), 0.0));
    const std::vector<double> x{1.0};
    EXPECT_THROW(bnn::forward(p, x), std::invalid_argument);
}

TEST(LossFunction, ZeroResidualUnitVariance) {
    const auto a = arch(1, 1, 2);
    const auto p = constant_network(a, 0.4, 0.0);
    const bnn::Batch b{1, {0.1}, {0.4}, {}};
    EXPECT_NEAR(bnn::loss_function(p, b), kHalfLog2Pi, 1e-15);
}

TEST(LossFunction, UnitResidualUnitVariance) {
    const auto a = arch(1, 1, 2);
    const auto p = constant_network(a, 0.0, 0.0);
    const bnn::Batch b{1, {0.1}, {1.0}, {}};
    EXPECT_NEAR(bnn::loss_function(p, b), 0.5 + kHalfLog2Pi, 1e-15);
}

TEST(LossFunction, MatchesStraightLineOracle) {
    Rng rng(5);
    const auto a = arch(3, 2, 6);
    const auto p = random_params(a, rng);
    const auto b = random_batch(rng, 4, 3, false);
    EXPECT_NEAR(bnn::loss_function(p, b), reference_value_nll(p, b), 1e-12);
}

TEST(LossGradientTerm, ExactMatchUnitVariance) {
    // Zero network: input-gradient is exactly zero.
    const auto a = arch(2, 1, 3);
    const auto p = constant_network(a, 0.0, 0.0);
    const bnn::Batch b{2, {0.1, 0.2}, {0.0}, {0.0, 0.0}};
    EXPECT_NEAR(bnn::loss_gradient_term(p, b), kHalfLog2Pi, 1e-15);
}

TEST(LossGradientTerm, UnitResidualsInTwoDimensions) {
    const auto a = arch(2, 1, 3);
    const auto p = constant_network(a, 0.0, 0.0);
    const bnn::Batch b{2, {0.1, 0.2}, {0.0}, {1.0, 1.0}};
    EXPECT_NEAR(bnn::loss_gradient_term(p, b), 1.0 + kHalfLog2Pi, 1e-15);
}

TEST(LossGradientTerm, MatchesStraightLineOracle) {
    Rng rng(6);
    const auto a = arch(2, 2, 5);
    const auto p = random_params(a, rng);
    const auto b = random_batch(rng, 3, 2);
    EXPECT_NEAR(bnn::loss_gradient_term(p, b), reference_gradient_nll(p, b), 1e-12);
}

TEST(LossGradientTerm, MissingGradientsIsAnError) {
    const auto a = arch(1, 1, 2);
    const auto p = constant_network(a, 0.0, 0.0);
    const bnn::Batch b{1, {0.1}, {1.0}, {}};
    EXPECT_THROW(bnn::loss_gradient_term(p, b), std::invalid_argument);
    EXPECT_THROW(bnn::total_loss(p, b, 1.0), std::invalid_argument);
    EXPECT_NO_THROW(bnn::total_loss(p, b, 0.0));
}

TEST(TotalLoss, ComposesTermsAndIsAffineInGradientWeight) {
    Rng rng(7);
    const auto a = arch(2, 2, 4);
    const auto p = random_params(a, rng);
    const auto b = random_batch(rng, 5, 2);
    const bnn::PriorConfig prior;

    double weights_sq = 0.0;
    for (double w : p.weights_and_biases()) weights_sq += w * w;
    const double rho_off = p.log_noise_var() - std::log(1e-2);
    const double prior_value = 0.5 * prior.weight_decay * weights_sq + 0.5 * rho_off * rho_off;

    const double lf = bnn::loss_function(p, b);
    const double lg = bnn::loss_gradient_term(p, b);
    const double l0 = bnn::total_loss(p, b, 0.0);
    const double l1 = bnn::total_loss(p, b, 1.0);
    const double l2 = bnn::total_loss(p, b, 2.0);
    EXPECT_NEAR(l0, lf + prior_value, 1e-12);
    EXPECT_NEAR(l1, lf + lg + prior_value, 1e-12);
    EXPECT_NEAR(l2 - l0, 2.0 * (l1 - l0), 1e-12);
    EXPECT_THROW(bnn::total_loss(p, b, -0.5), std::invalid_argument);
}

// Parameter gradients of the total loss, with and without the gradient term.
TEST(TotalLoss, ParameterGradientMatchesFiniteDifferences) {
    Rng rng(8);
    for (double lambda : {0.0, 1.0}) {
        SCOPED_TRACE(lambda);
        const auto a = arch(2, 2, 6);
        const auto p = random_params(a, rng, 0.6);
        const auto b = random_batch(rng, 4, 2);
        bnn::LossGraph graph(p, b, {.gradient_weight = lambda, .data_scale = 1.0, .with_potential_gradient = true});
        std::vector<double> analytic(a.parameter_count());
        graph.potential_gradient(analytic);
        auto f = [&](std::span<const double> theta) {
            return bnn::total_loss(bnn::NetworkParams(a, {theta.begin(), theta.end()}), b, lambda);
        };
        EXPECT_LE(relative_error(analytic, central_difference(f, p.values(), 1e-5)), 1e-4);
    }
}

// The gradient NLL alone on a 3-node tanh network with four data points.
TEST(LossGradientTerm, ParameterGradientMatchesFiniteDifferences) {
    Rng rng(9);
    const auto a = arch(1, 1, 3);
    const auto p = random_params(a, rng);
    const auto b = random_batch(rng, 4, 1);
    bnn::LossGraph graph(p, b, {.gradient_weight = 1.0});
    // A standalone graph whose output is exactly L_grad.
    ginnbo::ad::Tape tape;
    const auto net = bnn::NetworkLeaves::record(tape, p);
    auto x = tape.variable(4, 1, b.x);
    auto gx = ginnbo::ad::grad_wrt_inputs(bnn::forward(net, x), x);
    auto loss = bnn::gaussian_nll(tape.constant(4, 1, b.gradients) - gx, net.log_noise_var, 4);
    const auto wrt = net.all();
    const auto grads = ginnbo::ad::grad_wrt_params(loss, wrt);
    std::vector<double> analytic;
    for (auto g : grads) {
        auto v = tape.value(g);
        analytic.insert(analytic.end(), v.begin(), v.end());
    }
    auto f = [&](std::span<const double> theta) {
        return bnn::loss_gradient_term(bnn::NetworkParams(a, {theta.begin(), theta.end()}), b);
    };
    EXPECT_NEAR(tape.scalar_value(loss), graph.gradient_nll(), 1e-13);
    EXPECT_LE(relative_error(analytic, central_difference(f, p.values(), 1e-5)), 1e-4);
}

TEST(LossGraph, ReplayWithNewParamsMatchesFreshGraph) {
    Rng rng(10);
    const auto a = arch(2, 2, 5);
    const auto p1 = random_params(a, rng);
    const auto p2 = random_params(a, rng);
    const auto b1 = random_batch(rng, 3, 2);
    const auto b2 = random_batch(rng, 3, 2);
    const bnn::LossGraph::Options opts{.gradient_weight = 1.0, .data_scale = 7.0, .with_potential_gradient = true};
    bnn::LossGraph graph(p1, b1, opts);
    graph.set_params(p2.values());
    graph.set_batch(b2);
    graph.replay();
    bnn::LossGraph fresh(p2, b2, opts);
    EXPECT_EQ(graph.potential(), fresh.potential());
    std::vector<double> g1(a.parameter_count()), g2(a.parameter_count());
    graph.potential_gradient(g1);
    fresh.potential_gradient(g2);
    EXPECT_EQ(g1, g2);
}

TEST(Predict, SingleSampleVarianceIsNoiseVariance) {
    Rng rng(11);
    const auto a = arch(2, 2, 4);
    const auto p = random_params(a, rng);
    const bnn::PosteriorEnsemble e{a, {p}, bnn::Normalization::unit(2)};
    const std::vector<double> x{0.2, -0.4};
    const auto pred = bnn::predict(e, x);
    EXPECT_EQ(pred.variance, p.noise_var());
    EXPECT_NEAR(pred.mean, bnn::forward(p, x), 1e-14);
    const auto ref = reference_mlp(p, x);
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_NEAR(pred.grad_mean[j], ref.input_gradient[j], 1e-13);
        EXPECT_EQ(pred.grad_variance[j], p.noise_var());
        EXPECT_EQ(pred.variance_gradient[j], 0.0);
    }
}

TEST(Predict, TwoSamplePopulationVariance) {
    const auto a = arch(1, 1, 2);
    const double no_noise = -std::numeric_limits<double>::infinity();
    const bnn::PosteriorEnsemble e{a, {constant_network(a, 1.0, no_noise), constant_network(a, 3.0, no_noise)},
                                   bnn::Normalization::unit(1)};
    const std::vector<double> x{0.0};
    const auto pred = bnn::predict(e, x);
    EXPECT_DOUBLE_EQ(pred.mean, 2.0);
    EXPECT_DOUBLE_EQ(pred.variance, 1.0);
}

TEST(Predict, VarianceGradientMatchesFiniteDifferences) {
    Rng rng(12);
    const auto a = arch(2, 2, 4);
    bnn::PosteriorEnsemble e{a, {}, bnn::Normalization{{-2.0, 0.0}, {2.0, 5.0}, 1.5, 2.5}};
    for (int i = 0; i < 6; ++i) e.samples.push_back(random_params(a, rng));
    const std::vector<double> x{0.7, 1.3};
    const auto pred = bnn::predict(e, x);
    auto var = [&](std::span<const double> p) { return bnn::predict(e, p).variance; };
    auto mean = [&](std::span<const double> p) { return bnn::predict(e, p).mean; };
    EXPECT_LE(relative_error(pred.variance_gradient, central_difference(var, x, 1e-6)), 1e-6);
    EXPECT_LE(relative_error(pred.grad_mean, central_difference(mean, x, 1e-6)), 1e-6);
    EXPECT_GE(pred.variance, e.mean_noise_var() * 2.5 * 2.5);
}

TEST(Predict, EmptyEnsembleThrows) {
    const bnn::PosteriorEnsemble e{arch(1, 1, 2), {}, bnn::Normalization::unit(1)};
    const std::vector<double> x{0.0};
    EXPECT_THROW(bnn::predict(e, x), std::invalid_argument);
}

TEST(Predict, IndependentHeadsReportHeadGradients) {
    const auto a = arch(1, 1, 2, 2);
    // Output 0 is constant 0.5, output 1 (the "derivative head") is constant -3.
    std::vector<double> v(a.parameter_count(), 0.0);
    v[a.weight_count() - 2] = 0.5;
    v[a.weight_count() - 1] = -3.0;
    const bnn::PosteriorEnsemble e{a, {bnn::NetworkParams(a, v)}, bnn::Normalization::unit(1),
                                   bnn::GradientSource::Heads};
    const std::vector<double> x{0.2};
    const auto pred = bnn::predict(e, x);
    EXPECT_DOUBLE_EQ(pred.mean, 0.5);
    EXPECT_DOUBLE_EQ(pred.grad_mean[0], -3.0);
}

TEST(Serialization, JsonRoundTrip) {
    Rng rng(13);
    const auto a = arch(3, 2, 4);
    bnn::PosteriorEnsemble e{a, {}, bnn::Normalization{{0, 0, 0}, {1, 2, 3}, -0.25, 4.0}};
    for (int i = 0; i < 3; ++i) e.samples.push_back(random_params(a, rng));
    const auto text = bnn::to_json(e).dump();
    EXPECT_EQ(bnn::ensemble_from_json(nlohmann::json::parse(text)), e);
}
