#include "ginnbo/acquisition.hpp"
#include "ginnbo/sghmc.hpp"
#include "test_support.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <gtest/gtest.h>

#include <cmath>

namespace acq = ginnbo::acquisition;
namespace bnn = ginnbo::bnn;
namespace sghmc = ginnbo::sghmc;
using ginnbo::Rng;
using ginnbo::testing::central_difference;
using ginnbo::testing::relative_error;

namespace {

bnn::Prediction point(double mean, double variance) { return {mean, variance, {0.0}, {0.0}, {0.0}}; }

bnn::PosteriorEnsemble random_ensemble(std::size_t dim, std::size_t members, std::uint64_t seed) {
    const bnn::Architecture arch{dim, 2, 8, 1};
    Rng rng(seed);
    bnn::PosteriorEnsemble e{arch, {}, {}, bnn::GradientSource::Autodiff};
    for (std::size_t m = 0; m < members; ++m) {
        std::vector<double> v(arch.parameter_count());
        for (double& x : v) x = rng.uniform(-1.0, 1.0);
        v.back() = std::log(1e-3);
        e.samples.emplace_back(arch, v);
    }
    e.normalization = bnn::Normalization{std::vector<double>(dim, -2.0), std::vector<double>(dim, 3.0), 0.4, 1.7};
    return e;
}

// Output -sum_j [tanh(x_j - c_j + s) - tanh(x_j - c_j - s)]: even in each
// x_j - c_j and smallest at x = c.
bnn::PosteriorEnsemble bump_ensemble(const std::vector<double>& centre) {
    const std::size_t d = centre.size();
    const bnn::Architecture arch{d, 1, 2 * d, 1};
    const double s = 0.7;
    bnn::DenseLayer hidden{d, 2 * d, std::vector<double>(2 * d * d, 0.0), std::vector<double>(2 * d)};
    bnn::DenseLayer out{2 * d, 1, std::vector<double>(2 * d), {0.0}};
    for (std::size_t j = 0; j < d; ++j) {
        hidden.weights[(2 * j) * d + j] = 1.0;
        hidden.weights[(2 * j + 1) * d + j] = 1.0;
        hidden.biases[2 * j] = -centre[j] + s;
        hidden.biases[2 * j + 1] = -centre[j] - s;
        out.weights[2 * j] = -1.0;
        out.weights[2 * j + 1] = 1.0;
    }
    const std::vector<bnn::DenseLayer> layers{hidden, out};
    bnn::PosteriorEnsemble e{arch, {bnn::NetworkParams::from_layers(arch, layers, std::log(1e-2))},
                             bnn::Normalization::unit(d), bnn::GradientSource::Autodiff};
    return e;
}

acq::OptimizerConfig box(std::size_t dim, double lo, double hi) {
    acq::OptimizerConfig c;
    c.lower.assign(dim, lo);
    c.upper.assign(dim, hi);
    return c;
}

double reference_log_h(double z) {
    using Big = boost::multiprecision::cpp_bin_float_50;
    const Big zz(z);
    const Big pdf = exp(-zz * zz / 2) / sqrt(2 * boost::math::constants::pi<Big>());
    const Big cdf = erfc(-zz / sqrt(Big(2))) / 2;
    return static_cast<double>(log(pdf + zz * cdf));
}

}  // namespace

TEST(Lcb, ArithmeticExamples) {
    EXPECT_DOUBLE_EQ(acq::lcb(point(1.0, 0.25), 2.0), 0.0);
    EXPECT_DOUBLE_EQ(acq::lcb(point(1.3, 0.7), 0.0), 1.3);
}

TEST(Lcb, StrictlyDecreasingInBeta) {
    const auto e = random_ensemble(2, 4, 3);
    const std::vector<double> x{0.3, -1.1};
    double previous = acq::lcb(e, x, 0.1);
    for (double beta : {0.5, 1.0, 2.0, 4.0}) {
        const double v = acq::lcb(e, x, beta);
        EXPECT_LT(v, previous);
        previous = v;
    }
}

TEST(Lcb, GradientMatchesFiniteDifferences) {
    const auto e = random_ensemble(3, 5, 11);
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> x(3);
        for (double& v : x) v = rng.uniform(-1.5, 2.5);
        const auto analytic = acq::lcb_with_gradient(bnn::predict(e, x), 2.0).gradient;
        const auto fd = central_difference([&](std::span<const double> p) { return acq::lcb(e, p, 2.0); }, x, 1e-6);
        EXPECT_LE(relative_error(analytic, fd), 1e-5);
    }
}

TEST(LogEi, GradientMatchesFiniteDifferences) {
    const auto e = random_ensemble(2, 5, 12);
    Rng rng(5);
    for (double incumbent : {-3.0, 0.0, 2.5}) {
        std::vector<double> x{rng.uniform(-1.5, 2.5), rng.uniform(-1.5, 2.5)};
        const auto analytic = acq::log_ei_with_gradient(bnn::predict(e, x), incumbent).gradient;
        const auto fd =
            central_difference([&](std::span<const double> p) { return acq::log_ei(e, p, incumbent); }, x, 1e-6);
        EXPECT_LE(relative_error(analytic, fd), 1e-5) << "incumbent " << incumbent;
    }
}

TEST(LogEi, ZeroImprovement) {
    for (double sigma : {0.3, 1.0, 4.0}) {
        EXPECT_NEAR(acq::log_ei(point(1.5, sigma * sigma), 1.5), -0.9189385332046727 + std::log(sigma), 1e-14);
    }
}

TEST(LogEi, DeepImprovementGrowsLikeLogZ) {
    for (double mu : {-1e2, -1e4, -1e8}) {
        EXPECT_NEAR(acq::log_ei(point(mu, 1.0), 0.0), std::log(-mu), 1e-9);
    }
}

TEST(LogH, MatchesExtendedPrecision) {
    EXPECT_LE(relative_error(acq::log_h(-10.0), reference_log_h(-10.0)), 1e-6);
    for (double z = -30.0; z <= 30.0; z += 0.37) {
        EXPECT_LE(relative_error(acq::log_h(z), reference_log_h(z), 1e-300), 1e-10) << "z = " << z;
    }
}

TEST(LogH, FiniteAndMonotoneFarIntoTheTail) {
    double previous = -std::numeric_limits<double>::infinity();
    for (double z = -1e4; z <= 40.0; z += (z < -100.0 ? 50.0 : 0.01)) {
        const double v = acq::log_h(z);
        ASSERT_TRUE(std::isfinite(v)) << z;
        ASSERT_GT(v, previous) << z;
        previous = v;
    }
    // Asymptotic branch agrees with the continued fraction at the switch.
    const double jump = acq::log_h(-100.0 + 1e-9) - acq::log_h(-100.0 - 1e-9);
    EXPECT_NEAR(jump, 2e-9 * acq::log_h_derivative(-100.0), 1e-10);
}

TEST(LogH, DerivativeMatchesFiniteDifferences) {
    for (double z : {-500.0, -60.0, -24.0, -5.0, -1.0, -0.3, 0.0, 2.0, 20.0}) {
        const double h = 1e-6 * std::max(1.0, std::abs(z));
        const double fd = (acq::log_h(z + h) - acq::log_h(z - h)) / (2.0 * h);
        EXPECT_LE(relative_error(acq::log_h_derivative(z), fd), 1e-6) << "z = " << z;
    }
}

TEST(Spec, Validation) {
    EXPECT_THROW((acq::AcquisitionSpec{acq::AcquisitionKind::Lcb, 0.0, 0.0}.validate()), std::invalid_argument);
    EXPECT_THROW((acq::AcquisitionSpec{acq::AcquisitionKind::LogEi, 2.0, NAN}.validate()), std::invalid_argument);
    auto c = box(2, 0.0, 1.0);
    c.restarts = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = box(2, 0.0, 1.0);
    c.upper[1] = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_THROW(acq::parse_kind("ei"), std::invalid_argument);
}

TEST(Optimize, ConstantSurface) {
    // All-zero weights: mu and sigma are the same everywhere.
    const bnn::Architecture arch{2, 1, 4, 1};
    std::vector<double> v(arch.parameter_count(), 0.0);
    v.back() = std::log(0.1);
    const bnn::PosteriorEnsemble e{arch, {bnn::NetworkParams(arch, v)}, bnn::Normalization::unit(2),
                                   bnn::GradientSource::Autodiff};
    const auto config = box(2, -1.0, 1.0);
    acq::OptimizeReport report;
    const auto x = acq::optimize(e, {acq::AcquisitionKind::Lcb, 2.0, 0.0}, config, 9, &report);
    ASSERT_EQ(report.restart_values.size(), config.restarts);
    for (double value : report.restart_values) EXPECT_EQ(value, report.restart_values.front());
    EXPECT_FALSE(report.used_fallback_scan);
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_GE(x[j], -1.0);
        EXPECT_LE(x[j], 1.0);
    }
}

TEST(Optimize, RecoversAnalyticMinimizer) {
    for (const std::vector<double>& centre : {std::vector<double>{0.31}, std::vector<double>{-0.42, 0.17}}) {
        const auto e = bump_ensemble(centre);
        const auto x = acq::optimize(e, {acq::AcquisitionKind::Lcb, 2.0, 0.0}, box(centre.size(), -1.0, 1.0), 3);
        for (std::size_t j = 0; j < centre.size(); ++j) EXPECT_NEAR(x[j], centre[j], 1e-4);
    }
}

TEST(Optimize, MinimizerOnTheBoundary) {
    // The bump's centre lies outside the box; the constrained minimizer is the nearest face.
    const auto e = bump_ensemble({1.4, 0.2});
    const auto x = acq::optimize(e, {acq::AcquisitionKind::Lcb, 2.0, 0.0}, box(2, -1.0, 1.0), 5);
    EXPECT_DOUBLE_EQ(x[0], 1.0);
    EXPECT_NEAR(x[1], 0.2, 1e-4);
}

TEST(Optimize, DeterministicAndInBounds) {
    const auto e = random_ensemble(3, 4, 21);
    const auto config = box(3, -2.0, 3.0);
    for (auto kind : {acq::AcquisitionKind::Lcb, acq::AcquisitionKind::LogEi}) {
        const acq::AcquisitionSpec spec{kind, 2.0, -0.5};
        const auto a = acq::optimize(e, spec, config, 77);
        const auto b = acq::optimize(e, spec, config, 77);
        EXPECT_EQ(a, b);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto x = acq::optimize(e, spec, config, seed);
            for (std::size_t j = 0; j < 3; ++j) {
                EXPECT_GE(x[j], config.lower[j]);
                EXPECT_LE(x[j], config.upper[j]);
            }
        }
    }
}

TEST(Optimize, BeatsEveryRandomStart) {
    const auto e = random_ensemble(2, 3, 8);
    const auto config = box(2, -2.0, 3.0);
    const acq::AcquisitionSpec spec{acq::AcquisitionKind::Lcb, 2.0, 0.0};
    acq::OptimizeReport report;
    const auto x = acq::optimize(e, spec, config, 1, &report);
    EXPECT_DOUBLE_EQ(acq::lcb(e, x, 2.0), report.best_value);
    Rng rng(99);
    for (int i = 0; i < 200; ++i) {
        const std::vector<double> probe{rng.uniform(-2.0, 3.0), rng.uniform(-2.0, 3.0)};
        EXPECT_LE(report.best_value, acq::lcb(e, probe, 2.0) + 1e-9);
    }
}

TEST(LogEi, GridArgmaxMatchesDirectEi) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        bnn::Batch data{1, {-0.9, -0.3, 0.4, 0.8}, {}, {}};
        for (double x : data.x) {
            data.y.push_back(std::sin(4.0 * x + static_cast<double>(seed)));
            data.gradients.push_back(4.0 * std::cos(4.0 * x + static_cast<double>(seed)));
        }
        sghmc::SghmcConfig config;
        config.total_steps = 1500;
        config.burn_in_steps = 500;
        config.sampling_interval = 50;
        const auto e = sghmc::run(data, bnn::Normalization::unit(1), bnn::Architecture{1, 2, 16, 1}, config, {}, seed);
        const double incumbent = *std::min_element(data.y.begin(), data.y.end());

        bnn::Predictor predictor(e);
        std::vector<double> grid(101);
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -1.0 + 0.02 * static_cast<double>(i);
        const auto preds = predictor.predict(grid);
        std::size_t arg_log = 0, arg_direct = 0;
        double best_log = -INFINITY, best_direct = -INFINITY;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double direct = acq::expected_improvement(preds[i], incumbent);
            if (!(direct > 1e-300)) continue;
            const double via_log = std::exp(acq::log_ei(preds[i], incumbent));
            if (via_log > best_log) best_log = via_log, arg_log = i;
            if (direct > best_direct) best_direct = direct, arg_direct = i;
        }
        EXPECT_EQ(arg_log, arg_direct) << "seed " << seed;
    }
}
