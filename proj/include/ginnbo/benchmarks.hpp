#pragma once

// Analytic test problems with exact gradients and known optima.

#include "ginnbo/random.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ginnbo::benchmarks {

struct Problem {
    std::string name;
    std::size_t dim = 0;
    std::vector<double> lower;
    std::vector<double> upper;
    std::function<double(std::span<const double>)> evaluate;
    std::function<std::vector<double>(std::span<const double>)> gradient;
    std::optional<double> optimum_value;
    std::optional<std::vector<double>> optimum_point;
    double noise_std = 0.0;

    bool contains(std::span<const double> x) const {
        if (x.size() != dim) return false;
        for (std::size_t j = 0; j < dim; ++j) {
            if (!(x[j] >= lower[j] && x[j] <= upper[j])) return false;
        }
        return true;
    }
};

struct Observation {
    double y = 0.0;
    std::vector<double> gradient;
};

/// f(x) and grad f(x), each perturbed by independent N(0, noise_std^2) draws.
inline Observation observe(const Problem& problem, std::span<const double> x, std::uint64_t seed) {
    if (!problem.contains(x)) {
        throw std::out_of_range("observe: point outside the bounds of " + problem.name);
    }
    Observation obs{problem.evaluate(x), problem.gradient(x)};
    if (problem.noise_std > 0.0) {
        Rng rng(seed);
        obs.y += problem.noise_std * rng.normal();
        for (double& g : obs.gradient) g += problem.noise_std * rng.normal();
    }
    return obs;
}

// ------------------------------------------------------------------ problems

/// sin(x + y) + (x - y)^2 - 1.5 x + 2.5 y + 1 on [-1.5, 4] x [-3, 4].
inline Problem mccormick() {
    Problem p;
    p.name = "mccormick";
    p.dim = 2;
    p.lower = {-1.5, -3.0};
    p.upper = {4.0, 4.0};
    p.evaluate = [](std::span<const double> x) {
        return std::sin(x[0] + x[1]) + (x[0] - x[1]) * (x[0] - x[1]) - 1.5 * x[0] + 2.5 * x[1] + 1.0;
    };
    p.gradient = [](std::span<const double> x) {
        const double c = std::cos(x[0] + x[1]);
        const double d = 2.0 * (x[0] - x[1]);
        return std::vector<double>{c + d - 1.5, c - d + 2.5};
    };
    // Stationarity gives cos(x + y) = -1/2 and x - y = 1.
    constexpr double third_pi = std::numbers::pi / 3.0;
    p.optimum_point = std::vector<double>{0.5 - third_pi, -0.5 - third_pi};
    p.optimum_value = -std::numbers::sqrt3 / 2.0 - third_pi;
    return p;
}

/// Standard Rosenbrock in 4D on [-2.048, 2.048]^4, minimum 0 at (1, 1, 1, 1).
inline Problem rosenbrock4() {
    Problem p;
    p.name = "rosenbrock4";
    p.dim = 4;
    p.lower.assign(4, -2.048);
    p.upper.assign(4, 2.048);
    p.evaluate = [](std::span<const double> x) {
        double f = 0.0;
        for (std::size_t i = 0; i + 1 < x.size(); ++i) {
            const double a = x[i + 1] - x[i] * x[i];
            const double b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
        }
        return f;
    };
    p.gradient = [](std::span<const double> x) {
        std::vector<double> g(x.size(), 0.0);
        for (std::size_t i = 0; i + 1 < x.size(); ++i) {
            const double a = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * a - 2.0 * (1.0 - x[i]);
            g[i + 1] += 200.0 * a;
        }
        return g;
    };
    p.optimum_point = std::vector<double>(4, 1.0);
    p.optimum_value = 0.0;
    return p;
}

namespace detail {

inline constexpr std::array<double, 4> kHartmannAlpha{1.0, 1.2, 3.0, 3.2};
inline constexpr std::array<std::array<double, 6>, 4> kHartmannA{{
    {10.0, 3.0, 17.0, 3.5, 1.7, 8.0},
    {0.05, 10.0, 17.0, 0.1, 8.0, 14.0},
    {3.0, 3.5, 1.7, 10.0, 17.0, 8.0},
    {17.0, 8.0, 0.05, 10.0, 0.1, 14.0},
}};
inline constexpr std::array<std::array<double, 6>, 4> kHartmannP{{
    {0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886},
    {0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991},
    {0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650},
    {0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381},
}};

}  // namespace detail

/// Hartmann 6D on [0, 1]^6 with the standard constants.
inline Problem hartmann6() {
    using detail::kHartmannA;
    using detail::kHartmannAlpha;
    using detail::kHartmannP;
    Problem p;
    p.name = "hartmann6";
    p.dim = 6;
    p.lower.assign(6, 0.0);
    p.upper.assign(6, 1.0);
    p.evaluate = [](std::span<const double> x) {
        double f = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < 6; ++j) inner += kHartmannA[i][j] * (x[j] - kHartmannP[i][j]) * (x[j] - kHartmannP[i][j]);
            f -= kHartmannAlpha[i] * std::exp(-inner);
        }
        return f;
    };
    p.gradient = [](std::span<const double> x) {
        std::vector<double> g(6, 0.0);
        for (std::size_t i = 0; i < 4; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < 6; ++j) inner += kHartmannA[i][j] * (x[j] - kHartmannP[i][j]) * (x[j] - kHartmannP[i][j]);
            const double term = kHartmannAlpha[i] * std::exp(-inner);
            for (std::size_t j = 0; j < 6; ++j) g[j] += term * 2.0 * kHartmannA[i][j] * (x[j] - kHartmannP[i][j]);
        }
        return g;
    };
    p.optimum_point = std::vector<double>{0.20168950725118004, 0.15001068938946577, 0.47687397427549577,
                                          0.27533242839179606, 0.31165161679481873, 0.6573005288140765};
    p.optimum_value = -3.322368011415514;
    return p;
}

/// (6x - 2)^2 sin(12x - 4) on [0, 1]: one local and one global minimum.
inline Problem demo1d() {
    Problem p;
    p.name = "demo1d";
    p.dim = 1;
    p.lower = {0.0};
    p.upper = {1.0};
    p.evaluate = [](std::span<const double> x) {
        const double a = 6.0 * x[0] - 2.0;
        return a * a * std::sin(12.0 * x[0] - 4.0);
    };
    p.gradient = [](std::span<const double> x) {
        const double a = 6.0 * x[0] - 2.0;
        const double t = 12.0 * x[0] - 4.0;
        return std::vector<double>{12.0 * a * std::sin(t) + 12.0 * a * a * std::cos(t)};
    };
    p.optimum_point = std::vector<double>{0.7572487585232999};
    p.optimum_value = -6.0207400557670825;
    return p;
}

inline const std::vector<std::string>& problem_names() {
    static const std::vector<std::string> names{"mccormick", "rosenbrock4", "hartmann6", "demo1d"};
    return names;
}

/// Problem catalog lookup by CLI name.
inline Problem make_problem(const std::string& name, double noise_std = 0.0) {
    Problem p;
    if (name == "mccormick") {
        p = mccormick();
    } else if (name == "rosenbrock4") {
        p = rosenbrock4();
    } else if (name == "hartmann6") {
        p = hartmann6();
    } else if (name == "demo1d") {
        p = demo1d();
    } else {
        throw std::invalid_argument("unknown problem '" + name + "' (expected mccormick, rosenbrock4, hartmann6, demo1d)");
    }
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be nonnegative");
    p.noise_std = noise_std;
    return p;
}

}  // namespace ginnbo::benchmarks
