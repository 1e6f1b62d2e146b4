#pragma once

// Acquisition functions over the ensemble posterior and their optimizer.
//
// Everything here minimizes: LCB directly, LogEI through its negation.
// Improvement is measured as z = (incumbent - mu) / sigma.

#include "ginnbo/bnn.hpp"
#include "ginnbo/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <iostream>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ginnbo::acquisition {

enum class AcquisitionKind { Lcb, LogEi };

inline std::string to_string(AcquisitionKind kind) { return kind == AcquisitionKind::Lcb ? "lcb" : "logei"; }

inline AcquisitionKind parse_kind(const std::string& name) {
    if (name == "lcb") return AcquisitionKind::Lcb;
    if (name == "logei") return AcquisitionKind::LogEi;
    throw std::invalid_argument("unknown acquisition '" + name + "' (expected lcb or logei)");
}

struct AcquisitionSpec {
    AcquisitionKind kind = AcquisitionKind::Lcb;
    double beta = 2.0;       // LCB exploration weight
    double incumbent = 0.0;  // best observed y, LogEI only

    void validate() const {
        if (kind == AcquisitionKind::Lcb && !(beta > 0.0)) throw std::invalid_argument("LCB beta must be > 0");
        if (kind == AcquisitionKind::LogEi && !std::isfinite(incumbent)) {
            throw std::invalid_argument("LogEI incumbent must be finite");
        }
    }
};

struct OptimizerConfig {
    std::size_t restarts = 10;
    std::size_t max_iterations = 100;
    double gradient_tolerance = 1e-6;
    std::size_t history = 10;
    std::vector<double> lower;
    std::vector<double> upper;

    void validate() const {
        if (restarts < 1) throw std::invalid_argument("optimizer: restarts must be >= 1");
        if (lower.empty() || lower.size() != upper.size()) throw std::invalid_argument("optimizer: bad bounds");
        for (std::size_t j = 0; j < lower.size(); ++j) {
            if (!(lower[j] < upper[j])) throw std::invalid_argument("optimizer: empty box in dimension " + std::to_string(j));
        }
    }
};

/// Objective value with its input-gradient.
struct ObjectiveValue {
    double value = 0.0;
    std::vector<double> gradient;
};

// ------------------------------------------------------------------ scalar math

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Mills ratio Phi(-t) / phi(t) for t >= 0.
inline double mills_ratio(double t) {
    if (t < 25.0) {
        return std::erfc(t / std::numbers::sqrt2) * std::exp(0.5 * t * t) * std::sqrt(std::numbers::pi / 2.0);
    }
    // Continued fraction 1 / (t + 1 / (t + 2 / (t + 3 / (t + ...)))).
    double tail = t;
    for (int k = 60; k >= 1; --k) tail = t + k / tail;
    return 1.0 / tail;
}

namespace detail {

/// 1 - t * mills_ratio(t) for t >= 1, with the asymptotic series where the
/// direct difference loses precision.
inline double one_minus_t_mills(double t) {
    if (t > 100.0) {
        const double u = 1.0 / (t * t);
        // sum_k (-1)^(k+1) (2k-1)!! u^k
        return u * (1.0 - u * (3.0 - u * (15.0 - u * (105.0 - u * (945.0 - u * 10395.0)))));
    }
    return -std::expm1(std::log(t * mills_ratio(t)));
}

}  // namespace detail

/// log h(z) with h(z) = phi(z) + z Phi(z); finite and increasing for all finite z.
inline double log_h(double z) {
    if (z > -1.0) return std::log(normal_pdf(z) + z * normal_cdf(z));
    const double t = -z;
    return -0.5 * t * t - std::log(std::sqrt(2.0 * std::numbers::pi)) + std::log(detail::one_minus_t_mills(t));
}

/// d log h / dz = Phi(z) / h(z).
inline double log_h_derivative(double z) {
    if (z > -1.0) return normal_cdf(z) / (normal_pdf(z) + z * normal_cdf(z));
    const double t = -z;
    return mills_ratio(t) / detail::one_minus_t_mills(t);
}

// ------------------------------------------------------------------ acquisition values

/// mu - beta sigma.
inline double lcb(const bnn::Prediction& p, double beta) { return p.mean - beta * p.stddev(); }

inline ObjectiveValue lcb_with_gradient(const bnn::Prediction& p, double beta) {
    const double sigma = p.stddev();
    ObjectiveValue out{p.mean - beta * sigma, std::vector<double>(p.grad_mean.size())};
    for (std::size_t j = 0; j < out.gradient.size(); ++j) {
        out.gradient[j] = p.grad_mean[j] - beta * p.variance_gradient[j] / (2.0 * sigma);
    }
    return out;
}

inline double log_ei(const bnn::Prediction& p, double incumbent) {
    const double sigma = p.stddev();
    return log_h((incumbent - p.mean) / sigma) + std::log(sigma);
}

inline ObjectiveValue log_ei_with_gradient(const bnn::Prediction& p, double incumbent) {
    const double sigma = p.stddev();
    const double z = (incumbent - p.mean) / sigma;
    const double dlogh = log_h_derivative(z);
    ObjectiveValue out{log_h(z) + std::log(sigma), std::vector<double>(p.grad_mean.size())};
    for (std::size_t j = 0; j < out.gradient.size(); ++j) {
        const double dsigma = p.variance_gradient[j] / (2.0 * sigma);
        const double dz = -(p.grad_mean[j] + z * dsigma) / sigma;
        out.gradient[j] = dlogh * dz + dsigma / sigma;
    }
    return out;
}

/// Plain expected improvement sigma * h(z), computed without logarithms.
inline double expected_improvement(const bnn::Prediction& p, double incumbent) {
    const double sigma = p.stddev();
    const double z = (incumbent - p.mean) / sigma;
    return sigma * (normal_pdf(z) + z * normal_cdf(z));
}

inline double lcb(const bnn::PosteriorEnsemble& e, std::span<const double> x, double beta) {
    return lcb(bnn::predict(e, x), beta);
}

inline double log_ei(const bnn::PosteriorEnsemble& e, std::span<const double> x, double incumbent) {
    return log_ei(bnn::predict(e, x), incumbent);
}

/// The minimization objective for a spec: LCB, or -LogEI.
inline ObjectiveValue objective(const bnn::Prediction& p, const AcquisitionSpec& spec) {
    if (spec.kind == AcquisitionKind::Lcb) return lcb_with_gradient(p, spec.beta);
    ObjectiveValue v = log_ei_with_gradient(p, spec.incumbent);
    v.value = -v.value;
    for (double& g : v.gradient) g = -g;
    return v;
}

// ------------------------------------------------------------------ optimizer

struct OptimizeReport {
    std::vector<double> restart_values;  // final objective per restart (NaN when diverged)
    std::size_t evaluations = 0;
    bool used_fallback_scan = false;
    double best_value = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

struct BoxObjective {
    bnn::Predictor& predictor;
    const AcquisitionSpec& spec;
    const OptimizerConfig& config;
    std::size_t evaluations = 0;

    // Evaluate at unit-cube coordinates; gradient returned in the same coordinates.
    double operator()(std::span<const double> u, std::vector<double>& grad) {
        const std::size_t d = u.size();
        std::vector<double> x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = config.lower[j] + u[j] * (config.upper[j] - config.lower[j]);
        const auto v = objective(predictor.predict_one(x), spec);
        ++evaluations;
        grad.resize(d);
        for (std::size_t j = 0; j < d; ++j) grad[j] = v.gradient[j] * (config.upper[j] - config.lower[j]);
        return v.value;
    }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Zero the components of g that point out of the unit box at u.
inline std::vector<double> projected_gradient(std::span<const double> u, std::span<const double> g) {
    std::vector<double> pg(g.begin(), g.end());
    for (std::size_t j = 0; j < u.size(); ++j) {
        if ((u[j] <= 0.0 && g[j] > 0.0) || (u[j] >= 1.0 && g[j] < 0.0)) pg[j] = 0.0;
    }
    return pg;
}

/// Bounded L-BFGS on the unit cube. Returns the final value; u is updated in place.
inline double minimize_from(BoxObjective& f, std::vector<double>& u, const OptimizerConfig& config) {
    const std::size_t d = u.size();
    std::vector<double> g;
    double fu = f(u, g);
    if (!std::isfinite(fu)) return fu;
    std::deque<std::vector<double>> s_hist, y_hist;

    for (std::size_t it = 0; it < config.max_iterations; ++it) {
        const auto pg = projected_gradient(u, g);
        double pg_inf = 0.0;
        for (double v : pg) pg_inf = std::max(pg_inf, std::abs(v));
        if (pg_inf < config.gradient_tolerance) break;

        // Two-loop recursion on the projected gradient.
        std::vector<double> q = pg;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha[k] = dot(s_hist[k], q) / dot(y_hist[k], s_hist[k]);
            for (std::size_t j = 0; j < d; ++j) q[j] -= alpha[k] * y_hist[k][j];
        }
        double gamma = 1.0;
        if (!s_hist.empty()) gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
        for (double& v : q) v *= gamma;
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            const double beta = dot(y_hist[k], q) / dot(y_hist[k], s_hist[k]);
            for (std::size_t j = 0; j < d; ++j) q[j] += s_hist[k][j] * (alpha[k] - beta);
        }
        std::vector<double> dir(d);
        for (std::size_t j = 0; j < d; ++j) dir[j] = pg[j] == 0.0 ? 0.0 : -q[j];
        if (dot(dir, pg) >= 0.0) {
            for (std::size_t j = 0; j < d; ++j) dir[j] = -pg[j];
        }
        if (s_hist.empty()) {
            // First step moves at most a tenth of the box.
            double dir_inf = 0.0;
            for (double v : dir) dir_inf = std::max(dir_inf, std::abs(v));
            if (dir_inf > 0.1) for (double& v : dir) v *= 0.1 / dir_inf;
        }

        std::vector<double> trial(d), g_trial;
        double f_trial = fu;
        bool accepted = false;
        double step = 1.0;
        for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
            for (std::size_t j = 0; j < d; ++j) trial[j] = std::clamp(u[j] + step * dir[j], 0.0, 1.0);
            f_trial = f(trial, g_trial);
            double decrease = 0.0;
            for (std::size_t j = 0; j < d; ++j) decrease += pg[j] * (trial[j] - u[j]);
            if (std::isfinite(f_trial) && f_trial <= fu + 1e-4 * decrease) {
                accepted = true;
                break;
            }
        }
        if (!accepted) break;

        std::vector<double> s(d), y(d);
        for (std::size_t j = 0; j < d; ++j) {
            s[j] = trial[j] - u[j];
            y[j] = g_trial[j] - g[j];
        }
        const double change = fu - f_trial;
        u = trial;
        g = g_trial;
        fu = f_trial;
        if (dot(s, y) > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            if (s_hist.size() > config.history) {
                s_hist.pop_front();
                y_hist.pop_front();
            }
        }
        if (change <= 1e-14 * std::max(1.0, std::abs(fu))) break;
    }
    return fu;
}

}  // namespace detail

/// argmin of the acquisition objective over the box, via multi-start bounded L-BFGS.
inline std::vector<double> optimize(const bnn::PosteriorEnsemble& ensemble, const AcquisitionSpec& spec,
                                    const OptimizerConfig& config, std::uint64_t seed,
                                    OptimizeReport* report = nullptr) {
    spec.validate();
    config.validate();
    const std::size_t d = config.lower.size();
    if (d != ensemble.architecture.input_dim) throw std::invalid_argument("optimize: bounds dimension mismatch");

    bnn::Predictor predictor(ensemble);
    detail::BoxObjective f{predictor, spec, config};
    Rng rng(seed);
    OptimizeReport local;

    std::vector<double> best_u;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < config.restarts; ++r) {
        std::vector<double> u(d);
        for (double& v : u) {
            do {
                v = rng.uniform();
            } while (v <= 0.0);
        }
        const double value = detail::minimize_from(f, u, config);
        local.restart_values.push_back(std::isfinite(value) ? value : std::numeric_limits<double>::quiet_NaN());
        if (std::isfinite(value) && value < best) {
            best = value;
            best_u = u;
        }
    }

    if (best_u.empty()) {
        std::clog << "[acquisition] all " << config.restarts << " restarts diverged; using a 1024-point random scan\n";
        local.used_fallback_scan = true;
        const std::size_t n = 1024;
        std::vector<double> xs(n * d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) xs[i * d + j] = rng.uniform(config.lower[j], config.upper[j]);
        const auto preds = predictor.predict(xs);
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = objective(preds[i], spec).value;
            if (std::isfinite(v) && v < best) best = v, best_i = i;
        }
        best_u.resize(d);
        for (std::size_t j = 0; j < d; ++j) {
            best_u[j] = (xs[best_i * d + j] - config.lower[j]) / (config.upper[j] - config.lower[j]);
        }
    }

    std::vector<double> x(d);
    for (std::size_t j = 0; j < d; ++j) {
        x[j] = std::clamp(config.lower[j] + best_u[j] * (config.upper[j] - config.lower[j]), config.lower[j],
                          config.upper[j]);
    }
    local.evaluations = f.evaluations;
    local.best_value = best;
    if (report) *report = std::move(local);
    return x;
}

}  // namespace ginnbo::acquisition
