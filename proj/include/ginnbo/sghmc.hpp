#pragma once

// Scale-adapted stochastic-gradient Hamiltonian Monte Carlo.
//
// Update, with m = V^{-1/2} the adapted inverse preconditioner:
//   theta <- theta + v
//   v     <- v - delta^2 m grad U - mu v + N(0, 2 delta^2 mu m - delta^4)
// where mu = delta m C is the per-step momentum decay. The friction C is
// diagonal and chosen so that this decay is the configured constant for
// every parameter. V is an exponential moving average of squared stochastic
// gradients, adapted during burn-in and frozen afterwards.

#include "ginnbo/bnn.hpp"
#include "ginnbo/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ginnbo::sghmc {

class SamplerDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SghmcConfig {
    std::size_t total_steps = 6000;
    std::size_t burn_in_steps = 2000;
    double learning_rate = 1e-2;  // eta; delta = sqrt(eta / N) unless step_size is set
    double step_size = 0.0;       // delta; 0 selects sqrt(eta / N)
    double friction = 0.05;       // per-step momentum decay delta * V^{-1/2} * C
    std::size_t sampling_interval = 80;
    std::size_t batch_size = 32;
    double ema_decay = 0.0;  // 0 selects 1 - 1 / burn_in_steps

    std::size_t kept_samples() const {
        return total_steps > burn_in_steps ? (total_steps - burn_in_steps) / std::max<std::size_t>(sampling_interval, 1)
                                           : 0;
    }

    double resolved_step_size(std::size_t dataset_size) const {
        return step_size > 0.0 ? step_size : std::sqrt(learning_rate / static_cast<double>(dataset_size));
    }

    double resolved_ema_decay() const {
        if (ema_decay > 0.0) return ema_decay;
        return burn_in_steps > 0 ? 1.0 - 1.0 / static_cast<double>(burn_in_steps) : 0.0;
    }

    void validate() const {
        if (burn_in_steps >= total_steps) throw std::invalid_argument("sghmc: burn_in_steps must be < total_steps");
        if (step_size < 0.0 || learning_rate <= 0.0) throw std::invalid_argument("sghmc: step size must be positive");
        if (friction < 0.0) throw std::invalid_argument("sghmc: friction must be nonnegative");
        if (sampling_interval < 1) throw std::invalid_argument("sghmc: sampling_interval must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("sghmc: batch_size must be >= 1");
        if (ema_decay < 0.0 || ema_decay >= 1.0) throw std::invalid_argument("sghmc: ema_decay must be in [0, 1)");
        if (kept_samples() < 1) throw std::invalid_argument("sghmc: configuration keeps no samples");
    }
};

inline constexpr double kVarianceFloor = 1e-16;

struct SamplerState {
    std::vector<double> theta;
    std::vector<double> v;
    std::vector<double> v_hat;
    std::size_t step_count = 0;
    Rng rng{0};
    // Steps on which more than 1% of the noise variances were floored at zero.
    std::size_t floor_events = 0;
    double last_potential = 0.0;
    double last_gradient_norm = 0.0;

    static SamplerState start(std::vector<double> theta, std::uint64_t seed) {
        SamplerState s;
        s.v.assign(theta.size(), 0.0);
        s.v_hat.assign(theta.size(), 1.0);
        s.theta = std::move(theta);
        s.rng = Rng(seed);
        return s;
    }
};

/// Potential U(theta) with its gradient written into `gradient`.
using PotentialFn = std::function<double(std::span<const double> theta, std::span<double> gradient)>;

/// One adaptive SGHMC update in place. `step_size` is delta.
inline void advance(SamplerState& state, const SghmcConfig& config, double step_size, const PotentialFn& potential,
                    std::vector<double>& scratch) {
    const std::size_t n = state.theta.size();
    for (std::size_t k = 0; k < n; ++k) state.theta[k] += state.v[k];

    scratch.resize(n);
    const double u = potential(state.theta, scratch);
    double norm_sq = 0.0;
    for (double g : scratch) norm_sq += g * g;
    if (!std::isfinite(u) || !std::isfinite(norm_sq)) {
        throw SamplerDiverged("sghmc: non-finite potential or gradient at step " + std::to_string(state.step_count) +
                              " (step size " + std::to_string(step_size) + " too large?)");
    }
    state.last_potential = u;
    state.last_gradient_norm = std::sqrt(norm_sq);

    if (state.step_count < config.burn_in_steps) {
        // Running mean for the first steps, then an EMA with the configured horizon.
        const double rate =
            std::max(1.0 / static_cast<double>(state.step_count + 1), 1.0 - config.resolved_ema_decay());
        for (std::size_t k = 0; k < n; ++k) {
            state.v_hat[k] = std::max((1.0 - rate) * state.v_hat[k] + rate * scratch[k] * scratch[k], kVarianceFloor);
        }
    }

    const double d2 = step_size * step_size;
    const double d4 = d2 * d2;
    const double mu = config.friction;
    std::size_t floored = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double minv = 1.0 / std::sqrt(state.v_hat[k]);
        double noise_var = 2.0 * d2 * mu * minv - d4;
        if (noise_var <= 0.0) {
            noise_var = 0.0;
            ++floored;
        }
        const double noise = noise_var > 0.0 ? std::sqrt(noise_var) * state.rng.normal() : 0.0;
        state.v[k] += -d2 * minv * scratch[k] - mu * state.v[k] + noise;
    }
    if (mu > 0.0 && static_cast<double>(floored) > 0.01 * static_cast<double>(n)) ++state.floor_events;
    ++state.step_count;
}

/// Value-semantics wrapper around advance().
inline SamplerState step(SamplerState state, const SghmcConfig& config, double step_size, const PotentialFn& potential) {
    std::vector<double> scratch;
    advance(state, config, step_size, potential, scratch);
    return state;
}

/// Generic sampler loop: burn in, then keep every sampling_interval-th state.
inline std::vector<std::vector<double>> sample(const PotentialFn& potential, std::vector<double> initial,
                                               const SghmcConfig& config, double step_size, std::uint64_t seed,
                                               SamplerState* final_state = nullptr) {
    config.validate();
    SamplerState state = SamplerState::start(std::move(initial), seed);
    std::vector<std::vector<double>> kept;
    kept.reserve(config.kept_samples());
    std::vector<double> scratch;
    for (std::size_t s = 1; s <= config.total_steps; ++s) {
        advance(state, config, step_size, potential, scratch);
        if (s > config.burn_in_steps && (s - config.burn_in_steps) % config.sampling_interval == 0) {
            kept.push_back(state.theta);
        }
    }
    if (final_state) *final_state = std::move(state);
    return kept;
}

// ------------------------------------------------------------- BNN training

/// Per-step trace of one chain.
struct Diagnostics {
    struct Row {
        std::size_t step;
        double potential;
        double gradient_norm;
        bool noise_floored;
    };
    std::vector<Row> rows;

    void write_csv(std::ostream& out) const {
        out << "step,potential,gradient_norm,noise_floor_event\n";
        for (const Row& r : rows) {
            out << r.step << ',' << r.potential << ',' << r.gradient_norm << ',' << (r.noise_floored ? 1 : 0) << '\n';
        }
    }
};

struct TrainingOptions {
    double gradient_weight = 1.0;
    bnn::PriorConfig prior{};
    bnn::GradientSource gradient_source = bnn::GradientSource::Autodiff;
};

/// U(theta) = N (L_f + lambda L_grad) + L_prior over mini-batches of a fixed dataset.
///
/// Mini-batches are drawn without replacement within an epoch; a new
/// permutation starts once fewer than batch_size unused rows remain.
class BnnPotential {
public:
    BnnPotential(const bnn::Batch& data, const bnn::NetworkParams& init, std::size_t batch_size,
                 const TrainingOptions& options, std::uint64_t seed)
        : data_(data), batch_size_(std::min(batch_size, data.rows())), rng_(seed) {
        data.validate();
        if (batch_size_ == 0) throw std::invalid_argument("potential: empty batch");
        order_.resize(data.rows());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        cursor_ = order_.size();
        bnn::Batch first = full_batch() ? data : data.select(std::span(order_).first(batch_size_));
        if (options.gradient_weight == 0.0) {
            data_.gradients.clear();
            first.gradients.clear();
        }
        graph_.emplace(init, first,
                       bnn::LossGraph::Options{.gradient_weight = options.gradient_weight,
                                               .prior = options.prior,
                                               .gradient_source = options.gradient_source,
                                               .data_scale = static_cast<double>(data.rows()),
                                               .with_potential_gradient = true});
    }

    bool full_batch() const { return batch_size_ == data_.rows(); }

    double operator()(std::span<const double> theta, std::span<double> gradient) {
        if (!full_batch()) graph_->set_batch(next_batch());
        graph_->set_params(theta);
        graph_->replay();
        graph_->potential_gradient(gradient);
        return graph_->potential();
    }

    /// Potential on an explicit batch (for checks against the full-data value).
    double evaluate(std::span<const double> theta, const bnn::Batch& batch, std::span<double> gradient) {
        graph_->set_batch(batch);
        graph_->set_params(theta);
        graph_->replay();
        graph_->potential_gradient(gradient);
        return graph_->potential();
    }

    bnn::Batch next_batch() {
        if (cursor_ + batch_size_ > order_.size()) {
            rng_.shuffle(order_);
            cursor_ = 0;
        }
        auto picked = std::span(order_).subspan(cursor_, batch_size_);
        cursor_ += batch_size_;
        return data_.select(picked);
    }

private:
    bnn::Batch data_;
    std::size_t batch_size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::optional<bnn::LossGraph> graph_;
};

/// U and its parameter gradient for one batch, scaled to a dataset of `dataset_size` rows.
inline double potential_energy(const bnn::NetworkParams& theta, const bnn::Batch& batch, std::size_t dataset_size,
                               double gradient_weight, std::span<double> gradient, const bnn::PriorConfig& prior = {}) {
    if (batch.rows() == 0) throw std::invalid_argument("potential_energy: empty batch");
    bnn::Batch used = batch;
    if (gradient_weight == 0.0) used.gradients.clear();
    bnn::LossGraph graph(theta, used,
                         {.gradient_weight = gradient_weight,
                          .prior = prior,
                          .data_scale = static_cast<double>(dataset_size),
                          .with_potential_gradient = true});
    graph.potential_gradient(gradient);
    return graph.potential();
}

/// Train a posterior ensemble from scratch on normalized data.
inline bnn::PosteriorEnsemble run(const bnn::Batch& data, const bnn::Normalization& normalization,
                                  const bnn::Architecture& architecture, const SghmcConfig& config,
                                  const TrainingOptions& options, std::uint64_t seed,
                                  Diagnostics* diagnostics = nullptr) {
    config.validate();
    data.validate();
    if (options.gradient_weight < 0.0) throw std::invalid_argument("run: gradient weight must be nonnegative");
    Rng init_rng(mix_seed(seed, 1));
    const auto init = bnn::NetworkParams::initialize(architecture, init_rng, std::exp(options.prior.log_noise_mean));
    BnnPotential potential(data, init, config.batch_size, options, mix_seed(seed, 2));
    const double delta = config.resolved_step_size(data.rows());

    SamplerState state =
        SamplerState::start(std::vector<double>(init.values().begin(), init.values().end()), mix_seed(seed, 3));
    std::vector<double> scratch;
    const PotentialFn fn = [&potential](std::span<const double> t, std::span<double> g) { return potential(t, g); };

    bnn::PosteriorEnsemble ensemble{architecture, {}, normalization, options.gradient_source};
    ensemble.samples.reserve(config.kept_samples());
    for (std::size_t s = 1; s <= config.total_steps; ++s) {
        const std::size_t floors_before = state.floor_events;
        advance(state, config, delta, fn, scratch);
        if (diagnostics) {
            diagnostics->rows.push_back(
                {s, state.last_potential, state.last_gradient_norm, state.floor_events != floors_before});
        }
        if (s > config.burn_in_steps && (s - config.burn_in_steps) % config.sampling_interval == 0) {
            ensemble.samples.emplace_back(architecture, state.theta);
        }
    }
    if (state.floor_events > 0) {
        std::clog << "[sghmc] noise variance floored on >1% of parameters in " << state.floor_events << " of "
                  << config.total_steps << " steps; step size " << delta << " may be too large\n";
    }
    return ensemble;
}

}  // namespace ginnbo::sghmc
