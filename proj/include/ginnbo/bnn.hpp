#pragma once

// Bayesian neural network surrogate: a tanh MLP with a Gaussian observation
// model, the joint value/gradient negative log-likelihood used for training,
// and sample-based prediction over a posterior ensemble.

#include "ginnbo/autodiff.hpp"
#include "ginnbo/random.hpp"

#include "json.hpp"

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ginnbo::bnn {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2 pi) / 2

/// Network shape. Hidden layers all share one width and use tanh.
struct Architecture {
    std::size_t input_dim = 1;
    std::size_t hidden_layers = 5;
    std::size_t nodes_per_layer = 80;
    // Only the independent-output ablation uses more than one output.
    std::size_t output_dim = 1;

    struct Layer {
        std::size_t fan_in;
        std::size_t fan_out;
    };

    std::vector<Layer> layers() const {
        std::vector<Layer> out;
        std::size_t in = input_dim;
        for (std::size_t l = 0; l < hidden_layers; ++l) {
            out.push_back({in, nodes_per_layer});
            in = nodes_per_layer;
        }
        out.push_back({in, output_dim});
        return out;
    }

    /// Weights and biases, excluding the noise parameter.
    std::size_t weight_count() const {
        std::size_t n = 0;
        for (const Layer& l : layers()) n += l.fan_in * l.fan_out + l.fan_out;
        return n;
    }

    /// Length of the flat parameter vector (weights, biases, then log noise variance).
    std::size_t parameter_count() const { return weight_count() + 1; }

    void validate() const {
        if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("architecture: zero input or output dim");
        if (hidden_layers > 0 && nodes_per_layer == 0) throw std::invalid_argument("architecture: zero-width layer");
    }

    bool operator==(const Architecture&) const = default;
};

/// Dense layer view: weights are fan_out x fan_in row-major.
struct DenseLayer {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::vector<double> weights;
    std::vector<double> biases;
};

/// Flat parameter vector. Layout is layer-major: each layer's weights
/// (row-major, fan_out x fan_in) then its biases; the final entry is
/// rho = log of the observation-noise variance.
class NetworkParams {
public:
    NetworkParams() = default;
    NetworkParams(Architecture arch, std::vector<double> values) : arch_(arch), values_(std::move(values)) {
        if (values_.size() != arch_.parameter_count()) {
            throw std::invalid_argument("NetworkParams: expected " + std::to_string(arch_.parameter_count()) +
                                        " values, got " + std::to_string(values_.size()));
        }
    }

    /// Glorot-uniform weights, zero biases, rho = log(initial_noise_var).
    static NetworkParams initialize(const Architecture& arch, Rng& rng, double initial_noise_var = 1e-2) {
        arch.validate();
        std::vector<double> v;
        v.reserve(arch.parameter_count());
        for (const auto& l : arch.layers()) {
            const double limit = std::sqrt(6.0 / static_cast<double>(l.fan_in + l.fan_out));
            for (std::size_t i = 0; i < l.fan_in * l.fan_out; ++i) v.push_back(rng.uniform(-limit, limit));
            v.insert(v.end(), l.fan_out, 0.0);
        }
        v.push_back(std::log(initial_noise_var));
        return NetworkParams(arch, std::move(v));
    }

    static NetworkParams from_layers(const Architecture& arch, std::span<const DenseLayer> layers, double log_noise_var) {
        std::vector<double> v;
        const auto shapes = arch.layers();
        if (layers.size() != shapes.size()) throw std::invalid_argument("from_layers: layer count mismatch");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].fan_in != shapes[i].fan_in || layers[i].fan_out != shapes[i].fan_out ||
                layers[i].weights.size() != shapes[i].fan_in * shapes[i].fan_out ||
                layers[i].biases.size() != shapes[i].fan_out) {
                throw std::invalid_argument("from_layers: layer " + std::to_string(i) + " shape mismatch");
            }
            v.insert(v.end(), layers[i].weights.begin(), layers[i].weights.end());
            v.insert(v.end(), layers[i].biases.begin(), layers[i].biases.end());
        }
        v.push_back(log_noise_var);
        return NetworkParams(arch, std::move(v));
    }

    std::vector<DenseLayer> layers() const {
        std::vector<DenseLayer> out;
        std::size_t offset = 0;
        for (const auto& l : arch_.layers()) {
            DenseLayer layer{l.fan_in, l.fan_out, {}, {}};
            layer.weights.assign(values_.begin() + static_cast<std::ptrdiff_t>(offset),
                                 values_.begin() + static_cast<std::ptrdiff_t>(offset + l.fan_in * l.fan_out));
            offset += l.fan_in * l.fan_out;
            layer.biases.assign(values_.begin() + static_cast<std::ptrdiff_t>(offset),
                                values_.begin() + static_cast<std::ptrdiff_t>(offset + l.fan_out));
            offset += l.fan_out;
            out.push_back(std::move(layer));
        }
        return out;
    }

    const Architecture& architecture() const { return arch_; }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    std::span<const double> weights_and_biases() const { return std::span(values_).first(values_.size() - 1); }
    double log_noise_var() const { return values_.back(); }
    double noise_var() const { return std::exp(values_.back()); }

    bool operator==(const NetworkParams&) const = default;

private:
    Architecture arch_;
    std::vector<double> values_;
};

/// Affine maps between problem units and the normalized units the network sees.
/// Inputs go to [-1, 1]^D; outputs to zero mean and unit variance; gradients
/// follow by the chain rule.
struct Normalization {
    std::vector<double> lower;
    std::vector<double> upper;
    double y_mean = 0.0;
    double y_std = 1.0;

    /// Identity-like map for a D-dimensional box.
    static Normalization unit(std::size_t dim) {
        return Normalization{std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0), 0.0, 1.0};
    }

    std::size_t dim() const { return lower.size(); }
    double half_range(std::size_t j) const { return 0.5 * (upper[j] - lower[j]); }

    double input(std::size_t j, double x) const { return (x - lower[j]) / half_range(j) - 1.0; }
    double output(double y) const { return (y - y_mean) / y_std; }
    double gradient(std::size_t j, double g) const { return g * half_range(j) / y_std; }

    double mean_to_problem(double m) const { return y_mean + y_std * m; }
    double variance_to_problem(double v) const { return y_std * y_std * v; }
    double gradient_to_problem(std::size_t j, double g) const { return g * y_std / half_range(j); }
    double gradient_variance_to_problem(std::size_t j, double v) const {
        const double s = y_std / half_range(j);
        return s * s * v;
    }

    bool operator==(const Normalization&) const = default;
};

/// Training rows in normalized units. Gradients are optional.
struct Batch {
    std::size_t dim = 0;
    std::vector<double> x;          // rows x dim
    std::vector<double> y;          // rows
    std::vector<double> gradients;  // rows x dim, or empty

    std::size_t rows() const { return y.size(); }
    bool has_gradients() const { return !gradients.empty(); }

    void validate() const {
        if (y.empty()) throw std::invalid_argument("batch: no rows");
        if (x.size() != y.size() * dim) throw std::invalid_argument("batch: x has wrong size");
        if (!gradients.empty() && gradients.size() != y.size() * dim) {
            throw std::invalid_argument("batch: gradients have wrong size");
        }
    }

    /// Rows selected by index, in the given order.
    Batch select(std::span<const std::size_t> indices) const {
        Batch out{dim, {}, {}, {}};
        for (std::size_t i : indices) {
            out.x.insert(out.x.end(), x.begin() + static_cast<std::ptrdiff_t>(i * dim),
                         x.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
            out.y.push_back(y[i]);
            if (has_gradients()) {
                out.gradients.insert(out.gradients.end(), gradients.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                     gradients.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
            }
        }
        return out;
    }
};

/// Ridge prior on weights plus a Gaussian prior on rho.
struct PriorConfig {
    double weight_decay = 1.0;                   // alpha in (alpha / 2) ||theta_mu||^2
    double log_noise_mean = -4.605170185988091;  // log(1e-2)
    double log_noise_var = 1.0;
};

/// How the ensemble exposes input-gradients.
enum class GradientSource {
    Autodiff,  // differentiate the value output with respect to the inputs
    Heads,     // read outputs 1..D of an independent-output network (ablation only)
};

// ------------------------------------------------------------- tape graphs

/// Parameter leaves of one network recorded on a tape.
struct NetworkLeaves {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
    ad::Var log_noise_var;

    static NetworkLeaves record(ad::Tape& tape, const NetworkParams& params) {
        NetworkLeaves leaves;
        for (const DenseLayer& l : params.layers()) {
            leaves.weights.push_back(tape.variable(l.fan_out, l.fan_in, l.weights));
            leaves.biases.push_back(tape.variable(1, l.fan_out, l.biases));
        }
        leaves.log_noise_var = tape.variable(params.log_noise_var());
        return leaves;
    }

    /// Overwrite leaf values from a flat vector (same layout as NetworkParams).
    void load(ad::Tape& tape, std::span<const double> flat) const {
        std::size_t offset = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            const std::size_t nw = tape.value(weights[l]).size();
            tape.set_value(weights[l], flat.subspan(offset, nw));
            offset += nw;
            const std::size_t nb = tape.value(biases[l]).size();
            tape.set_value(biases[l], flat.subspan(offset, nb));
            offset += nb;
        }
        tape.set_value(log_noise_var, flat.subspan(offset, 1));
    }

    /// Leaves in flat-vector order.
    std::vector<ad::Var> all() const {
        std::vector<ad::Var> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            out.push_back(weights[l]);
            out.push_back(biases[l]);
        }
        out.push_back(log_noise_var);
        return out;
    }
};

/// MLP forward pass: inputs (rows x D) -> rows x output_dim.
inline ad::Var forward(const NetworkLeaves& net, ad::Var inputs) {
    ad::Var h = inputs;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        h = ad::add_row(ad::matmul(h, net.weights[l], ad::Transpose::Right), net.biases[l]);
        if (l + 1 < net.weights.size()) h = ad::tanh(h);
    }
    return h;
}

/// Scalar network output phi(x; theta_mu) for one input.
inline double forward(const NetworkParams& params, std::span<const double> x) {
    const Architecture& arch = params.architecture();
    if (x.size() != arch.input_dim) {
        throw std::invalid_argument("forward: input has dimension " + std::to_string(x.size()) + ", expected " +
                                    std::to_string(arch.input_dim));
    }
    ad::Tape tape;
    const auto leaves = NetworkLeaves::record(tape, params);
    return tape.value(forward(leaves, tape.constant(1, x.size(), x)))[0];
}

/// Column selector so that out * selector picks output columns [first, first + count).
inline ad::Var column_selector(ad::Tape& tape, std::size_t outputs, std::size_t first, std::size_t count) {
    std::vector<double> s(outputs * count, 0.0);
    for (std::size_t c = 0; c < count; ++c) s[(first + c) * count + c] = 1.0;
    return tape.constant(outputs, count, s);
}

/// Gaussian NLL averaged over rows: sum(residual^2) / (2 n sigma2) + log(2 pi sigma2) / 2.
/// `residual` may have several columns (squared norm per row).
inline ad::Var gaussian_nll(ad::Var residual, ad::Var log_noise_var, std::size_t rows) {
    const ad::Var inv_var = ad::exp(-log_noise_var);
    const ad::Var data_term = (0.5 / static_cast<double>(rows)) * ad::mul_scalar(ad::squared_norm(residual), inv_var);
    return data_term + (0.5 * log_noise_var + kHalfLog2Pi);
}

/// All nodes of the training loss for one batch shape.
///
/// The graph is recorded once; set_params / set_batch followed by
/// tape().replay() re-evaluates it, including parameter gradients of the
/// potential when requested.
class LossGraph {
public:
    struct Options {
        double gradient_weight = 1.0;  // lambda_grad
        PriorConfig prior{};
        GradientSource gradient_source = GradientSource::Autodiff;
        // Multiplies the data terms in the potential; the dataset size for SGHMC.
        double data_scale = 1.0;
        bool with_potential_gradient = false;
    };

    LossGraph(const NetworkParams& params, const Batch& batch, Options options)
        : options_(options), arch_(params.architecture()), rows_(batch.rows()) {
        batch.validate();
        if (options.gradient_weight < 0.0) throw std::invalid_argument("gradient weight must be nonnegative");
        if (batch.dim != arch_.input_dim) throw std::invalid_argument("batch dimension does not match network input");
        const bool gradient_term = options.gradient_weight > 0.0;
        if (gradient_term && !batch.has_gradients()) {
            throw std::invalid_argument(
                "gradient loss term requested but the batch carries no gradients; set the gradient weight to 0");
        }
        if (options.gradient_source == GradientSource::Heads && arch_.output_dim != arch_.input_dim + 1) {
            throw std::invalid_argument("independent-output networks need input_dim + 1 outputs");
        }

        leaves_ = NetworkLeaves::record(tape_, params);
        const std::size_t d = batch.dim;
        x_ = tape_.variable(rows_, d, batch.x);
        y_ = tape_.constant(rows_, 1, batch.y);
        ad::Var out = forward(leaves_, x_);
        if (arch_.output_dim == 1) {
            phi_ = out;
        } else {
            phi_ = ad::matmul(out, column_selector(tape_, arch_.output_dim, 0, 1));
        }
        value_nll_ = gaussian_nll(y_ - phi_, leaves_.log_noise_var, rows_);

        if (batch.has_gradients()) {
            observed_gradients_ = tape_.constant(rows_, d, batch.gradients);
            if (options.gradient_source == GradientSource::Autodiff) {
                input_gradient_ = ad::grad_wrt_inputs(phi_, x_);
            } else {
                input_gradient_ = ad::matmul(out, column_selector(tape_, arch_.output_dim, 1, d));
            }
            gradient_nll_ = gaussian_nll(*observed_gradients_ - *input_gradient_, leaves_.log_noise_var, rows_);
        }

        ad::Var weight_norm = ad::squared_norm(leaves_.weights[0]) + ad::squared_norm(leaves_.biases[0]);
        for (std::size_t l = 1; l < leaves_.weights.size(); ++l) {
            weight_norm = weight_norm + ad::squared_norm(leaves_.weights[l]) + ad::squared_norm(leaves_.biases[l]);
        }
        const ad::Var rho_offset = leaves_.log_noise_var - options.prior.log_noise_mean;
        prior_ = (0.5 * options.prior.weight_decay) * weight_norm +
                 (0.5 / options.prior.log_noise_var) * ad::square(rho_offset);

        ad::Var data = value_nll_;
        if (gradient_term) data = data + options.gradient_weight * *gradient_nll_;
        total_ = data + prior_;
        potential_ = options.data_scale * data + prior_;

        if (options.with_potential_gradient) {
            const auto wrt = leaves_.all();
            potential_gradient_ = ad::grad_wrt_params(potential_, wrt);
        }
    }

    LossGraph(const LossGraph&) = delete;
    LossGraph& operator=(const LossGraph&) = delete;

    void set_params(std::span<const double> flat) { leaves_.load(tape_, flat); }

    void set_batch(const Batch& batch) {
        if (batch.rows() != rows_) throw std::invalid_argument("set_batch: row count differs from recorded graph");
        tape_.set_value(x_, batch.x);
        tape_.set_value(y_, batch.y);
        if (observed_gradients_) tape_.set_value(*observed_gradients_, batch.gradients);
    }

    void replay() { tape_.replay(); }

    double value_nll() const { return tape_.scalar_value(value_nll_); }
    double gradient_nll() const {
        if (!gradient_nll_) throw std::logic_error("batch carries no gradients");
        return tape_.scalar_value(*gradient_nll_);
    }
    double prior() const { return tape_.scalar_value(prior_); }
    double total() const { return tape_.scalar_value(total_); }
    double potential() const { return tape_.scalar_value(potential_); }

    /// Flat gradient of the potential (same layout as NetworkParams).
    void potential_gradient(std::span<double> out) const {
        if (potential_gradient_.empty()) throw std::logic_error("graph recorded without potential gradient");
        std::size_t offset = 0;
        for (ad::Var g : potential_gradient_) {
            const auto v = tape_.value(g);
            std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
            offset += v.size();
        }
    }

    ad::Tape& tape() { return tape_; }
    std::size_t rows() const { return rows_; }

private:
    Options options_;
    Architecture arch_;
    std::size_t rows_;
    ad::Tape tape_;
    NetworkLeaves leaves_;
    ad::Var x_, y_, phi_;
    std::optional<ad::Var> observed_gradients_, input_gradient_, gradient_nll_;
    ad::Var value_nll_, prior_, total_, potential_;
    std::vector<ad::Var> potential_gradient_;
};

/// Mean Gaussian NLL of the batch values, L_f.
inline double loss_function(const NetworkParams& params, const Batch& batch) {
    Batch values_only{batch.dim, batch.x, batch.y, {}};
    LossGraph graph(params, values_only, {.gradient_weight = 0.0});
    return graph.value_nll();
}

/// Mean Gaussian NLL of the batch gradients against the network's input-gradients, L_grad.
inline double loss_gradient_term(const NetworkParams& params, const Batch& batch,
                                 GradientSource source = GradientSource::Autodiff) {
    if (!batch.has_gradients()) {
        throw std::invalid_argument("loss_gradient_term: batch has no gradient observations; set the gradient weight to 0");
    }
    LossGraph graph(params, batch, {.gradient_weight = 1.0, .gradient_source = source});
    return graph.gradient_nll();
}

/// L = L_f + lambda * L_grad + L_prior.
inline double total_loss(const NetworkParams& params, const Batch& batch, double gradient_weight,
                         const PriorConfig& prior = {}) {
    if (gradient_weight < 0.0) throw std::invalid_argument("total_loss: gradient weight must be nonnegative");
    Batch used = batch;
    if (gradient_weight == 0.0) used.gradients.clear();
    LossGraph graph(params, used, {.gradient_weight = gradient_weight, .prior = prior});
    return graph.total();
}

// ------------------------------------------------------------- posterior

struct PosteriorEnsemble {
    Architecture architecture;
    std::vector<NetworkParams> samples;
    Normalization normalization;
    GradientSource gradient_source = GradientSource::Autodiff;

    std::size_t size() const { return samples.size(); }

    double mean_noise_var() const {
        double acc = 0.0;
        for (const auto& s : samples) acc += s.noise_var();
        return acc / static_cast<double>(samples.size());
    }

    void validate() const {
        if (samples.empty()) throw std::invalid_argument("posterior ensemble is empty");
        for (const auto& s : samples) {
            if (!(s.architecture() == architecture)) throw std::invalid_argument("ensemble architectures differ");
        }
        if (normalization.dim() != architecture.input_dim) {
            throw std::invalid_argument("ensemble normalization dimension mismatch");
        }
    }

    bool operator==(const PosteriorEnsemble&) const = default;
};

/// Sample-based predictive moments at one input, in problem units.
struct Prediction {
    double mean = 0.0;
    double variance = 0.0;
    std::vector<double> grad_mean;
    std::vector<double> grad_variance;
    // Input-gradient of `variance`; what acquisition gradients need besides grad_mean.
    std::vector<double> variance_gradient;

    double stddev() const { return std::sqrt(variance); }
};

/// Evaluates an ensemble at batches of inputs. Owns a scratch tape, so one
/// Predictor per thread; the ensemble itself is shared read-only.
class Predictor {
public:
    explicit Predictor(const PosteriorEnsemble& ensemble) : ensemble_(&ensemble) {
        ensemble.validate();
    }

    std::vector<Prediction> predict(std::span<const double> xs) {
        const std::size_t d = ensemble_->architecture.input_dim;
        if (xs.size() % d != 0 || xs.empty()) throw std::invalid_argument("predict: input size not a multiple of D");
        const std::size_t rows = xs.size() / d;
        const Normalization& norm = ensemble_->normalization;

        std::vector<double> unit(xs.size());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) unit[r * d + j] = norm.input(j, xs[r * d + j]);

        ensure_graph(rows);
        tape_.set_value(x_, unit);

        const std::size_t m = ensemble_->samples.size();
        std::vector<double> values(m * rows), grads(m * rows * d);
        for (std::size_t i = 0; i < m; ++i) {
            leaves_.load(tape_, ensemble_->samples[i].values());
            tape_.replay();
            const auto v = tape_.value(phi_);
            const auto g = tape_.value(gradient_);
            std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(i * rows));
            std::copy(g.begin(), g.end(), grads.begin() + static_cast<std::ptrdiff_t>(i * rows * d));
        }

        const double noise = ensemble_->mean_noise_var();
        const double inv_m = 1.0 / static_cast<double>(m);
        std::vector<Prediction> out(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            Prediction& p = out[r];
            double mu = 0.0;
            std::vector<double> mu_grad(d, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                mu += values[i * rows + r];
                for (std::size_t j = 0; j < d; ++j) mu_grad[j] += grads[(i * rows + r) * d + j];
            }
            mu *= inv_m;
            for (double& g : mu_grad) g *= inv_m;

            double var = 0.0;
            std::vector<double> grad_var(d, 0.0), var_grad(d, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double dv = values[i * rows + r] - mu;
                var += dv * dv;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dg = grads[(i * rows + r) * d + j] - mu_grad[j];
                    grad_var[j] += dg * dg;
                    var_grad[j] += 2.0 * dv * dg;
                }
            }
            var = var * inv_m + noise;

            p.mean = norm.mean_to_problem(mu);
            p.variance = norm.variance_to_problem(var);
            p.grad_mean.resize(d);
            p.grad_variance.resize(d);
            p.variance_gradient.resize(d);
            for (std::size_t j = 0; j < d; ++j) {
                p.grad_mean[j] = norm.gradient_to_problem(j, mu_grad[j]);
                p.grad_variance[j] = norm.gradient_variance_to_problem(j, grad_var[j] * inv_m + noise);
                // d var / d x in problem units: scale by y_std^2 and the input chain-rule factor.
                p.variance_gradient[j] =
                    norm.y_std * norm.y_std * var_grad[j] * inv_m / norm.half_range(j);
            }
        }
        return out;
    }

    Prediction predict_one(std::span<const double> x) { return predict(x).front(); }

    /// Per-member value outputs (problem units) at the given inputs; members x rows.
    std::vector<double> member_values(std::span<const double> xs) {
        const std::size_t d = ensemble_->architecture.input_dim;
        const std::size_t rows = xs.size() / d;
        const Normalization& norm = ensemble_->normalization;
        std::vector<double> unit(xs.size());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) unit[r * d + j] = norm.input(j, xs[r * d + j]);
        ensure_graph(rows);
        tape_.set_value(x_, unit);
        std::vector<double> out;
        for (const auto& s : ensemble_->samples) {
            leaves_.load(tape_, s.values());
            tape_.replay();
            for (double v : tape_.value(phi_)) out.push_back(norm.mean_to_problem(v));
        }
        return out;
    }

private:
    void ensure_graph(std::size_t rows) {
        if (rows == rows_) return;
        tape_.clear();
        const Architecture& arch = ensemble_->architecture;
        const std::size_t d = arch.input_dim;
        leaves_ = NetworkLeaves::record(tape_, ensemble_->samples.front());
        const std::vector<double> zeros(rows * d, 0.0);
        x_ = tape_.variable(rows, d, zeros);
        ad::Var out = forward(leaves_, x_);
        if (ensemble_->gradient_source == GradientSource::Heads) {
            phi_ = ad::matmul(out, column_selector(tape_, arch.output_dim, 0, 1));
            gradient_ = ad::matmul(out, column_selector(tape_, arch.output_dim, 1, d));
        } else {
            phi_ = arch.output_dim == 1 ? out : ad::matmul(out, column_selector(tape_, arch.output_dim, 0, 1));
            gradient_ = ad::grad_wrt_inputs(phi_, x_);
        }
        rows_ = rows;
    }

    const PosteriorEnsemble* ensemble_;
    ad::Tape tape_;
    NetworkLeaves leaves_;
    ad::Var x_, phi_, gradient_;
    std::size_t rows_ = 0;
};

inline Prediction predict(const PosteriorEnsemble& ensemble, std::span<const double> x) {
    Predictor predictor(ensemble);
    return predictor.predict_one(x);
}

// ------------------------------------------------------------- serialization

inline nlohmann::json to_json(const PosteriorEnsemble& ensemble) {
    nlohmann::json arch{{"input_dim", ensemble.architecture.input_dim},
                        {"hidden_layers", ensemble.architecture.hidden_layers},
                        {"nodes_per_layer", ensemble.architecture.nodes_per_layer},
                        {"output_dim", ensemble.architecture.output_dim},
                        {"activation", "tanh"}};
    nlohmann::json norm{{"lower", ensemble.normalization.lower},
                        {"upper", ensemble.normalization.upper},
                        {"y_mean", ensemble.normalization.y_mean},
                        {"y_std", ensemble.normalization.y_std}};
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : ensemble.samples) {
        samples.push_back(std::vector<double>(s.values().begin(), s.values().end()));
    }
    return {{"format", "ginnbo-ensemble/1"},
            {"layout", "layer-major: weights (fan_out x fan_in, row-major), biases; then log_noise_var"},
            {"architecture", arch},
            {"gradient_source", ensemble.gradient_source == GradientSource::Heads ? "heads" : "autodiff"},
            {"normalization", norm},
            {"samples", samples}};
}

inline PosteriorEnsemble ensemble_from_json(const nlohmann::json& doc) {
    if (doc.at("format") != "ginnbo-ensemble/1") throw std::invalid_argument("unknown ensemble format");
    PosteriorEnsemble e;
    const auto& a = doc.at("architecture");
    if (a.at("activation") != "tanh") throw std::invalid_argument("only tanh activations are supported");
    e.architecture.input_dim = a.at("input_dim");
    e.architecture.hidden_layers = a.at("hidden_layers");
    e.architecture.nodes_per_layer = a.at("nodes_per_layer");
    e.architecture.output_dim = a.at("output_dim");
    e.gradient_source = doc.at("gradient_source") == "heads" ? GradientSource::Heads : GradientSource::Autodiff;
    const auto& n = doc.at("normalization");
    e.normalization.lower = n.at("lower").get<std::vector<double>>();
    e.normalization.upper = n.at("upper").get<std::vector<double>>();
    e.normalization.y_mean = n.at("y_mean");
    e.normalization.y_std = n.at("y_std");
    for (const auto& s : doc.at("samples")) {
        e.samples.emplace_back(e.architecture, s.get<std::vector<double>>());
    }
    e.validate();
    return e;
}

}  // namespace ginnbo::bnn
