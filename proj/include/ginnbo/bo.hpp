#pragma once

// The outer optimization loop: dataset, retrain, optimize the acquisition,
// observe, repeat. Also the random-search control and trace export.

#include "ginnbo/acquisition.hpp"
#include "ginnbo/benchmarks.hpp"
#include "ginnbo/bnn.hpp"
#include "ginnbo/random.hpp"
#include "ginnbo/sghmc.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ginnbo::bo {

/// One observed point in problem units.
struct Row {
    std::vector<double> x;
    double y = 0.0;
    std::vector<double> gradient;
};

/// Observed rows plus the normalization derived from them.
class Dataset {
public:
    Dataset(std::vector<double> lower, std::vector<double> upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
        if (lower_.empty() || lower_.size() != upper_.size()) throw std::invalid_argument("dataset: bad bounds");
        refit();
    }

    void add(Row row) {
        if (row.x.size() != dim() || row.gradient.size() != dim()) throw std::invalid_argument("dataset: row dimension");
        for (std::size_t j = 0; j < dim(); ++j) {
            if (!(row.x[j] >= lower_[j] && row.x[j] <= upper_[j])) throw std::out_of_range("dataset: x outside bounds");
        }
        rows_.push_back(std::move(row));
        refit();
    }

    std::size_t dim() const { return lower_.size(); }
    std::size_t size() const { return rows_.size(); }
    const std::vector<Row>& rows() const { return rows_; }
    const bnn::Normalization& normalization() const { return norm_; }

    double incumbent() const {
        if (rows_.empty()) throw std::logic_error("dataset: incumbent of an empty dataset");
        double best = rows_.front().y;
        for (const auto& r : rows_) best = std::min(best, r.y);
        return best;
    }

    /// All rows in normalized units, gradients included.
    bnn::Batch training_data() const {
        if (rows_.empty()) throw std::logic_error("dataset: no rows to train on");
        bnn::Batch b{dim(), {}, {}, {}};
        for (const auto& r : rows_) {
            for (std::size_t j = 0; j < dim(); ++j) b.x.push_back(norm_.input(j, r.x[j]));
            b.y.push_back(norm_.output(r.y));
            for (std::size_t j = 0; j < dim(); ++j) b.gradients.push_back(norm_.gradient(j, r.gradient[j]));
        }
        return b;
    }

private:
    void refit() {
        norm_.lower = lower_;
        norm_.upper = upper_;
        if (rows_.empty()) {
            norm_.y_mean = 0.0;
            norm_.y_std = 1.0;
            return;
        }
        double mean = 0.0;
        for (const auto& r : rows_) mean += r.y;
        mean /= static_cast<double>(rows_.size());
        double var = 0.0;
        for (const auto& r : rows_) var += (r.y - mean) * (r.y - mean);
        var /= static_cast<double>(rows_.size());
        norm_.y_mean = mean;
        // A single row or a flat design leaves the scale at 1.
        norm_.y_std = var > 1e-24 ? std::sqrt(var) : 1.0;
    }

    std::vector<double> lower_;
    std::vector<double> upper_;
    std::vector<Row> rows_;
    bnn::Normalization norm_;
};

inline std::vector<double> uniform_point(const benchmarks::Problem& problem, Rng& rng) {
    std::vector<double> x(problem.dim);
    for (std::size_t j = 0; j < problem.dim; ++j) x[j] = rng.uniform(problem.lower[j], problem.upper[j]);
    return x;
}

inline Row observe_row(const benchmarks::Problem& problem, std::vector<double> x, std::uint64_t seed) {
    auto obs = benchmarks::observe(problem, x, seed);
    return Row{std::move(x), obs.y, std::move(obs.gradient)};
}

/// `size` uniform points (default 2D), observed; deterministic per seed.
inline Dataset initial_design(const benchmarks::Problem& problem, std::uint64_t seed, std::size_t size = 0) {
    if (size == 0) size = 2 * problem.dim;
    Dataset data(problem.lower, problem.upper);
    Rng rng(mix_seed(seed, 10));
    for (std::size_t i = 0; i < size; ++i) {
        auto x = uniform_point(problem, rng);
        data.add(observe_row(problem, std::move(x), mix_seed(mix_seed(seed, 11), i)));
    }
    return data;
}

struct ExperimentConfig {
    std::string problem = "mccormick";
    double noise_std = 0.0;
    acquisition::AcquisitionKind acquisition = acquisition::AcquisitionKind::Lcb;
    double beta = 2.0;
    double gradient_weight = 1.0;
    bnn::Architecture architecture{};  // input_dim is taken from the problem
    sghmc::SghmcConfig sghmc{};
    bnn::PriorConfig prior{};
    std::size_t restarts = 10;
    std::size_t max_iterations = 100;
    double gradient_tolerance = 1e-6;
    std::size_t iterations = 50;
    std::size_t initial_design_size = 0;  // 0 selects 2D
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("campaign: iterations must be >= 1");
        if (seeds.empty()) throw std::invalid_argument("campaign: seeds must be nonempty");
        if (gradient_weight < 0.0) throw std::invalid_argument("campaign: gradient weight must be nonnegative");
        if (!(beta > 0.0)) throw std::invalid_argument("campaign: beta must be > 0");
        sghmc.validate();
        resolved_architecture().validate();
    }

    bnn::Architecture resolved_architecture() const {
        bnn::Architecture a = architecture;
        a.input_dim = benchmarks::make_problem(problem).dim;
        a.output_dim = 1;
        return a;
    }
};

struct TraceRecord {
    std::size_t iteration = 0;
    std::vector<double> x;
    double y = 0.0;
    double incumbent = 0.0;
    double regret = std::numeric_limits<double>::quiet_NaN();
    double train_seconds = 0.0;
    double af_seconds = 0.0;
};

struct RegretTrace {
    std::uint64_t seed = 0;
    std::size_t dim = 0;
    std::vector<TraceRecord> records;
    bool failed = false;
    std::string failure;
    std::size_t step_size_retries = 0;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline double regret_or_nan(const benchmarks::Problem& problem, double incumbent) {
    return problem.optimum_value ? incumbent - *problem.optimum_value : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// One uniform point per equal-width stratum of a 1D problem's interval.
inline Dataset stratified_design_1d(const benchmarks::Problem& problem, std::uint64_t seed, std::size_t size) {
    if (problem.dim != 1 || size == 0) throw std::invalid_argument("stratified_design_1d: needs a 1D problem and size >= 1");
    Dataset data(problem.lower, problem.upper);
    Rng rng(mix_seed(seed, 12));
    const double width = (problem.upper[0] - problem.lower[0]) / static_cast<double>(size);
    for (std::size_t i = 0; i < size; ++i) {
        const double lo = problem.lower[0] + width * static_cast<double>(i);
        std::vector<double> x{std::min(rng.uniform(lo, lo + width), problem.upper[0])};
        data.add(observe_row(problem, std::move(x), mix_seed(mix_seed(seed, 11), i)));
    }
    return data;
}

/// Surrogate-driven loop: T iterations, each retraining from scratch.
inline RegretTrace run_bo(const ExperimentConfig& config, std::uint64_t seed) {
    config.validate();
    const auto problem = benchmarks::make_problem(config.problem, config.noise_std);
    const auto arch = config.resolved_architecture();
    Dataset data = initial_design(problem, seed, config.initial_design_size);
    double incumbent = data.incumbent();

    sghmc::TrainingOptions training{config.gradient_weight, config.prior, bnn::GradientSource::Autodiff};
    acquisition::OptimizerConfig optimizer;
    optimizer.restarts = config.restarts;
    optimizer.max_iterations = config.max_iterations;
    optimizer.gradient_tolerance = config.gradient_tolerance;
    optimizer.lower = problem.lower;
    optimizer.upper = problem.upper;

    RegretTrace trace{seed, problem.dim, {}, false, {}, 0};
    for (std::size_t t = 1; t <= config.iterations; ++t) {
        const auto train_start = std::chrono::steady_clock::now();
        const auto batch = data.training_data();
        const std::uint64_t train_seed = mix_seed(mix_seed(seed, 20), t);
        bnn::PosteriorEnsemble ensemble;
        try {
            ensemble = sghmc::run(batch, data.normalization(), arch, config.sghmc, training, train_seed);
        } catch (const sghmc::SamplerDiverged& first) {
            sghmc::SghmcConfig halved = config.sghmc;
            halved.step_size = 0.5 * config.sghmc.resolved_step_size(batch.rows());
            ++trace.step_size_retries;
            try {
                ensemble = sghmc::run(batch, data.normalization(), arch, halved, training, train_seed);
            } catch (const sghmc::SamplerDiverged& second) {
                trace.failed = true;
                trace.failure = "iteration " + std::to_string(t) + ": " + second.what();
                break;
            }
        }
        const double train_seconds = detail::seconds_since(train_start);

        const auto af_start = std::chrono::steady_clock::now();
        const acquisition::AcquisitionSpec spec{config.acquisition, config.beta, incumbent};
        auto x = acquisition::optimize(ensemble, spec, optimizer, mix_seed(mix_seed(seed, 30), t));
        const double af_seconds = detail::seconds_since(af_start);

        Row row = observe_row(problem, std::move(x), mix_seed(mix_seed(seed, 40), t));
        incumbent = std::min(incumbent, row.y);
        trace.records.push_back(
            {t, row.x, row.y, incumbent, detail::regret_or_nan(problem, incumbent), train_seconds, af_seconds});
        data.add(std::move(row));
    }
    return trace;
}

/// Uniform random queries with the same initial design and budget.
inline RegretTrace run_random_search(const ExperimentConfig& config, std::uint64_t seed) {
    if (config.iterations < 1) throw std::invalid_argument("campaign: iterations must be >= 1");
    const auto problem = benchmarks::make_problem(config.problem, config.noise_std);
    Dataset data = initial_design(problem, seed, config.initial_design_size);
    double incumbent = data.incumbent();
    Rng rng(mix_seed(seed, 50));
    RegretTrace trace{seed, problem.dim, {}, false, {}, 0};
    for (std::size_t t = 1; t <= config.iterations; ++t) {
        Row row = observe_row(problem, uniform_point(problem, rng), mix_seed(mix_seed(seed, 40), t));
        incumbent = std::min(incumbent, row.y);
        trace.records.push_back({t, row.x, row.y, incumbent, detail::regret_or_nan(problem, incumbent), 0.0, 0.0});
    }
    return trace;
}

/// R_t = F(x_t) - f(x*), nonnegative.
inline std::vector<double> regret(const RegretTrace& trace, const benchmarks::Problem& problem) {
    if (!problem.optimum_value) {
        throw std::invalid_argument("regret: optimum of " + problem.name +
                                    " is unknown; normalize by the best value found across runs instead");
    }
    std::vector<double> out;
    out.reserve(trace.records.size());
    for (const auto& r : trace.records) out.push_back(r.incumbent - *problem.optimum_value);
    return out;
}

struct Aggregate {
    std::vector<double> mean;
    std::vector<double> stddev;  // population standard deviation across runs
    std::vector<std::size_t> count;
};

/// Per-iteration mean and spread over (possibly ragged) series.
inline Aggregate aggregate(const std::vector<std::vector<double>>& series) {
    std::size_t length = 0;
    for (const auto& s : series) length = std::max(length, s.size());
    Aggregate a{std::vector<double>(length, 0.0), std::vector<double>(length, 0.0), std::vector<std::size_t>(length, 0)};
    for (std::size_t t = 0; t < length; ++t) {
        double sum = 0.0, sq = 0.0;
        for (const auto& s : series) {
            if (t >= s.size()) continue;
            sum += s[t];
            ++a.count[t];
        }
        if (a.count[t] == 0) continue;
        a.mean[t] = sum / static_cast<double>(a.count[t]);
        for (const auto& s : series) {
            if (t < s.size()) sq += (s[t] - a.mean[t]) * (s[t] - a.mean[t]);
        }
        a.stddev[t] = std::sqrt(sq / static_cast<double>(a.count[t]));
    }
    return a;
}

inline double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ------------------------------------------------------------------ CSV

/// Shortest round-trip decimal form; independent of the global locale.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string trace_csv_header(std::size_t dim) {
    std::string h = "seed,iteration";
    for (std::size_t j = 1; j <= dim; ++j) h += ",x_" + std::to_string(j);
    return h + ",y,incumbent,regret,wallclock_train_s,wallclock_af_s";
}

inline void write_trace_rows(std::ostream& os, const RegretTrace& trace) {
    for (const auto& r : trace.records) {
        os << trace.seed << ',' << r.iteration;
        for (double v : r.x) os << ',' << format_number(v);
        os << ',' << format_number(r.y) << ',' << format_number(r.incumbent) << ',' << format_number(r.regret) << ','
           << format_number(r.train_seconds) << ',' << format_number(r.af_seconds) << '\n';
    }
}

inline void write_trace_csv(std::ostream& os, std::span<const RegretTrace> traces) {
    if (traces.empty()) throw std::invalid_argument("write_trace_csv: no traces");
    os << trace_csv_header(traces.front().dim) << '\n';
    for (const auto& t : traces) write_trace_rows(os, t);
}

}  // namespace ginnbo::bo
