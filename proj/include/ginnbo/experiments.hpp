#pragma once

// Campaign drivers behind the command line: the 1D ablation, regret
// benchmarks and the training-time study. Each writes CSV, SVG and a
// manifest into an output directory.

#include "ginnbo/bo.hpp"
#include "ginnbo/config.hpp"
#include "ginnbo/sghmc.hpp"
#include "ginnbo/svg.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#ifndef GINNBO_VERSION
#define GINNBO_VERSION "0.0.0"
#endif

namespace ginnbo::experiments {

namespace fs = std::filesystem;

inline std::string version() { return std::string("ginnbo ") + GINNBO_VERSION; }

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Runs fn(0..n-1) on up to `jobs` threads. The first exception is rethrown
/// after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    const auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (error) std::rethrow_exception(error);
}

inline void prepare_output_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path probe = dir / ".write_probe";
    std::ofstream out(probe);
    if (ec || !out) throw std::runtime_error("output directory '" + dir.string() + "' is not writable");
    out.close();
    fs::remove(probe, ec);
}

inline void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("failed to write " + path.string());
}

// ------------------------------------------------------------------ demo1d

enum class Demo1dVariant { Joint, FunctionOnly, IndependentHeads };

inline const std::vector<Demo1dVariant>& demo1d_variants() {
    static const std::vector<Demo1dVariant> v{Demo1dVariant::Joint, Demo1dVariant::FunctionOnly,
                                              Demo1dVariant::IndependentHeads};
    return v;
}

inline std::string to_string(Demo1dVariant v) {
    switch (v) {
        case Demo1dVariant::Joint: return "joint";
        case Demo1dVariant::FunctionOnly: return "function_only";
        case Demo1dVariant::IndependentHeads: return "independent_heads";
    }
    return "?";
}

struct GridPrediction {
    std::vector<double> x, f, df, mean, stddev, grad_mean, grad_stddev;
};

struct Demo1dMetrics {
    std::uint64_t seed = 0;
    Demo1dVariant variant = Demo1dVariant::Joint;
    double value_rmse = 0.0;
    double gradient_rmse = 0.0;
    double fd_consistency = 0.0;  // RMS of predicted derivative minus FD of predicted mean
    double band_train = 0.0;      // mean 4 sigma width at training points
    double band_far = 0.0;        // 4 sigma width at the grid point farthest from the data
    double train_seconds = 0.0;
    GridPrediction grid;
};

struct Demo1dResult {
    std::vector<bo::Row> training;  // per seed, concatenated in seed order
    std::vector<Demo1dMetrics> cells;
    std::vector<std::string> outputs;
};

/// Trains and evaluates one ablation variant on the 1D demo problem.
inline Demo1dMetrics demo1d_cell(const config::Config& cfg, const bo::Dataset& data, std::uint64_t seed,
                                 Demo1dVariant variant) {
    const auto problem = benchmarks::demo1d();
    bnn::Architecture arch = cfg.experiment.architecture;
    arch.input_dim = 1;
    arch.output_dim = variant == Demo1dVariant::IndependentHeads ? 2 : 1;
    sghmc::TrainingOptions options{variant == Demo1dVariant::FunctionOnly ? 0.0 : 1.0, cfg.experiment.prior,
                                   variant == Demo1dVariant::IndependentHeads ? bnn::GradientSource::Heads
                                                                              : bnn::GradientSource::Autodiff};
    const auto start = std::chrono::steady_clock::now();
    const auto salt = 60 + static_cast<std::uint64_t>(variant);
    const auto ensemble = sghmc::run(data.training_data(), data.normalization(), arch, cfg.experiment.sghmc, options,
                                     mix_seed(seed, salt));
    Demo1dMetrics m;
    m.seed = seed;
    m.variant = variant;
    m.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const std::size_t n = cfg.demo1d.grid_points;
    auto& g = m.grid;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = problem.lower[0] + (problem.upper[0] - problem.lower[0]) * static_cast<double>(i) /
                                                static_cast<double>(n - 1);
        g.x.push_back(x);
        g.f.push_back(problem.evaluate(std::span(&x, 1)));
        g.df.push_back(problem.gradient(std::span(&x, 1))[0]);
    }
    bnn::Predictor predictor(ensemble);
    const auto preds = predictor.predict(g.x);
    constexpr double h = 1e-5;
    std::vector<double> shifted(2 * n);
    for (std::size_t i = 0; i < n; ++i) shifted[i] = g.x[i] + h, shifted[n + i] = g.x[i] - h;
    const auto shifted_preds = predictor.predict(shifted);

    double se_value = 0.0, se_grad = 0.0, se_fd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = preds[i];
        g.mean.push_back(p.mean);
        g.stddev.push_back(p.stddev());
        g.grad_mean.push_back(p.grad_mean[0]);
        g.grad_stddev.push_back(std::sqrt(p.grad_variance[0]));
        se_value += (p.mean - g.f[i]) * (p.mean - g.f[i]);
        se_grad += (p.grad_mean[0] - g.df[i]) * (p.grad_mean[0] - g.df[i]);
        const double fd = (shifted_preds[i].mean - shifted_preds[n + i].mean) / (2.0 * h);
        se_fd += (p.grad_mean[0] - fd) * (p.grad_mean[0] - fd);
    }
    m.value_rmse = std::sqrt(se_value / static_cast<double>(n));
    m.gradient_rmse = std::sqrt(se_grad / static_cast<double>(n));
    m.fd_consistency = std::sqrt(se_fd / static_cast<double>(n));

    std::vector<double> train_x;
    for (const auto& r : data.rows()) train_x.push_back(r.x[0]);
    for (const auto& p : predictor.predict(train_x)) m.band_train += 4.0 * p.stddev();
    m.band_train /= static_cast<double>(train_x.size());
    std::size_t far = 0;
    double far_distance = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        double nearest = INFINITY;
        for (double t : train_x) nearest = std::min(nearest, std::abs(g.x[i] - t));
        if (nearest > far_distance) far_distance = nearest, far = i;
    }
    m.band_far = 4.0 * g.stddev[far];
    return m;
}

inline svg::Panel demo1d_panel(const Demo1dMetrics& m, const std::vector<bo::Row>& rows, bool gradients) {
    const auto& g = m.grid;
    svg::Panel panel{to_string(m.variant) + (gradients ? " (derivative)" : " (value)"), "x",
                     gradients ? "df/dx" : "f(x)", false, {}};
    svg::Series truth{"true", "#000000", g.x, gradients ? g.df : g.f, {}, {}, false, true};
    svg::Series pred{"mean +/- 2 sd", svg::palette()[static_cast<std::size_t>(m.variant)], g.x, {}, {}, {}, false, false};
    const auto& mu = gradients ? g.grad_mean : g.mean;
    const auto& sd = gradients ? g.grad_stddev : g.stddev;
    pred.y = mu;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        pred.lower.push_back(mu[i] - 2.0 * sd[i]);
        pred.upper.push_back(mu[i] + 2.0 * sd[i]);
    }
    svg::Series obs{"data", "#000000", {}, {}, {}, {}, true, false};
    for (const auto& r : rows) {
        obs.x.push_back(r.x[0]);
        obs.y.push_back(gradients ? r.gradient[0] : r.y);
    }
    panel.series = {pred, truth, obs};
    return panel;
}

inline Demo1dResult run_demo1d(const config::Config& cfg, const fs::path& out_dir, std::size_t jobs) {
    prepare_output_dir(out_dir);
    const auto started = utc_timestamp();
    const auto problem = benchmarks::demo1d();
    const auto& seeds = cfg.demo1d.seeds;
    std::vector<bo::Dataset> designs;
    for (auto seed : seeds) designs.push_back(bo::stratified_design_1d(problem, seed, cfg.demo1d.training_points));

    const auto& variants = demo1d_variants();
    std::vector<Demo1dMetrics> cells(seeds.size() * variants.size());
    std::mutex log_mutex;
    parallel_for(cells.size(), jobs, [&](std::size_t i) {
        const std::size_t s = i / variants.size();
        cells[i] = demo1d_cell(cfg, designs[s], seeds[s], variants[i % variants.size()]);
        std::lock_guard lock(log_mutex);
        std::clog << "[demo1d] seed " << seeds[s] << ' ' << to_string(cells[i].variant)
                  << ": value RMSE " << cells[i].value_rmse << ", FD mismatch " << cells[i].fd_consistency << '\n';
    });

    Demo1dResult result;
    result.cells = cells;
    using bo::format_number;

    std::string training = "seed,x,y,dydx\n";
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        for (const auto& r : designs[s].rows()) {
            training += std::to_string(seeds[s]) + ',' + format_number(r.x[0]) + ',' + format_number(r.y) + ',' +
                        format_number(r.gradient[0]) + '\n';
            result.training.push_back(r);
        }
    }
    std::string grid = "seed,variant,x,f,dfdx,mean,lower,upper,grad_mean,grad_lower,grad_upper\n";
    std::string report = "seed,variant,value_rmse,gradient_rmse,fd_consistency,band_train,band_far,train_s\n";
    for (const auto& c : cells) {
        const auto& g = c.grid;
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            grid += std::to_string(c.seed) + ',' + to_string(c.variant) + ',' + format_number(g.x[i]) + ',' +
                    format_number(g.f[i]) + ',' + format_number(g.df[i]) + ',' + format_number(g.mean[i]) + ',' +
                    format_number(g.mean[i] - 2.0 * g.stddev[i]) + ',' + format_number(g.mean[i] + 2.0 * g.stddev[i]) +
                    ',' + format_number(g.grad_mean[i]) + ',' +
                    format_number(g.grad_mean[i] - 2.0 * g.grad_stddev[i]) + ',' +
                    format_number(g.grad_mean[i] + 2.0 * g.grad_stddev[i]) + '\n';
        }
        report += std::to_string(c.seed) + ',' + to_string(c.variant) + ',' + format_number(c.value_rmse) + ',' +
                  format_number(c.gradient_rmse) + ',' + format_number(c.fd_consistency) + ',' +
                  format_number(c.band_train) + ',' + format_number(c.band_far) + ',' + format_number(c.train_seconds) +
                  '\n';
    }
    // Plots show the first seed.
    std::vector<svg::Panel> value_panels, gradient_panels;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        value_panels.push_back(demo1d_panel(cells[v], designs[0].rows(), false));
        gradient_panels.push_back(demo1d_panel(cells[v], designs[0].rows(), true));
    }

    const std::vector<std::pair<std::string, std::string>> files{
        {"demo1d_training.csv", training},
        {"demo1d_grid.csv", grid},
        {"demo1d_report.csv", report},
        {"demo1d_values.svg", svg::render(value_panels)},
        {"demo1d_gradients.svg", svg::render(gradient_panels)},
    };
    for (const auto& [name, content] : files) {
        write_file(out_dir / name, content);
        result.outputs.push_back((out_dir / name).string());
    }

    nlohmann::json manifest{{"command", "demo1d"},        {"software", version()},
                            {"config", config::to_text(cfg)}, {"seeds", seeds},
                            {"started_utc", started},     {"finished_utc", utc_timestamp()},
                            {"outputs", result.outputs}};
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return result;
}

// ------------------------------------------------------------------ benchmark

struct CellKey {
    std::string problem;
    std::string method;  // "lcb", "logei" or "random"
    double gradient_weight = 0.0;

    std::string variant_name() const {
        return method == "random" ? "random" : method + "_lambda" + bo::format_number(gradient_weight);
    }
    std::string file_stem() const { return problem + "_" + variant_name(); }
    auto operator<=>(const CellKey&) const = default;
};

struct BenchmarkResult {
    std::map<CellKey, std::vector<bo::RegretTrace>> traces;  // seed order follows the seed list
    std::vector<std::string> outputs;
    std::size_t failed_runs = 0;
    std::size_t total_runs = 0;

    /// Final regret of every non-failed run of one variant.
    std::vector<double> final_regrets(const CellKey& key) const {
        std::vector<double> out;
        for (const auto& t : traces.at(key)) {
            if (!t.failed && !t.records.empty()) out.push_back(t.records.back().regret);
        }
        return out;
    }
};

inline BenchmarkResult run_benchmark(const config::Config& cfg, const fs::path& out_dir, std::size_t jobs) {
    prepare_output_dir(out_dir);
    const auto started = utc_timestamp();
    const auto& seeds = cfg.experiment.seeds;

    struct Cell {
        CellKey key;
        std::size_t seed_index;
    };
    std::vector<Cell> cells;
    BenchmarkResult result;
    for (const auto& problem : cfg.problems) {
        for (auto kind : cfg.acquisitions) {
            for (double w : cfg.gradient_weights) {
                CellKey key{problem, acquisition::to_string(kind), w};
                result.traces[key].resize(seeds.size());
                for (std::size_t s = 0; s < seeds.size(); ++s) cells.push_back({key, s});
            }
        }
        if (cfg.random_search) {
            CellKey key{problem, "random", 0.0};
            result.traces[key].resize(seeds.size());
            for (std::size_t s = 0; s < seeds.size(); ++s) cells.push_back({key, s});
        }
    }

    std::mutex log_mutex;
    std::atomic<std::size_t> done{0};
    parallel_for(cells.size(), jobs, [&](std::size_t i) {
        const auto& cell = cells[i];
        bo::ExperimentConfig ex = cfg.experiment;
        ex.problem = cell.key.problem;
        ex.gradient_weight = cell.key.gradient_weight;
        const auto start = std::chrono::steady_clock::now();
        const std::uint64_t seed = seeds[cell.seed_index];
        bo::RegretTrace trace;
        if (cell.key.method == "random") {
            trace = bo::run_random_search(ex, seed);
        } else {
            ex.acquisition = acquisition::parse_kind(cell.key.method);
            try {
                trace = bo::run_bo(ex, seed);
            } catch (const std::exception& e) {
                trace.seed = seed;
                trace.dim = benchmarks::make_problem(ex.problem).dim;
                trace.failed = true;
                trace.failure = e.what();
            }
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::lock_guard lock(log_mutex);
        std::clog << "[benchmark] " << ++done << '/' << cells.size() << ' ' << cell.key.file_stem() << " seed " << seed
                  << ": " << (trace.failed ? "FAILED (" + trace.failure + ")" : "final regret " +
                                                  bo::format_number(trace.records.back().regret))
                  << " in " << seconds << " s\n";
        result.traces[cell.key][cell.seed_index] = std::move(trace);
    });

    nlohmann::json runs = nlohmann::json::array();
    for (const auto& [key, traces] : result.traces) {
        const auto path = out_dir / (key.file_stem() + ".csv");
        std::ofstream csv(path, std::ios::binary);
        csv << bo::trace_csv_header(benchmarks::make_problem(key.problem).dim) << '\n';
        for (const auto& t : traces) {
            bo::write_trace_rows(csv, t);
            ++result.total_runs;
            if (t.failed) ++result.failed_runs;
            runs.push_back({{"problem", key.problem},
                            {"method", key.method},
                            {"gradient_weight", key.gradient_weight},
                            {"seed", t.seed},
                            {"failed", t.failed},
                            {"failure", t.failure},
                            {"step_size_retries", t.step_size_retries},
                            {"iterations_completed", t.records.size()},
                            {"csv", path.string()}});
        }
        if (!csv) throw std::runtime_error("failed to write " + path.string());
        result.outputs.push_back(path.string());
    }

    for (const auto& problem : cfg.problems) {
        svg::Panel panel{problem + ": regret, mean +/- 1 sd over seeds", "iteration", "regret", true, {}};
        std::size_t colour = 0;
        for (const auto& [key, traces] : result.traces) {
            if (key.problem != problem) continue;
            std::vector<std::vector<double>> series;
            for (const auto& t : traces) {
                std::vector<double> r;
                for (const auto& rec : t.records) r.push_back(rec.regret);
                series.push_back(std::move(r));
            }
            const auto agg = bo::aggregate(series);
            svg::Series s{key.variant_name(), svg::palette()[colour++ % svg::palette().size()], {}, agg.mean, {}, {},
                          false, key.method == "random"};
            for (std::size_t t = 0; t < agg.mean.size(); ++t) {
                s.x.push_back(static_cast<double>(t + 1));
                s.lower.push_back(agg.mean[t] - agg.stddev[t]);
                s.upper.push_back(agg.mean[t] + agg.stddev[t]);
            }
            panel.series.push_back(std::move(s));
        }
        const auto path = out_dir / (problem + "_regret.svg");
        write_file(path, svg::render({panel}, 640.0, 420.0));
        result.outputs.push_back(path.string());
    }

    nlohmann::json manifest{{"command", "benchmark"},
                            {"software", version()},
                            {"config", config::to_text(cfg)},
                            {"seeds", seeds},
                            {"started_utc", started},
                            {"finished_utc", utc_timestamp()},
                            {"total_runs", result.total_runs},
                            {"failed_runs", result.failed_runs},
                            {"runs", runs},
                            {"outputs", result.outputs}};
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return result;
}

// ------------------------------------------------------------------ timing

struct TimingRow {
    std::string problem;
    std::size_t dim = 0;
    std::size_t dataset_size = 0;
    std::vector<double> seconds;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
};

/// Times one surrogate training run; the dataset is fixed per problem.
inline double time_training(const config::Config& cfg, const bo::Dataset& data, const std::string& problem,
                            std::uint64_t seed) {
    bo::ExperimentConfig ex = cfg.experiment;
    ex.problem = problem;
    const auto batch = data.training_data();
    const sghmc::TrainingOptions options{ex.gradient_weight, ex.prior, bnn::GradientSource::Autodiff};
    const auto start = std::chrono::steady_clock::now();
    const auto ensemble = sghmc::run(batch, data.normalization(), ex.resolved_architecture(), ex.sghmc, options, seed);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (ensemble.samples.empty()) throw std::logic_error("timing: empty ensemble");
    return s;
}

/// Repetitions run sequentially so that measurements do not compete for cores.
inline std::vector<TimingRow> run_timing(const config::Config& cfg, const fs::path& out_dir) {
    prepare_output_dir(out_dir);
    const auto started = utc_timestamp();
    std::vector<TimingRow> rows;
    for (const auto& name : cfg.timing.problems) {
        const auto problem = benchmarks::make_problem(name, cfg.experiment.noise_std);
        const std::size_t n = cfg.timing.dataset_size ? cfg.timing.dataset_size : 2 * problem.dim + 20;
        const auto data = bo::initial_design(problem, cfg.timing.seed, n);
        TimingRow row{name, problem.dim, n, {}, 0.0, 0.0};
        for (std::size_t r = 0; r < cfg.timing.repetitions; ++r) {
            row.seconds.push_back(time_training(cfg, data, name, mix_seed(cfg.timing.seed, 70 + r)));
            std::clog << "[timing] " << name << " repetition " << r + 1 << '/' << cfg.timing.repetitions << ": "
                      << row.seconds.back() << " s\n";
        }
        for (double s : row.seconds) row.mean += s;
        row.mean /= static_cast<double>(row.seconds.size());
        for (double s : row.seconds) row.stddev += (s - row.mean) * (s - row.mean);
        row.stddev = row.seconds.size() > 1 ? std::sqrt(row.stddev / static_cast<double>(row.seconds.size() - 1)) : 0.0;
        rows.push_back(std::move(row));
    }

    std::string table = "problem,D,mean_s,std_s\n";
    std::string raw = "problem,D,dataset_size,repetition,seconds\n";
    for (const auto& r : rows) {
        table += r.problem + ',' + std::to_string(r.dim) + ',' + bo::format_number(r.mean) + ',' +
                 bo::format_number(r.stddev) + '\n';
        for (std::size_t i = 0; i < r.seconds.size(); ++i) {
            raw += r.problem + ',' + std::to_string(r.dim) + ',' + std::to_string(r.dataset_size) + ',' +
                   std::to_string(i + 1) + ',' + bo::format_number(r.seconds[i]) + '\n';
        }
    }
    write_file(out_dir / "timing.csv", table);
    write_file(out_dir / "timing_runs.csv", raw);
    nlohmann::json manifest{{"command", "timing"},
                            {"software", version()},
                            {"config", config::to_text(cfg)},
                            {"seeds", {cfg.timing.seed}},
                            {"started_utc", started},
                            {"finished_utc", utc_timestamp()},
                            {"outputs", {(out_dir / "timing.csv").string(), (out_dir / "timing_runs.csv").string()}}};
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return rows;
}

}  // namespace ginnbo::experiments
