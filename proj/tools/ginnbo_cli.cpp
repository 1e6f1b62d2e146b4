// Command-line experiment runner: demo1d, benchmark and timing campaigns.

#include "ginnbo/experiments.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

namespace ex = ginnbo::experiments;
namespace config = ginnbo::config;

struct Options {
    std::string config_path;
    std::string out_dir;
    std::string seeds;
    std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, Options& opt, const std::string& default_out) {
    opt.out_dir = default_out;
    cmd->add_option("--config", opt.config_path, "configuration file (defaults are used when omitted)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--seeds", opt.seeds, "comma-separated seed list overriding the config");
    cmd->add_option("--jobs", opt.jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
}

config::Config load(const Options& opt) {
    return opt.config_path.empty() ? config::parse_string("") : config::load(opt.config_path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gradient-informed Bayesian optimization with BNN surrogates"};
    app.set_version_flag("--version", ex::version());
    app.require_subcommand(1);

    Options demo, bench, timing;
    auto* demo_cmd = app.add_subcommand("demo1d", "1D ablation: joint, function-only and independent-output surrogates");
    add_common(demo_cmd, demo, "results/demo1d");
    auto* bench_cmd = app.add_subcommand("benchmark", "regret campaigns over problems, acquisitions and gradient weights");
    add_common(bench_cmd, bench, "results/benchmark");
    auto* timing_cmd = app.add_subcommand("timing", "surrogate training wall-clock per problem");
    add_common(timing_cmd, timing, "results/timing");

    CLI11_PARSE(app, argc, argv);

    try {
        if (demo_cmd->parsed()) {
            auto cfg = load(demo);
            if (!demo.seeds.empty()) cfg.demo1d.seeds = config::parse_seed_list(demo.seeds);
            const auto result = ex::run_demo1d(cfg, demo.out_dir, demo.jobs);
            std::cout << "seed,variant,value_rmse,gradient_rmse,fd_consistency\n";
            for (const auto& c : result.cells) {
                std::cout << c.seed << ',' << ex::to_string(c.variant) << ',' << c.value_rmse << ','
                          << c.gradient_rmse << ',' << c.fd_consistency << '\n';
            }
            std::cout << "wrote " << result.outputs.size() << " files to " << demo.out_dir << '\n';
            return 0;
        }
        if (bench_cmd->parsed()) {
            auto cfg = load(bench);
            if (!bench.seeds.empty()) cfg.experiment.seeds = config::parse_seed_list(bench.seeds);
            const auto result = ex::run_benchmark(cfg, bench.out_dir, bench.jobs);
            std::cout << result.total_runs - result.failed_runs << '/' << result.total_runs << " runs succeeded; outputs in "
                      << bench.out_dir << '\n';
            return result.failed_runs == 0 ? 0 : 2;
        }
        if (timing_cmd->parsed()) {
            auto cfg = load(timing);
            if (!timing.seeds.empty()) cfg.timing.seed = config::parse_seed_list(timing.seeds).front();
            const auto rows = ex::run_timing(cfg, timing.out_dir);
            std::cout << "problem,D,mean_s,std_s\n";
            for (const auto& r : rows) std::cout << r.problem << ',' << r.dim << ',' << r.mean << ',' << r.stddev << '\n';
            return 0;
        }
    } catch (const config::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
