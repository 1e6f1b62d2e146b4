#pragma once

// Sectioned key = value configuration for the experiment runner.
// Unknown sections and keys are errors; every value is parsed strictly.

#include "ginnbo/acquisition.hpp"
#include "ginnbo/bo.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ginnbo::config {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Demo1dSettings {
    std::size_t training_points = 8;
    std::size_t grid_points = 200;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

struct TimingSettings {
    std::vector<std::string> problems{"mccormick", "hartmann6"};
    std::size_t repetitions = 10;
    std::size_t dataset_size = 0;  // 0 selects 2D + 20
    std::uint64_t seed = 0;
};

struct Config {
    // Shared surrogate, sampler and acquisition settings; `experiment.problem`
    // is rewritten per campaign cell.
    bo::ExperimentConfig experiment{};
    std::vector<std::string> problems{"mccormick", "rosenbrock4", "hartmann6"};
    std::vector<acquisition::AcquisitionKind> acquisitions{acquisition::AcquisitionKind::Lcb,
                                                           acquisition::AcquisitionKind::LogEi};
    std::vector<double> gradient_weights{1.0, 0.0};
    bool random_search = true;
    Demo1dSettings demo1d{};
    TimingSettings timing{};
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    T value{};
    const auto res = std::from_chars(t.data(), t.data() + t.size(), value);
    if (res.ec != std::errc{} || res.ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError(key + ": cannot parse '" + text + "' as " +
                          (std::is_floating_point_v<T> ? "a number" : "a nonnegative integer"));
    }
    return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::string number_text(double v) { return bo::format_number(v); }

template <class T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        if constexpr (std::is_floating_point_v<T>) {
            out += number_text(values[i]);
        } else if constexpr (std::is_arithmetic_v<T>) {
            out += std::to_string(values[i]);
        } else {
            out += values[i];
        }
    }
    return out;
}

}  // namespace detail

inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    for (const auto& s : detail::split_list(text)) seeds.push_back(detail::parse_number<std::uint64_t>("seeds", s));
    if (seeds.empty()) throw ConfigError("seeds: empty list");
    return seeds;
}

/// Parses the configuration text. Missing keys keep their defaults.
inline Config parse(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }

    Config c;
    auto& ex = c.experiment;
    using Setter = std::function<void(const std::string& key, const std::string& value)>;
    const auto size = [](std::size_t& field) -> Setter {
        return [&field](const std::string& k, const std::string& v) { field = detail::parse_number<std::size_t>(k, v); };
    };
    const auto real = [](double& field) -> Setter {
        return [&field](const std::string& k, const std::string& v) { field = detail::parse_number<double>(k, v); };
    };

    const std::map<std::string, std::map<std::string, Setter>> schema{
        {"problem",
         {{"name", [&](const std::string& k, const std::string& v) {
               ex.problem = detail::trim(v);
               try {
                   benchmarks::make_problem(ex.problem);
               } catch (const std::invalid_argument& e) {
                   throw ConfigError(k + ": " + e.what());
               }
           }},
          {"noise_std", real(ex.noise_std)}}},
        {"architecture", {{"hidden_layers", size(ex.architecture.hidden_layers)},
                          {"nodes_per_layer", size(ex.architecture.nodes_per_layer)}}},
        {"sghmc",
         {{"total_steps", size(ex.sghmc.total_steps)},
          {"burn_in_steps", size(ex.sghmc.burn_in_steps)},
          {"learning_rate", real(ex.sghmc.learning_rate)},
          {"step_size", real(ex.sghmc.step_size)},
          {"friction", real(ex.sghmc.friction)},
          {"sampling_interval", size(ex.sghmc.sampling_interval)},
          {"batch_size", size(ex.sghmc.batch_size)},
          {"ema_decay", real(ex.sghmc.ema_decay)},
          {"weight_decay", real(ex.prior.weight_decay)},
          {"log_noise_mean", real(ex.prior.log_noise_mean)},
          {"log_noise_var", real(ex.prior.log_noise_var)}}},
        {"acquisition",
         {{"kind", [&](const std::string& k, const std::string& v) {
               try {
                   ex.acquisition = acquisition::parse_kind(detail::trim(v));
               } catch (const std::invalid_argument& e) {
                   throw ConfigError(k + ": " + e.what());
               }
           }},
          {"beta", real(ex.beta)},
          {"restarts", size(ex.restarts)},
          {"max_iterations", size(ex.max_iterations)},
          {"gradient_tolerance", real(ex.gradient_tolerance)}}},
        {"campaign",
         {{"problems", [&](const std::string& k, const std::string& v) {
               c.problems = detail::split_list(v);
               for (const auto& p : c.problems) {
                   try {
                       benchmarks::make_problem(p);
                   } catch (const std::invalid_argument& e) {
                       throw ConfigError(k + ": " + e.what());
                   }
               }
           }},
          {"acquisitions", [&](const std::string& k, const std::string& v) {
               c.acquisitions.clear();
               for (const auto& a : detail::split_list(v)) {
                   try {
                       c.acquisitions.push_back(acquisition::parse_kind(a));
                   } catch (const std::invalid_argument& e) {
                       throw ConfigError(k + ": " + e.what());
                   }
               }
           }},
          {"gradient_weights", [&](const std::string& k, const std::string& v) {
               c.gradient_weights.clear();
               for (const auto& w : detail::split_list(v)) c.gradient_weights.push_back(detail::parse_number<double>(k, w));
           }},
          {"gradient_weight", real(ex.gradient_weight)},
          {"iterations", size(ex.iterations)},
          {"initial_design_size", size(ex.initial_design_size)},
          {"seeds", [&](const std::string&, const std::string& v) { ex.seeds = parse_seed_list(v); }},
          {"random_search", [&](const std::string& k, const std::string& v) { c.random_search = detail::parse_bool(k, v); }}}},
        {"demo1d",
         {{"training_points", size(c.demo1d.training_points)},
          {"grid_points", size(c.demo1d.grid_points)},
          {"seeds", [&](const std::string&, const std::string& v) { c.demo1d.seeds = parse_seed_list(v); }}}},
        {"timing",
         {{"problems", [&](const std::string&, const std::string& v) { c.timing.problems = detail::split_list(v); }},
          {"repetitions", size(c.timing.repetitions)},
          {"dataset_size", size(c.timing.dataset_size)},
          {"seed", [&](const std::string& k, const std::string& v) {
               c.timing.seed = detail::parse_number<std::uint64_t>(k, v);
           }}}},
    };

    for (const auto& [section, entries] : tree) {
        const auto known = schema.find(section);
        if (known == schema.end()) {
            if (entries.empty()) throw ConfigError("key '" + section + "' outside any section");
            throw ConfigError("unknown section [" + section + "]");
        }
        for (const auto& [key, node] : entries) {
            const auto setter = known->second.find(key);
            if (setter == known->second.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
            setter->second(section + "." + key, node.data());
        }
    }

    try {
        ex.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
    if (c.problems.empty() || c.acquisitions.empty() || c.gradient_weights.empty()) {
        throw ConfigError("campaign: problems, acquisitions and gradient_weights must be nonempty");
    }
    for (double w : c.gradient_weights) {
        if (w < 0.0) throw ConfigError("campaign.gradient_weights: weights must be nonnegative");
    }
    if (c.demo1d.training_points < 2 || c.demo1d.grid_points < 3) {
        throw ConfigError("demo1d: need >= 2 training points and >= 3 grid points");
    }
    if (c.timing.repetitions < 1) throw ConfigError("timing.repetitions must be >= 1");
    for (const auto& p : c.timing.problems) {
        try {
            benchmarks::make_problem(p);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("timing.problems: ") + e.what());
        }
    }
    return c;
}

inline Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
}

inline Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in);
}

/// Canonical text form; parses back to an equal configuration.
inline std::string to_text(const Config& c) {
    const auto& ex = c.experiment;
    using detail::join;
    using detail::number_text;
    std::ostringstream os;
    os << "[problem]\nname = " << ex.problem << "\nnoise_std = " << number_text(ex.noise_std) << "\n\n";
    os << "[architecture]\nhidden_layers = " << ex.architecture.hidden_layers
       << "\nnodes_per_layer = " << ex.architecture.nodes_per_layer << "\n\n";
    os << "[sghmc]\ntotal_steps = " << ex.sghmc.total_steps << "\nburn_in_steps = " << ex.sghmc.burn_in_steps
       << "\nlearning_rate = " << number_text(ex.sghmc.learning_rate)
       << "\nstep_size = " << number_text(ex.sghmc.step_size) << "\nfriction = " << number_text(ex.sghmc.friction)
       << "\nsampling_interval = " << ex.sghmc.sampling_interval << "\nbatch_size = " << ex.sghmc.batch_size
       << "\nema_decay = " << number_text(ex.sghmc.ema_decay)
       << "\nweight_decay = " << number_text(ex.prior.weight_decay)
       << "\nlog_noise_mean = " << number_text(ex.prior.log_noise_mean)
       << "\nlog_noise_var = " << number_text(ex.prior.log_noise_var) << "\n\n";
    os << "[acquisition]\nkind = " << acquisition::to_string(ex.acquisition) << "\nbeta = " << number_text(ex.beta)
       << "\nrestarts = " << ex.restarts << "\nmax_iterations = " << ex.max_iterations
       << "\ngradient_tolerance = " << number_text(ex.gradient_tolerance) << "\n\n";
    std::vector<std::string> kinds;
    for (auto k : c.acquisitions) kinds.push_back(acquisition::to_string(k));
    os << "[campaign]\nproblems = " << join(c.problems) << "\nacquisitions = " << join(kinds)
       << "\ngradient_weights = " << join(c.gradient_weights)
       << "\ngradient_weight = " << number_text(ex.gradient_weight) << "\niterations = " << ex.iterations
       << "\ninitial_design_size = " << ex.initial_design_size << "\nseeds = " << join(ex.seeds)
       << "\nrandom_search = " << (c.random_search ? "true" : "false") << "\n\n";
    os << "[demo1d]\ntraining_points = " << c.demo1d.training_points << "\ngrid_points = " << c.demo1d.grid_points
       << "\nseeds = " << join(c.demo1d.seeds) << "\n\n";
    os << "[timing]\nproblems = " << join(c.timing.problems) << "\nrepetitions = " << c.timing.repetitions
       << "\ndataset_size = " << c.timing.dataset_size << "\nseed = " << c.timing.seed << "\n";
    return os.str();
}

}  // namespace ginnbo::config
