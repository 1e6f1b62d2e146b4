#include "ginnbo/bo.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace bo = ginnbo::bo;
namespace benchmarks = ginnbo::benchmarks;

namespace {

bo::ExperimentConfig tiny(const std::string& problem, std::size_t iterations) {
    bo::ExperimentConfig c;
    c.problem = problem;
    c.iterations = iterations;
    c.architecture = {0, 1, 10, 1};
    c.sghmc.total_steps = 300;
    c.sghmc.burn_in_steps = 100;
    c.sghmc.sampling_interval = 20;
    c.restarts = 3;
    c.max_iterations = 30;
    return c;
}

}  // namespace

TEST(InitialDesign, TwoDRowsInBounds) {
    for (const auto& [name, rows] : {std::pair{"mccormick", 4u}, {"hartmann6", 12u}, {"rosenbrock4", 8u}}) {
        const auto p = benchmarks::make_problem(name);
        const auto d = bo::initial_design(p, 5);
        ASSERT_EQ(d.size(), rows) << name;
        for (const auto& r : d.rows()) {
            EXPECT_TRUE(p.contains(r.x));
            EXPECT_DOUBLE_EQ(r.y, p.evaluate(r.x));
        }
    }
}

TEST(InitialDesign, SeedDeterminism) {
    const auto p = benchmarks::hartmann6();
    const auto a = bo::initial_design(p, 3), b = bo::initial_design(p, 3), c = bo::initial_design(p, 4);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.rows()[i].x, b.rows()[i].x);
    EXPECT_NE(a.rows()[0].x, c.rows()[0].x);
}

TEST(Dataset, NormalizationTracksRows) {
    bo::Dataset d({0.0, -2.0}, {4.0, 2.0});
    d.add({{1.0, 0.0}, 3.0, {2.0, -1.0}});
    EXPECT_DOUBLE_EQ(d.normalization().y_mean, 3.0);
    EXPECT_DOUBLE_EQ(d.normalization().y_std, 1.0);
    d.add({{3.0, 1.0}, 7.0, {0.0, 4.0}});
    EXPECT_DOUBLE_EQ(d.normalization().y_mean, 5.0);
    EXPECT_DOUBLE_EQ(d.normalization().y_std, 2.0);
    const auto b = d.training_data();
    EXPECT_EQ(b.x, (std::vector<double>{-0.5, 0.0, 0.5, 0.5}));
    EXPECT_EQ(b.y, (std::vector<double>{-1.0, 1.0}));
    // Gradient scale: half_range / y_std = (2, 2) / 2.
    EXPECT_EQ(b.gradients, (std::vector<double>{2.0, -1.0, 0.0, 4.0}));
    EXPECT_DOUBLE_EQ(d.incumbent(), 3.0);
    EXPECT_THROW(d.add({{5.0, 0.0}, 1.0, {0.0, 0.0}}), std::out_of_range);
}

TEST(Regret, Examples) {
    const auto rosen = benchmarks::rosenbrock4();
    bo::RegretTrace t;
    t.records.push_back({1, {}, 5.0, 5.0, 0.0, 0.0, 0.0});
    t.records.push_back({2, {}, 0.0, 0.0, 0.0, 0.0, 0.0});
    EXPECT_EQ(bo::regret(t, rosen), (std::vector<double>{5.0, 0.0}));
    auto unknown = rosen;
    unknown.optimum_value.reset();
    EXPECT_THROW(bo::regret(t, unknown), std::invalid_argument);
}

TEST(Aggregate, MeanAndStd) {
    const auto a = bo::aggregate({{1.0, 2.0}, {3.0, 2.0}, {5.0}});
    EXPECT_DOUBLE_EQ(a.mean[0], 3.0);
    EXPECT_NEAR(a.stddev[0], std::sqrt(8.0 / 3.0), 1e-15);
    EXPECT_DOUBLE_EQ(a.mean[1], 2.0);
    EXPECT_DOUBLE_EQ(a.stddev[1], 0.0);
    EXPECT_EQ(a.count[1], 2u);
    EXPECT_DOUBLE_EQ(bo::median({3.0, 1.0, 2.0, 10.0}), 2.5);
}

TEST(RunBo, SingleIteration) {
    const auto c = tiny("mccormick", 1);
    const auto trace = bo::run_bo(c, 2);
    ASSERT_EQ(trace.records.size(), 1u);
    const auto design = bo::initial_design(benchmarks::mccormick(), 2);
    EXPECT_DOUBLE_EQ(trace.records[0].incumbent, std::min(design.incumbent(), trace.records[0].y));
}

TEST(RunBo, IncumbentAndRegretMonotone) {
    const auto c = tiny("mccormick", 6);
    const auto trace = bo::run_bo(c, 1);
    ASSERT_FALSE(trace.failed) << trace.failure;
    ASSERT_EQ(trace.records.size(), 6u);
    const auto p = benchmarks::mccormick();
    for (std::size_t t = 0; t < trace.records.size(); ++t) {
        const auto& r = trace.records[t];
        EXPECT_EQ(r.iteration, t + 1);
        EXPECT_TRUE(p.contains(r.x));
        EXPECT_GE(r.regret, 0.0);
        if (t > 0) {
            EXPECT_LE(r.incumbent, trace.records[t - 1].incumbent);
            EXPECT_LE(r.regret, trace.records[t - 1].regret);
        }
    }
}

TEST(RunBo, BitIdenticalPerSeed) {
    auto c = tiny("rosenbrock4", 3);
    c.acquisition = ginnbo::acquisition::AcquisitionKind::LogEi;
    const auto a = bo::run_bo(c, 9), b = bo::run_bo(c, 9);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].x, b.records[i].x);
        EXPECT_EQ(a.records[i].y, b.records[i].y);
    }
}

TEST(RandomSearch, DatasetSizeAndMonotone) {
    const auto c = tiny("hartmann6", 25);
    const auto trace = bo::run_random_search(c, 4);
    ASSERT_EQ(trace.records.size(), 25u);
    for (std::size_t t = 1; t < trace.records.size(); ++t) {
        EXPECT_LE(trace.records[t].incumbent, trace.records[t - 1].incumbent);
    }
}

TEST(Csv, HeaderAndFormatting) {
    EXPECT_EQ(bo::trace_csv_header(2), "seed,iteration,x_1,x_2,y,incumbent,regret,wallclock_train_s,wallclock_af_s");
    EXPECT_EQ(bo::format_number(0.1), "0.1");
    EXPECT_EQ(bo::format_number(-1234567.5), "-1234567.5");
    EXPECT_EQ(bo::format_number(1e-300), "1e-300");
    bo::RegretTrace t{7, 1, {{1, {0.25}, -1.5, -1.5, 0.5, 2.0, 0.125}}, false, {}, 0};
    std::ostringstream os;
    bo::write_trace_csv(os, std::span(&t, 1));
    EXPECT_EQ(os.str(), "seed,iteration,x_1,y,incumbent,regret,wallclock_train_s,wallclock_af_s\n"
                        "7,1,0.25,-1.5,-1.5,0.5,2,0.125\n");
}

TEST(Config, Validation) {
    auto c = tiny("mccormick", 1);
    c.iterations = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny("mccormick", 1);
    c.seeds.clear();
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny("nope", 1);
    EXPECT_THROW(c.validate(), std::invalid_argument);
}
