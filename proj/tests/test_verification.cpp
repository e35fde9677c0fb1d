#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <iostream>

#include "saddlefield/config.hpp"
#include "saddlefield/verification.hpp"

using namespace saddlefield;

namespace {

Problem exp12_problem() {
    return Problem{AgentSet({UtilitySpec::exponential(1.0), UtilitySpec::exponential(2.0)}), ScenarioTree()};
}

Problem example_problem() { return load_config(SADDLEFIELD_EXAMPLE_CONFIG).problem(); }

void expect_all_passed(const std::vector<CheckReport>& reports) {
    for (const auto& r : reports) {
        EXPECT_TRUE(r.passed) << r.name << " err=" << r.max_rel_error << " tol=" << r.tolerance << " at " << r.worst_case;
        EXPECT_GT(r.points_tested, 0u) << r.name;
    }
}

}  // namespace

TEST(FiniteDifference, Examples) {
    Vector p(1);
    p[0] = 3.0;
    EXPECT_NEAR(finite_difference_gradient([](const Vector& z) { return z[0] * z[0]; }, p, 1e-5)[0], 6.0, 1e-9);

    const AgentSet one({UtilitySpec::exponential(1.0)});
    const AggregateFunction f(one);
    Vector v(1);
    v[0] = 1.0;
    const Vector g = finite_difference_gradient(f, PrimalPoint{v, 0.0, Vector()}, 1e-5);
    EXPECT_NEAR(g[0], -1.0, 1e-9);
    EXPECT_NEAR(g[1], 1.0, 1e-9);

    Vector q = Vector::Constant(4, 2.5);
    EXPECT_EQ(finite_difference_gradient([](const Vector&) { return 7.0; }, q, 1e-5), Vector::Zero(4));
    EXPECT_THROW(finite_difference_gradient([](const Vector&) { return 0.0; }, q, 0.0), DomainError);
}

TEST(Suites, AggregateOnExponentials) {
    const auto reports = run_suite("aggregate", SweepConfig{}, exp12_problem());
    expect_all_passed(reports);
    for (const auto& r : reports) {
        if (r.name == "aggregate.gradient_fd") {
            EXPECT_LT(r.max_rel_error, 1e-6);
        }
        if (r.name == "aggregate.exponential_closed_form") {
            EXPECT_EQ(r.points_tested, 100u);
        }
    }
}

TEST(Suites, IdentitiesWithoutAssets) {
    SweepConfig cfg;
    cfg.n_points = 20;
    const auto reports = run_suite("identities", cfg, exp12_problem());
    expect_all_passed(reports);
    bool seen = false;
    for (const auto& r : reports) {
        EXPECT_NE(r.name, "identities.H_fd");
        if (r.name == "identities.BA_identity") {
            seen = true;
            EXPECT_LT(r.max_abs_error, 1e-7);
        }
    }
    EXPECT_TRUE(seen);
    EXPECT_TRUE(run_suite("envelope", cfg, exp12_problem()).empty());
}

TEST(Suites, BoundaryDivergence) {
    const auto reports = run_suite("boundary", SweepConfig{}, exp12_problem());
    ASSERT_EQ(reports.size(), 2u);
    expect_all_passed(reports);
    EXPECT_EQ(reports[0].name, "boundary.F6_divergence");
    ASSERT_TRUE(reports[0].observed.has_value());
    EXPECT_LT(*reports[0].observed, -1e6);

    SweepConfig shallow;
    shallow.boundary_x = 0.0;
    const auto flat = run_suite("boundary", shallow, exp12_problem());
    EXPECT_FALSE(flat[0].passed);
    EXPECT_FALSE(flat[0].worst_case.empty());
}

TEST(Suites, AllOnExampleConfig) {
    const auto start = std::chrono::steady_clock::now();
    const auto reports = run_suite("all", SweepConfig{}, example_problem());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << "verify all: " << reports.size() << " reports in " << seconds << " s\n";
    expect_all_passed(reports);
    for (const auto& r : reports) std::cout << "  " << r.name << " " << r.max_rel_error << " / " << r.tolerance << "\n";
}

TEST(Suites, ForcedFailureWithSmallC) {
    SweepConfig cfg;
    cfg.n_points = 10;
    cfg.c_override = 1.05;
    const auto reports = run_suite("bounds", cfg, example_problem());
    EXPECT_FALSE(all_passed(reports));
    bool named = false;
    for (const auto& r : reports) named = named || (!r.passed && r.name == "bounds.F7" && !r.worst_case.empty());
    EXPECT_TRUE(named);
}

TEST(Suites, Deterministic) {
    SweepConfig cfg;
    cfg.seed = 7;
    cfg.n_points = 15;
    const Problem p = example_problem();
    const nlohmann::json a = run_suite("identities", cfg, p);
    const nlohmann::json b = run_suite("identities", cfg, p);
    EXPECT_EQ(a.dump(), b.dump());
    cfg.seed = 8;
    const nlohmann::json c = run_suite("identities", cfg, p);
    EXPECT_NE(a.dump(), c.dump());
}

TEST(Suites, Errors) {
    EXPECT_THROW(run_suite("nonsense", SweepConfig{}, exp12_problem()), ConfigError);
    SweepConfig bad;
    bad.n_points = 0;
    EXPECT_THROW(run_suite("aggregate", bad, exp12_problem()), DomainError);
}

TEST(Report, NearZeroTargetsUseAbsoluteError) {
    detail::Check check("demo", 1e-6);
    check.point();
    check.compare(1e-10, 0.0, [] { return std::string("zero"); });
    check.compare(1.0 + 1e-8, 1.0, [] { return std::string("one"); });
    const auto r = check.finish();
    EXPECT_TRUE(r.passed);
    EXPECT_NEAR(r.max_rel_error, 1e-8, 1e-12);
    EXPECT_TRUE(r.worst_case.empty());

    detail::Check bad("demo", 1e-6);
    bad.point();
    bad.compare(2.0, 1.0, [] { return std::string("here"); });
    const auto f = bad.finish();
    EXPECT_FALSE(f.passed);
    EXPECT_EQ(f.worst_case, "here");
    const nlohmann::json j = f;
    EXPECT_EQ(j["worst_case"], "here");
    EXPECT_EQ(j["passed"], false);
}
