#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "saddlefield/field.hpp"
#include "saddlefield/saddle.hpp"

using namespace saddlefield;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector out(static_cast<Index>(xs.size()));
    Index i = 0;
    for (double x : xs) out[i++] = x;
    return out;
}

TreeNodeSpec leaf(double sigma0, std::vector<double> psi) {
    TreeNodeSpec n;
    n.sigma0 = sigma0;
    n.psi = std::move(psi);
    return n;
}

TreeNodeSpec split(std::vector<double> p, std::vector<TreeNodeSpec> children) {
    TreeNodeSpec n;
    n.p = std::move(p);
    n.children = std::move(children);
    return n;
}

// Two periods, two assets, uneven probabilities.
ScenarioTree two_asset_tree() {
    return ScenarioTree(split({0.3, 0.7}, {split({0.5, 0.5}, {leaf(0.2, {1.0, -0.5}), leaf(-0.4, {-1.0, 0.3})}),
                                           split({0.6, 0.4}, {leaf(0.1, {0.4, 1.2}), leaf(0.5, {-0.7, -0.9})})}));
}

AgentSet mixed() {
    return AgentSet({UtilitySpec::mixture({1.0, 1.0}, {1.0, 2.0}), UtilitySpec::mixture({0.2, 3.0, 0.5}, {0.5, 1.5, 4.0}),
                     UtilitySpec::exponential(0.7)});
}

template <class F>
double g_at(const F& f, const DualPoint& b, const PrimalPoint& guess) {
    return conjugate_point_from_dual(f, b, guess).g_value;
}

}  // namespace

TEST(Conjugate, DualExamples) {
    const AgentSet one({UtilitySpec::exponential(1.0)});
    const AggregateFunction f1(one);
    const auto p1 = conjugate_point_from_dual(f1, DualPoint{vec({-1.0}), 1.0, Vector()});
    EXPECT_NEAR(p1.primal.v[0], 1.0, 1e-12);
    EXPECT_NEAR(p1.primal.x, 0.0, 1e-12);
    EXPECT_NEAR(p1.g_value, 0.0, 1e-12);

    const AgentSet two({UtilitySpec::exponential(1.0), UtilitySpec::exponential(2.0)});
    const AggregateFunction f2(two);
    const auto p2 = conjugate_point_from_dual(f2, DualPoint{vec({-1.0, -0.5}), 1.0, Vector()});
    EXPECT_NEAR(p2.primal.v[0], 1.0, 1e-12);
    EXPECT_NEAR(p2.primal.v[1], 1.0, 1e-12);
    EXPECT_NEAR(p2.primal.x, 0.0, 1e-12);
    EXPECT_NEAR(p2.g_value, 0.0, 1e-12);
    EXPECT_NEAR(p2.f_value, -1.5, 1e-12);
}

TEST(Conjugate, ExponentialClosedForm) {
    const std::vector<double> rates{0.5, 1.0, 3.0};
    const AgentSet agents({UtilitySpec::exponential(0.5), UtilitySpec::exponential(1.0), UtilitySpec::exponential(3.0)});
    const AggregateFunction f(agents);
    oracle::Sampler rng(4);
    for (int i = 0; i < 50; ++i) {
        const Vector u = -rng.log_uniform(3, 0.1, 10.0);
        const auto pair = conjugate_point_from_dual(f, DualPoint{u, 1.0, Vector()});
        EXPECT_LE(oracle::rel_err(pair.g_value, oracle::exp_g(rates, u)), 1e-10);
        for (Index m = 0; m < 3; ++m) EXPECT_LE(oracle::rel_err(pair.primal.v[m], -(1.0 / rates[m]) / u[m]), 1e-10);
    }
}

TEST(Conjugate, PrimalExamples) {
    const AgentSet one({UtilitySpec::exponential(1.0)});
    const auto p = conjugate_point_from_primal(AggregateFunction(one), PrimalPoint{vec({1.0}), 0.0, Vector()});
    EXPECT_DOUBLE_EQ(p.dual.u[0], -1.0);
    EXPECT_DOUBLE_EQ(p.dual.y, 1.0);

    const AgentSet agents = mixed();
    const AggregateFunction f(agents);
    const PrimalPoint a{vec({0.3, 1.7, 2.2}), 0.4, Vector()};
    const auto base = conjugate_point_from_primal(f, a);
    const auto scaled = conjugate_point_from_primal(f, PrimalPoint{2.0 * a.v, a.x, Vector()});
    for (Index m = 0; m < 3; ++m) EXPECT_LE(oracle::rel_err(scaled.dual.u[m], base.dual.u[m]), 1e-12);
    EXPECT_LE(oracle::rel_err(scaled.dual.y, 2.0 * base.dual.y), 1e-12);

    const AgentSet two({UtilitySpec::exponential(1.0), UtilitySpec::exponential(2.0)});
    const auto e = conjugate_point_from_primal(AggregateFunction(two), PrimalPoint{vec({1.0, std::exp(1.0)}), 0.0, Vector()});
    EXPECT_NEAR(e.dual.y, std::exp(1.0 / 3.0), 1e-13);
}

TEST(Conjugate, RoundTripOnTree) {
    const ScenarioTree tree = two_asset_tree();
    const AgentSet agents = mixed();
    oracle::Sampler rng(17);
    for (int i = 0; i < 100; ++i) {
        const NodeRef node{1, static_cast<int>(i % 2)};
        const NodeField f(tree, agents, i % 3 == 0 ? tree.root() : node);
        PrimalPoint a{rng.log_uniform(3, 0.1, 10.0), rng.uniform(-5.0, 5.0), rng.uniform_vec(2, -2.0, 2.0)};
        const auto forward = conjugate_point_from_primal(f, a);
        const auto back = conjugate_point_from_dual(f, forward.dual);
        const double dv = (back.primal.v - a.v).cwiseAbs().maxCoeff();
        EXPECT_LE(std::max(dv, std::abs(back.primal.x - a.x)), 1e-8) << i;
        EXPECT_LE(oracle::rel_err(back.f_value, back.primal.v.dot(back.dual.u)), 1e-9);
        EXPECT_EQ(back.g_value, back.primal.x * back.dual.y);
        EXPECT_LE(back.residual, 1e-10);
    }
}

TEST(Conjugate, Errors) {
    const AgentSet agents = mixed();
    const AggregateFunction f(agents);
    EXPECT_THROW(conjugate_point_from_dual(f, DualPoint{vec({-1.0, 1.0, -1.0}), 1.0, Vector()}), DomainError);
    EXPECT_THROW(conjugate_point_from_dual(f, DualPoint{vec({-1.0, -1.0}), 1.0, Vector()}), DomainError);
    EXPECT_THROW(conjugate_point_from_dual(f, DualPoint{vec({-1.0, -1.0, -1.0}), 0.0, Vector()}), DomainError);
    EXPECT_THROW(conjugate_point_from_primal(f, PrimalPoint{vec({1.0, -1.0, 1.0}), 0.0, Vector()}), DomainError);
}

TEST(Bundle, Examples) {
    const AgentSet two({UtilitySpec::exponential(1.0), UtilitySpec::exponential(2.0)});
    const AggregateFunction f(two);
    const auto pair = conjugate_point_from_primal(f, PrimalPoint{vec({1.0, 1.0}), 0.0, Vector()});
    const auto s = second_order_bundle(f, pair);
    EXPECT_NEAR(s.A_mat(0, 0), 1.0, 1e-13);
    EXPECT_NEAR(s.A_mat(1, 1), 0.5, 1e-13);
    EXPECT_NEAR(s.A_mat(0, 1), 0.0, 1e-13);
    EXPECT_NEAR(s.B_mat(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(s.B_mat(1, 1), 2.0, 1e-12);
    EXPECT_EQ(s.C_mat.size(), 0);
    EXPECT_EQ(s.D_mat.size(), 0);
    EXPECT_EQ(s.E_mat.size(), 0);
    EXPECT_EQ(s.H_mat.size(), 0);
}

// B, E, H from the identities against differences of the numerically solved
// conjugate: v = dg/du, so B^{lm} = y (dv^l/du^m) / (v^l v^m) and
// E^{mj} = d log v^m / dq^j; H = g_qq / y by second differences of g.
TEST(Bundle, DualMatricesMatchDifferencesOfG) {
    const ScenarioTree tree = two_asset_tree();
    const AgentSet agents = mixed();
    oracle::Sampler rng(23);
    for (int i = 0; i < 10; ++i) {
        const NodeField f(tree, agents, tree.root());
        PrimalPoint a{rng.log_uniform(3, 0.1, 10.0), rng.uniform(-3.0, 3.0), rng.uniform_vec(2, -1.0, 1.0)};
        const auto pair = conjugate_point_from_primal(f, a);
        const auto s = second_order_bundle(f, pair);
        EXPECT_LE((s.B_mat * s.A_mat - Matrix::Identity(3, 3)).lpNorm<Eigen::Infinity>(), 1e-7);

        const DualPoint& b = pair.dual;
        const double h = 1e-5;
        for (Index m = 0; m < 3; ++m) {
            DualPoint up = b, down = b;
            up.u[m] += h * std::abs(b.u[m]);
            down.u[m] -= h * std::abs(b.u[m]);
            const Vector dv = (conjugate_point_from_dual(f, up, a).primal.v - conjugate_point_from_dual(f, down, a).primal.v) /
                              (2.0 * h * std::abs(b.u[m]));
            for (Index l = 0; l < 3; ++l) {
                const double fd = b.y * dv[l] / (a.v[l] * a.v[m]);
                EXPECT_LE(oracle::rel_err(fd, s.B_mat(l, m)), 1e-4) << i << " B(" << l << "," << m << ")";
            }
        }
        for (Index j = 0; j < 2; ++j) {
            DualPoint up = b, down = b;
            up.q[j] += h;
            down.q[j] -= h;
            const Vector dlogv = (conjugate_point_from_dual(f, up, a).primal.v.array().log() -
                                  conjugate_point_from_dual(f, down, a).primal.v.array().log()) /
                                 (2.0 * h);
            for (Index m = 0; m < 3; ++m) {
                EXPECT_LE(oracle::rel_err(dlogv[m], s.E_mat(m, j)), 1e-4) << i << " E(" << m << "," << j << ")";
            }
        }
        const double k = 1e-3;
        for (Index r = 0; r < 2; ++r) {
            for (Index c = 0; c < 2; ++c) {
                auto g_shift = [&](double dr, double dc) {
                    DualPoint p = b;
                    p.q[r] += dr;
                    p.q[c] += dc;
                    return g_at(f, p, a);
                };
                double fd;
                if (r == c) {
                    fd = (g_shift(k, 0) - 2.0 * pair.g_value + g_shift(-k, 0)) / (k * k);
                } else {
                    fd = (g_shift(k, k) - g_shift(k, -k) - g_shift(-k, k) + g_shift(-k, -k)) / (4.0 * k * k);
                }
                EXPECT_LE(oracle::rel_err(fd / b.y, s.H_mat(r, c)), 1e-4) << i << " H(" << r << "," << c << ")";
            }
        }
    }
}

TEST(Bundle, LemmaTenAndElevenSums) {
    const ScenarioTree tree = two_asset_tree();
    const AgentSet agents = mixed();
    oracle::Sampler rng(31);
    for (int i = 0; i < 30; ++i) {
        const NodeField f(tree, agents, NodeRef{1, i % 2});
        PrimalPoint a{rng.log_uniform(3, 0.1, 10.0), rng.uniform(-5.0, 5.0), rng.uniform_vec(2, -2.0, 2.0)};
        const auto d = f(a);
        const auto s = second_order_bundle(f, conjugate_point_from_primal(f, a));
        const Vector rows = s.A_mat.rowwise().sum();
        for (Index l = 0; l < 3; ++l) {
            EXPECT_LE(oracle::rel_err(rows[l], -a.v[l] * d.d2f_dvdx()[l] / d.d2f_dx2()), 1e-8);
        }
        EXPECT_LE(oracle::rel_err(s.A_mat.sum(), -d.df_dx() / d.d2f_dx2()), 1e-8);
        const Vector cols = s.C_mat.colwise().sum().transpose();
        for (Index j = 0; j < 2; ++j) {
            const double want = d.df_dq()[j] / d.df_dx() - d.d2f_dxdq()[j] / d.d2f_dx2();
            EXPECT_LE(oracle::rel_err(cols[j], want), 1e-8);
        }
    }
}

TEST(Envelope, Examples) {
    const AgentSet agents = mixed();
    const AggregateFunction flat(agents);
    const auto p0 = conjugate_point_from_primal(flat, PrimalPoint{vec({1.0, 1.0, 1.0}), 0.0, Vector()});
    EXPECT_EQ(envelope_check(flat, p0, 1e-4).size(), 0);

    // Deterministic single leaf with psi = 1: q acts as a translation of x.
    const ScenarioTree single(leaf(0.0, {1.0}));
    const NodeField f1(single, agents, single.root());
    const auto p1 = conjugate_point_from_primal(f1, PrimalPoint{vec({0.5, 1.0, 2.0}), 0.3, vec({0.4})});
    EXPECT_LE(envelope_check(f1, p1, 1e-4)[0], 1e-6);
    const auto shifted = conjugate_point_from_dual(f1, DualPoint{p1.dual.u, p1.dual.y, vec({0.0})});
    EXPECT_NEAR(shifted.primal.x, 0.7, 1e-10);

    const ScenarioTree coin(split({0.5, 0.5}, {leaf(0.0, {1.0}), leaf(0.0, {-1.0})}));
    const NodeField f2(coin, agents, coin.root());
    oracle::Sampler rng(41);
    for (int i = 0; i < 20; ++i) {
        PrimalPoint a{rng.log_uniform(3, 0.1, 10.0), rng.uniform(-5.0, 5.0), rng.uniform_vec(1, -2.0, 2.0)};
        EXPECT_LE(envelope_check(f2, conjugate_point_from_primal(f2, a), 1e-4)[0], 1e-5);
    }
}

TEST(Minimax, GridAttainsConjugate) {
    const ScenarioTree tree = two_asset_tree();
    const AgentSet agents = mixed();
    const NodeField f(tree, agents, tree.root());
    oracle::Sampler rng(5);
    for (int i = 0; i < 5; ++i) {
        PrimalPoint a{rng.log_uniform(3, 0.1, 10.0), rng.uniform(-5.0, 5.0), rng.uniform_vec(2, -2.0, 2.0)};
        const auto pair = conjugate_point_from_dual(f, conjugate_point_from_primal(f, a).dual);
        const auto mm = minimax_grid(f, pair);
        EXPECT_LE(mm.sup_inf, mm.inf_sup + 1e-12);
        EXPECT_LE(std::abs(mm.sup_inf - pair.g_value), 1e-6);
        EXPECT_LE(std::abs(mm.inf_sup - pair.g_value), 1e-6);
    }
}

TEST(DualBounds, ToleranceAndHomogeneity) {
    const ScenarioTree tree = two_asset_tree();
    const AgentSet agents = mixed();
    const double c = agents.c();
    const NodeField f(tree, agents, tree.root());
    oracle::Sampler rng(9);
    for (int i = 0; i < 20; ++i) {
        const Vector u = -rng.log_uniform(3, 0.1, 10.0);
        const Vector q = rng.uniform_vec(2, -2.0, 2.0);
        const auto pair = conjugate_point_from_dual(f, DualPoint{u, 1.0, q});
        for (Index m = 0; m < 3; ++m) {
            const double g7 = -u[m] * pair.primal.v[m] / pair.dual.y;
            EXPECT_GE(g7, 1.0 / c);
            EXPECT_LE(g7, c);
        }
        const auto s = second_order_bundle(f, pair);
        const Vector z = s.B_mat.llt().solve(Vector::Ones(3));
        EXPECT_GE(z.minCoeff(), 1.0 / c);
        EXPECT_LE(z.maxCoeff(), c);
        for (double k : {0.5, 2.0}) {
            const auto scaled = conjugate_point_from_dual(f, DualPoint{u, k * pair.dual.y, q});
            EXPECT_LE(std::abs(scaled.primal.x - pair.primal.x), 1e-9 * std::max(1.0, std::abs(pair.primal.x)));
            EXPECT_LE(oracle::rel_err(scaled.g_value, k * pair.g_value), 1e-9);
            for (Index m = 0; m < 3; ++m) EXPECT_LE(oracle::rel_err(scaled.primal.v[m], k * pair.primal.v[m]), 1e-9);
        }
    }
}
