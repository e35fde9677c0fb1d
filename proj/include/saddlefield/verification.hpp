#pragma once

// Property suites that pair every analytic quantity with an independent
// oracle (central differences, grid search, closed forms, tower sums) at
// seeded random points, and summarize each property as a CheckReport.

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "saddlefield/aggregate.hpp"
#include "saddlefield/errors.hpp"
#include "saddlefield/field.hpp"
#include "saddlefield/points.hpp"
#include "saddlefield/saddle.hpp"
#include "saddlefield/scenario_tree.hpp"
#include "saddlefield/utility.hpp"

namespace saddlefield {

/// Targets smaller than this in magnitude are compared in absolute error.
inline constexpr double near_zero_target = 1e-8;

struct CheckReport {
    std::string name;
    std::size_t points_tested = 0;
    double max_abs_error = 0.0;
    // Relative error, or absolute error for near-zero targets and for checks
    // whose error is already a normalized quantity.
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = true;
    // Input at which max_rel_error was attained; reported for failures.
    std::string worst_case;
    // Probe checks: the value the probe reached.
    std::optional<double> observed;
};

struct SweepConfig {
    std::uint64_t seed = 42;
    int n_points = 100;
    std::pair<double, double> v_log_range{0.1, 10.0};
    std::pair<double, double> x_range{-5.0, 5.0};
    std::pair<double, double> q_range{-2.0, 2.0};
    bool normalize_v = false;
    double fd_step = 1e-5;
    double hessian_step = 1e-4;
    // Step for second differences of the conjugate g.
    double g_step = 1e-3;
    double envelope_step = 1e-4;
    // Per-check overrides keyed by report name, then a global override.
    std::map<std::string, double> tolerances;
    std::optional<double> tolerance_override;
    std::optional<double> c_override;
    // Total endowment used by the boundary divergence probe.
    double boundary_x = -15.0;
    double boundary_max_n = 1e6;

    void validate() const {
        auto range_ok = [](const std::pair<double, double>& r) {
            return std::isfinite(r.first) && std::isfinite(r.second) && r.first < r.second;
        };
        if (n_points < 1) throw DomainError("sweep: n_points must be at least 1");
        if (!range_ok(v_log_range) || !(v_log_range.first > 0.0)) throw DomainError("sweep: bad v range");
        if (!range_ok(x_range)) throw DomainError("sweep: bad x range");
        if (!range_ok(q_range)) throw DomainError("sweep: bad q range");
        for (double s : {fd_step, hessian_step, g_step, envelope_step}) {
            if (!(s > 0.0)) throw DomainError("sweep: steps must be positive");
        }
        if (c_override && !(*c_override > 0.0)) throw DomainError("sweep: c must be positive");
        if (!(boundary_max_n >= 100.0)) throw DomainError("sweep: boundary_max_n must be at least 100");
    }

    bool operator==(const SweepConfig&) const = default;
};

struct Problem {
    AgentSet agents;
    ScenarioTree tree;
};

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"assumptions", "aggregate", "conjugacy", "identities", "field",
                                                "bounds",      "lemma19",   "envelope",  "boundary"};
    return names;
}

/// Central differences of a scalar function, step scaled by max(1, |p_i|).
template <class Fn>
Vector finite_difference_gradient(const Fn& f, const Vector& p, double step) {
    if (!(step > 0.0)) throw DomainError("finite differences: step must be positive");
    Vector g(p.size());
    for (Index i = 0; i < p.size(); ++i) {
        const double h = step * std::max(1.0, std::abs(p[i]));
        Vector up = p, down = p;
        up[i] += h;
        down[i] -= h;
        g[i] = (f(up) - f(down)) / (2.0 * h);
    }
    return g;
}

/// Column i: central difference of the vector function G along coordinate i.
template <class Fn>
Matrix finite_difference_jacobian(const Fn& G, const Vector& p, double step) {
    if (!(step > 0.0)) throw DomainError("finite differences: step must be positive");
    Matrix jac;
    for (Index i = 0; i < p.size(); ++i) {
        const double h = step * std::max(1.0, std::abs(p[i]));
        Vector up = p, down = p;
        up[i] += h;
        down[i] -= h;
        const Vector col = (G(up) - G(down)) / (2.0 * h);
        if (i == 0) jac.resize(col.size(), p.size());
        jac.col(i) = col;
    }
    return jac;
}

namespace detail {

inline Vector pack(const PrimalPoint& a) {
    const Index M = a.v.size(), J = a.q.size();
    Vector z(M + 1 + J);
    z.head(M) = a.v;
    z[M] = a.x;
    z.tail(J) = a.q;
    return z;
}

inline PrimalPoint unpack(const Vector& z, Index M, Index J) { return PrimalPoint{z.head(M), z[M], z.tail(J)}; }

}  // namespace detail

/// Finite-difference gradient of a saddle function in the (v, x, q) layout.
template <PrimalEvaluator F>
Vector finite_difference_gradient(const F& f, const PrimalPoint& a, double step) {
    const Index M = a.v.size(), J = a.q.size();
    return finite_difference_gradient([&](const Vector& z) { return f(detail::unpack(z, M, J)).value; },
                                      detail::pack(a), step);
}

namespace detail {

// Deterministic sampler: mt19937_64 words mapped to [0, 1) with 53 bits.
class PointSampler {
public:
    PointSampler(std::uint64_t seed, const std::string& stream) {
        std::uint64_t h = 1469598103934665603ull;
        for (unsigned char ch : stream) h = (h ^ ch) * 1099511628211ull;
        gen_.seed(seed ^ h);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(gen_() >> 11) * 0x1.0p-53); }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform(0.0, static_cast<double>(n))) % n; }

    Vector weights(Index M, const SweepConfig& cfg) {
        Vector v(M);
        const double lo = std::log(cfg.v_log_range.first), hi = std::log(cfg.v_log_range.second);
        for (Index m = 0; m < M; ++m) v[m] = std::exp(uniform(lo, hi));
        if (cfg.normalize_v) v /= v.sum();
        return v;
    }

    PrimalPoint primal(Index M, Index J, const SweepConfig& cfg) {
        PrimalPoint a;
        a.v = weights(M, cfg);
        a.x = uniform(cfg.x_range.first, cfg.x_range.second);
        a.q.resize(J);
        for (Index j = 0; j < J; ++j) a.q[j] = uniform(cfg.q_range.first, cfg.q_range.second);
        return a;
    }

    DualPoint dual(Index M, Index J, const SweepConfig& cfg) {
        DualPoint b;
        b.u = -weights(M, cfg);
        b.y = 1.0;
        b.q.resize(J);
        for (Index j = 0; j < J; ++j) b.q[j] = uniform(cfg.q_range.first, cfg.q_range.second);
        return b;
    }

    NodeRef node(const ScenarioTree& tree) {
        const int level = static_cast<int>(index(static_cast<std::size_t>(tree.levels()) + 1));
        return {level, static_cast<int>(index(tree.num_nodes(level)))};
    }

private:
    std::mt19937_64 gen_;
};

// Running max-reduction behind one CheckReport.
class Check {
public:
    Check(std::string name, double tolerance) {
        report_.name = std::move(name);
        report_.tolerance = tolerance;
    }

    void point() { ++report_.points_tested; }

    template <class Where>
    void compare(double got, double want, const Where& where) {
        const double abs_err = std::abs(got - want);
        const double err = std::abs(want) < near_zero_target ? abs_err : abs_err / std::abs(want);
        record(abs_err, std::isfinite(got) ? err : std::numeric_limits<double>::infinity(), where);
    }

    // An error that is already normalized (a residual norm, a violation).
    template <class Where>
    void error(double err, const Where& where) {
        record(err, std::isfinite(err) ? err : std::numeric_limits<double>::infinity(), where);
    }

    // Relative violation of lo <= value <= hi.
    template <class Where>
    void bound(double value, double lo, double hi, const Where& where) {
        const double violation = std::max({0.0, lo - value, value - hi});
        error(std::isfinite(value) ? violation / std::max(std::abs(value), near_zero_target)
                                   : std::numeric_limits<double>::infinity(),
              where);
    }

    template <class Where>
    void fail(const Where& where) {
        error(std::numeric_limits<double>::infinity(), where);
    }

    void observe(double value) { report_.observed = value; }

    CheckReport finish() {
        report_.passed = report_.max_rel_error <= report_.tolerance;
        if (report_.passed) report_.worst_case.clear();
        return report_;
    }

private:
    template <class Where>
    void record(double abs_err, double err, const Where& where) {
        report_.max_abs_error = std::max(report_.max_abs_error, abs_err);
        if (err > report_.max_rel_error || (!seen_ && err >= report_.max_rel_error)) {
            report_.max_rel_error = err;
            report_.worst_case = where();
        }
        seen_ = true;
    }

    CheckReport report_;
    bool seen_ = false;
};

inline std::string at(const PrimalPoint& a, NodeRef node) { return describe(a) + " node=" + to_string(node); }
inline std::string at(const DualPoint& b, NodeRef node) { return describe(b) + " node=" + to_string(node); }

struct SuiteContext {
    const Problem& problem;
    const SweepConfig& cfg;
    Index M;
    Index J;
    double c;

    double tol(const std::string& name, double fallback) const {
        if (cfg.tolerance_override) return *cfg.tolerance_override;
        auto it = cfg.tolerances.find(name);
        return it == cfg.tolerances.end() ? fallback : it->second;
    }

    Check check(const std::string& name, double fallback) const { return Check(name, tol(name, fallback)); }
};

// Default tolerances.
inline constexpr double gradient_tol = 1e-6;
inline constexpr double hessian_tol = 1e-4;
inline constexpr double bound_slack = 1e-9;

inline std::vector<CheckReport> suite_assumptions(const SuiteContext& ctx) {
    auto signs = ctx.check("assumptions.signs", 0.0);
    auto aversion = ctx.check("assumptions.risk_aversion_bounds", bound_slack);
    auto ratio = ctx.check("assumptions.marginal_ratio_bounds", bound_slack);
    auto first = ctx.check("assumptions.first_derivative_fd", gradient_tol);
    auto second = ctx.check("assumptions.second_derivative_fd", gradient_tol);
    auto inverse = ctx.check("assumptions.inverse_marginal", 1e-10);
    auto limit = ctx.check("assumptions.vanishes_at_infinity", 1e-12);
    PointSampler rng(ctx.cfg.seed, "assumptions");
    const double c = ctx.c;
    const double h = ctx.cfg.fd_step;
    for (std::size_t m = 0; m < ctx.problem.agents.size(); ++m) {
        const UtilitySpec& u = ctx.problem.agents[m];
        auto where_top = [&] { return "agent " + std::to_string(m); };
        limit.point();
        limit.error(std::abs(eval(u, 40.0 / u.min_rate(), 0)) / std::abs(eval(u, 0.0, 0)), where_top);
        for (int i = 0; i < ctx.cfg.n_points; ++i) {
            const double x = rng.uniform(5.0 * ctx.cfg.x_range.first, 5.0 * ctx.cfg.x_range.second);
            auto where = [&] { return "agent " + std::to_string(m) + " x=" + describe(x); };
            const double u0 = eval(u, x, 0), u1 = eval(u, x, 1), u2 = eval(u, x, 2);
            for (auto* c_ : {&signs, &aversion, &ratio, &first, &second, &inverse}) c_->point();
            signs.error((u0 < 0.0 && u1 > 0.0 && u2 < 0.0) ? 0.0 : 1.0, where);
            aversion.bound(-u2 / u1, 1.0 / c, c, where);
            ratio.bound(-u1 / u0, 1.0 / c, c, where);
            const double step = h * std::max(1.0, std::abs(x));
            first.compare((eval(u, x + step, 0) - eval(u, x - step, 0)) / (2.0 * step), u1, where);
            second.compare((eval(u, x + step, 1) - eval(u, x - step, 1)) / (2.0 * step), u2, where);
            inverse.compare(inverse_marginal(u, u1), x, where);
        }
    }
    return {signs.finish(), aversion.finish(), ratio.finish(), first.finish(), second.finish(), inverse.finish(),
            limit.finish()};
}

inline std::vector<CheckReport> suite_aggregate(const SuiteContext& ctx) {
    const AgentSet& agents = ctx.problem.agents;
    const Index M = ctx.M;
    auto budget = ctx.check("aggregate.budget", 1e-10);
    auto marginals = ctx.check("aggregate.equal_marginals", 1e-9);
    auto grad = ctx.check("aggregate.gradient_fd", gradient_tol);
    auto hess = ctx.check("aggregate.hessian_fd", hessian_tol);
    auto diag = ctx.check("aggregate.A_diagonal", 0.0);
    auto homog = ctx.check("aggregate.homogeneity", 1e-10);
    auto euler = ctx.check("aggregate.euler", 1e-10);
    auto closed = ctx.check("aggregate.exponential_closed_form", 1e-10);
    auto grid = ctx.check("aggregate.brute_force_lower_bound", 1e-9);
    PointSampler rng(ctx.cfg.seed, "aggregate");

    auto gradient_of = [&](const Vector& z) {
        const auto d = r_and_gradient(agents, z.head(M), z[M]);
        Vector g(M + 1);
        g.head(M) = d.dr_dv;
        g[M] = d.dr_dx;
        return g;
    };
    const int grid_points = std::max(3, std::min(201, static_cast<int>(std::pow(4.0e4, 1.0 / std::max<Index>(1, M - 1)))));

    for (int i = 0; i < ctx.cfg.n_points; ++i) {
        const Vector v = rng.weights(M, ctx.cfg);
        const double x = rng.uniform(ctx.cfg.x_range.first, ctx.cfg.x_range.second);
        auto where = [&] { return "v=" + describe(v) + " x=" + describe(x); };
        const auto d = r_hessian(agents, v, x);

        budget.point();
        budget.error(std::abs(d.allocation.x_hat.sum() - x) / std::max(1.0, std::abs(x)), where);
        marginals.point();
        for (Index m = 0; m < M; ++m) {
            marginals.compare(v[m] * eval(agents[static_cast<std::size_t>(m)], d.allocation.x_hat[m], 1), d.dr_dx, where);
        }

        Vector z(M + 1);
        z.head(M) = v;
        z[M] = x;
        const Vector g = gradient_of(z);
        const Vector fd = finite_difference_gradient([&](const Vector& p) { return r_and_gradient(agents, p.head(M), p[M]).value; },
                                                     z, ctx.cfg.fd_step);
        grad.point();
        for (Index k = 0; k <= M; ++k) grad.compare(fd[k], g[k], where);

        Matrix H(M + 1, M + 1);
        H.topLeftCorner(M, M) = d.d2r_dv2;
        H.col(M).head(M) = d.d2r_dvdx;
        H.row(M).head(M) = d.d2r_dvdx.transpose();
        H(M, M) = d.d2r_dx2;
        const Matrix fdH = finite_difference_jacobian(gradient_of, z, ctx.cfg.hessian_step);
        hess.point();
        for (Index r = 0; r <= M; ++r) {
            for (Index c = 0; c <= M; ++c) hess.compare(fdH(r, c), H(r, c), where);
        }

        diag.point();
        for (Index l = 0; l < M; ++l) {
            for (Index m = 0; m < M; ++m) {
                const double want = l == m ? risk_tolerance(agents[static_cast<std::size_t>(l)], d.allocation.x_hat[l]) : 0.0;
                diag.error(std::abs(d.A_matrix(l, m) - want), where);
            }
        }

        homog.point();
        for (double s : {0.5, 2.0, 10.0}) homog.compare(r_and_gradient(agents, s * v, x).value, s * d.value, where);
        euler.point();
        euler.compare(v.dot(d.dr_dv), d.value, where);

        if (agents.all_exponential()) {
            double T = 0.0, prod = 1.0;
            for (const auto& u : agents.agents()) T += 1.0 / u.max_rate();
            for (Index m = 0; m < M; ++m) prod *= std::pow(v[m], (1.0 / agents[static_cast<std::size_t>(m)].max_rate()) / T);
            closed.point();
            closed.compare(d.value, -T * std::exp(-x / T) * prod, where);
        }
        if (i < 10) {
            grid.point();
            const double best = brute_force_r(agents, v, x, 2.0 * std::max(1.0, std::abs(x)), grid_points);
            grid.error(std::max(0.0, best - d.value), where);
        }
    }
    std::vector<CheckReport> out{budget.finish(), marginals.finish(), grad.finish(), hess.finish(), diag.finish(),
                                 homog.finish(),  euler.finish()};
    if (agents.all_exponential()) out.push_back(closed.finish());
    out.push_back(grid.finish());
    return out;
}

inline std::vector<CheckReport> suite_conjugacy(const SuiteContext& ctx) {
    const auto& [agents, tree] = ctx.problem;
    auto round = ctx.check("conjugacy.round_trip", 1e-8);
    auto fuv = ctx.check("conjugacy.f_equals_uv", 1e-9);
    auto gxy = ctx.check("conjugacy.g_equals_xy", 1e-9);
    auto residual = ctx.check("conjugacy.dual_solve_residual", 1e-10);
    auto minimax = ctx.check("conjugacy.minimax_grid", 1e-6);
    auto closed = ctx.check("conjugacy.exponential_closed_form", 1e-10);
    PointSampler rng(ctx.cfg.seed, "conjugacy");

    double T = 0.0;
    for (const auto& u : agents.agents()) T += risk_tolerance(u, 0.0);

    for (int i = 0; i < ctx.cfg.n_points; ++i) {
        const NodeRef node = rng.node(tree);
        const NodeField f(tree, agents, node);
        const PrimalPoint a = rng.primal(ctx.M, ctx.J, ctx.cfg);
        auto where = [&] { return at(a, node); };
        const auto forward = conjugate_point_from_primal(f, a);
        const auto back = conjugate_point_from_dual(f, forward.dual);
        round.point();
        round.error(std::max((back.primal.v - a.v).cwiseAbs().maxCoeff(), std::abs(back.primal.x - a.x)), where);
        fuv.point();
        fuv.compare(forward.f_value, a.v.dot(forward.dual.u), where);
        gxy.point();
        gxy.compare(back.g_value, a.x * forward.dual.y, where);

        const DualPoint b = rng.dual(ctx.M, ctx.J, ctx.cfg);
        auto where_b = [&] { return at(b, node); };
        const auto pair = conjugate_point_from_dual(f, b);
        const auto check = f(pair.primal);
        residual.point();
        for (Index m = 0; m < ctx.M; ++m) residual.compare(check.df_dv()[m], b.u[m], where_b);
        residual.compare(check.df_dx(), b.y, where_b);
        fuv.point();
        fuv.compare(check.value, pair.primal.v.dot(b.u), where_b);

        if (agents.all_exponential()) {
            // g(u, 1, q) = sum t ln(t / -u) + T ln E[exp(-(Sigma_0 + <q, psi>) / T) | node].
            double g = 0.0, mgf = 0.0;
            for (Index m = 0; m < ctx.M; ++m) {
                const double t = 1.0 / agents[static_cast<std::size_t>(m)].max_rate();
                g += t * std::log(t / -b.u[m]);
            }
            for (const auto& [k, p] : tree.descendants(node)) {
                const auto& l = tree.leaf(k);
                mgf += p * std::exp(-(l.sigma0 + l.psi.dot(b.q)) / T);
            }
            closed.point();
            closed.compare(pair.g_value, g + T * std::log(mgf), where_b);
        }
        if (i < 10) {
            const auto mm = minimax_grid(f, pair);
            minimax.point();
            minimax.error(std::max(std::abs(mm.sup_inf - pair.g_value), std::abs(mm.inf_sup - pair.g_value)), where_b);
        }
    }
    std::vector<CheckReport> out{round.finish(), fuv.finish(), gxy.finish(), residual.finish(), minimax.finish()};
    if (agents.all_exponential()) out.push_back(closed.finish());
    return out;
}

inline std::vector<CheckReport> suite_identities(const SuiteContext& ctx) {
    const auto& [agents, tree] = ctx.problem;
    const Index M = ctx.M, J = ctx.J;
    auto inverse = ctx.check("identities.BA_identity", 1e-7);
    auto rows = ctx.check("identities.A_row_sums", 1e-8);
    auto total = ctx.check("identities.A_total", 1e-8);
    auto csum = ctx.check("identities.C_column_sums", 1e-8);
    auto b_fd = ctx.check("identities.B_fd", hessian_tol);
    auto e_fd = ctx.check("identities.E_fd", hessian_tol);
    auto h_fd = ctx.check("identities.H_fd", hessian_tol);
    auto sym = ctx.check("identities.symmetry", 1e-10);
    PointSampler rng(ctx.cfg.seed, "identities");
    // B and E are second derivatives of g: differences of v = dg/du.
    const double h = ctx.cfg.hessian_step;
    const double k = ctx.cfg.g_step;

    for (int i = 0; i < ctx.cfg.n_points; ++i) {
        const NodeRef node = rng.node(tree);
        const NodeField f(tree, agents, node);
        const PrimalPoint a = rng.primal(M, J, ctx.cfg);
        auto where = [&] { return at(a, node); };
        const auto d = f(a);
        const auto pair = conjugate_point_from_primal(f, a);
        const auto s = second_order_bundle(f, pair);
        const DualPoint& b = pair.dual;
        auto solve = [&](const DualPoint& p) { return conjugate_point_from_dual(f, p, a); };

        inverse.point();
        inverse.error((s.B_mat * s.A_mat - Matrix::Identity(M, M)).lpNorm<Eigen::Infinity>(), where);
        sym.point();
        const double scale = std::max(1.0, s.A_mat.cwiseAbs().maxCoeff());
        sym.error((s.A_mat - s.A_mat.transpose()).cwiseAbs().maxCoeff() / scale, where);
        if (J > 0) sym.error((s.D_mat - s.D_mat.transpose()).cwiseAbs().maxCoeff() / std::max(1.0, s.D_mat.cwiseAbs().maxCoeff()), where);

        rows.point();
        const Vector row_sums = s.A_mat.rowwise().sum();
        for (Index l = 0; l < M; ++l) rows.compare(row_sums[l], -a.v[l] * d.d2f_dvdx()[l] / d.d2f_dx2(), where);
        total.point();
        total.compare(s.A_mat.sum(), -d.df_dx() / d.d2f_dx2(), where);

        // v = dg/du, so B^{lm} = y (dv^l / du^m) / (v^l v^m).
        b_fd.point();
        for (Index m = 0; m < M; ++m) {
            const double step = h * std::abs(b.u[m]);
            DualPoint up = b, down = b;
            up.u[m] += step;
            down.u[m] -= step;
            const Vector dv = (solve(up).primal.v - solve(down).primal.v) / (2.0 * step);
            for (Index l = 0; l < M; ++l) b_fd.compare(b.y * dv[l] / (a.v[l] * a.v[m]), s.B_mat(l, m), where);
        }

        if (J == 0) continue;
        csum.point();
        const Vector col_sums = s.C_mat.colwise().sum().transpose();
        for (Index j = 0; j < J; ++j) {
            csum.compare(col_sums[j], d.df_dq()[j] / d.df_dx() - d.d2f_dxdq()[j] / d.d2f_dx2(), where);
        }
        // E^{mj} = d log v^m / dq^j.
        e_fd.point();
        for (Index j = 0; j < J; ++j) {
            DualPoint up = b, down = b;
            up.q[j] += h;
            down.q[j] -= h;
            const Vector dlogv =
                (solve(up).primal.v.array().log() - solve(down).primal.v.array().log()).matrix() / (2.0 * h);
            for (Index m = 0; m < M; ++m) e_fd.compare(dlogv[m], s.E_mat(m, j), where);
        }
        // H = g_qq / y by second differences of g.
        h_fd.point();
        auto g_shift = [&](Index r, double dr, Index c, double dc) {
            DualPoint p = b;
            p.q[r] += dr;
            p.q[c] += dc;
            return solve(p).g_value;
        };
        for (Index r = 0; r < J; ++r) {
            for (Index c = r; c < J; ++c) {
                double fd;
                if (r == c) {
                    fd = (g_shift(r, k, c, 0.0) - 2.0 * pair.g_value + g_shift(r, -k, c, 0.0)) / (k * k);
                } else {
                    fd = (g_shift(r, k, c, k) - g_shift(r, k, c, -k) - g_shift(r, -k, c, k) + g_shift(r, -k, c, -k)) /
                         (4.0 * k * k);
                }
                h_fd.compare(fd / b.y, s.H_mat(r, c), where);
            }
        }
    }
    std::vector<CheckReport> out{inverse.finish(), rows.finish(), total.finish(), b_fd.finish(), sym.finish()};
    if (J > 0) {
        out.push_back(csum.finish());
        out.push_back(e_fd.finish());
        out.push_back(h_fd.finish());
    }
    return out;
}

inline std::vector<CheckReport> suite_field(const SuiteContext& ctx) {
    const auto& [agents, tree] = ctx.problem;
    const Index M = ctx.M, J = ctx.J;
    auto tower = ctx.check("field.tower_property", 1e-10);
    auto grad = ctx.check("field.gradient_fd", gradient_tol);
    auto hess = ctx.check("field.hessian_fd", hessian_tol);
    auto utility = ctx.check("field.expected_utility", 1e-9);
    auto budget = ctx.check("field.allocation_budget", 1e-10);
    auto inverse = ctx.check("field.inverse_round_trip", 1e-8);
    auto simplex = ctx.check("field.inverse_in_simplex", 1e-12);
    PointSampler rng(ctx.cfg.seed, "field");

    for (int i = 0; i < ctx.cfg.n_points; ++i) {
        const NodeRef node = rng.node(tree);
        const PrimalPoint a = rng.primal(M, J, ctx.cfg);
        auto where = [&] { return at(a, node); };
        const auto f = field_at(tree, agents, a, node);

        if (!tree.is_leaf(node)) {
            PrimalDerivatives avg(M, J);
            const auto kids = tree.children(node);
            const auto& p = tree.transition_probabilities(node);
            for (std::size_t c = 0; c < kids.size(); ++c) {
                const auto child = field_at(tree, agents, a, kids[c]);
                avg.value += p[c] * child.value;
                avg.gradient += p[c] * child.gradient;
                avg.hessian += p[c] * child.hessian;
            }
            tower.point();
            tower.compare(avg.value, f.value, where);
            for (Index r = 0; r < f.gradient.size(); ++r) {
                tower.compare(avg.gradient[r], f.gradient[r], where);
                for (Index c = 0; c < f.gradient.size(); ++c) tower.compare(avg.hessian(r, c), f.hessian(r, c), where);
            }
        }

        const Vector z = detail::pack(a);
        auto at_point = [&](const Vector& p) { return field_at(tree, agents, detail::unpack(p, M, J), node); };
        const Vector fd = finite_difference_gradient([&](const Vector& p) { return at_point(p).value; }, z, ctx.cfg.fd_step);
        grad.point();
        for (Index r = 0; r < z.size(); ++r) grad.compare(fd[r], f.gradient[r], where);
        const Matrix fdH = finite_difference_jacobian([&](const Vector& p) -> Vector { return at_point(p).gradient; }, z,
                                                      ctx.cfg.hessian_step);
        hess.point();
        for (Index r = 0; r < z.size(); ++r) {
            for (Index c = 0; c < z.size(); ++c) hess.compare(fdH(r, c), f.hessian(r, c), where);
        }

        const Vector U = expected_utility_field(tree, agents, a, node);
        utility.point();
        for (Index m = 0; m < M; ++m) utility.compare(U[m], f.df_dv()[m], where);

        const auto [leaf_k, leaf_p] = tree.descendants(node)[rng.index(tree.descendants(node).size())];
        (void)leaf_p;
        const NodeRef leaf{tree.levels(), static_cast<int>(leaf_k)};
        const auto& l = tree.leaf(leaf_k);
        const double sigma = l.sigma0 + a.x + l.psi.dot(a.q);
        budget.point();
        budget.error(std::abs(pareto_allocation_field(tree, agents, a, leaf).sum() - sigma) / std::max(1.0, std::abs(sigma)),
                     where);

        const Vector v_simplex = a.v / a.v.sum();
        const PrimalPoint a_simplex{v_simplex, a.x, a.q};
        const Vector u = field_at(tree, agents, a_simplex, node).df_dv();
        const auto inv = invert_field(tree, agents, u, a.q, node);
        auto where_s = [&] { return at(a_simplex, node); };
        inverse.point();
        inverse.error(std::max(std::abs(inv.X - a.x), (inv.V - v_simplex).cwiseAbs().maxCoeff()), where_s);
        simplex.point();
        simplex.error(std::abs(inv.V.sum() - 1.0) + (inv.V.minCoeff() > 0.0 ? 0.0 : 1.0), where_s);
    }
    return {tower.finish(), grad.finish(), hess.finish(), utility.finish(), budget.finish(), inverse.finish(),
            simplex.finish()};
}

inline std::vector<CheckReport> suite_bounds(const SuiteContext& ctx) {
    const auto& [agents, tree] = ctx.problem;
    const Index M = ctx.M, J = ctx.J;
    const double c = ctx.c;
    auto signs = ctx.check("bounds.F_signs", 0.0);
    auto f7 = ctx.check("bounds.F7", bound_slack);
    auto f8 = ctx.check("bounds.F8", bound_slack);
    auto f9 = ctx.check("bounds.F9", bound_slack);
    auto g7 = ctx.check("bounds.G7", bound_slack);
    auto g8 = ctx.check("bounds.G8", bound_slack);
    auto g9 = ctx.check("bounds.G9", bound_slack);
    PointSampler rng(ctx.cfg.seed, "bounds");

    for (int i = 0; i < ctx.cfg.n_points; ++i) {
        const NodeRef node = rng.node(tree);
        const NodeField f(tree, agents, node);
        const PrimalPoint a = rng.primal(M, J, ctx.cfg);
        auto where = [&] { return at(a, node); };
        const auto d = f(a);
        for (auto* k : {&signs, &f7, &f8, &f9}) k->point();
        bool ok = d.value < 0.0 && d.df_dx() > 0.0 && d.d2f_dx2() < 0.0;
        for (Index m = 0; m < M; ++m) ok = ok && d.df_dv()[m] < 0.0;
        signs.error(ok ? 0.0 : 1.0, where);
        for (Index m = 0; m < M; ++m) {
            f7.bound(-a.v[m] * d.df_dv()[m] / d.df_dx(), 1.0 / c, c, where);
            f9.bound(a.v[m] * d.d2f_dvdx()[m] / -d.d2f_dx2(), 1.0 / c, c, where);
        }
        const Matrix A = a_matrix(d, a.v);
        const auto spectrum = spectral_bound_check(0.5 * (A + A.transpose()), c, 0.0);
        f8.bound(spectrum.min_eigenvalue, 1.0 / c, c, where);
        f8.bound(spectrum.max_eigenvalue, 1.0 / c, c, where);

        const DualPoint b = rng.dual(M, J, ctx.cfg);
        auto where_b = [&] { return at(b, node); };
        const auto pair = conjugate_point_from_dual(f, b);
        for (auto* k : {&g7, &g8, &g9}) k->point();
        for (Index m = 0; m < M; ++m) g7.bound(-b.u[m] * pair.primal.v[m] / pair.dual.y, 1.0 / c, c, where_b);
        const auto s = second_order_bundle(f, pair);
        const auto dual_spectrum = spectral_bound_check(s.B_mat, c, 0.0);
        g8.bound(dual_spectrum.min_eigenvalue, 1.0 / c, c, where_b);
        g8.bound(dual_spectrum.max_eigenvalue, 1.0 / c, c, where_b);
        const Vector z = s.B_mat.llt().solve(Vector::Ones(M));
        for (Index m = 0; m < M; ++m) g9.bound(z[m], 1.0 / c, c, where_b);
    }
    return {signs.finish(), f7.finish(), f8.finish(), f9.finish(), g7.finish(), g8.finish(), g9.finish()};
}

inline std::vector<CheckReport> suite_lemma19(const SuiteContext& ctx) {
    const auto& [agents, tree] = ctx.problem;
    const Index M = ctx.M, J = ctx.J;
    auto agree = ctx.check("lemma19.assembly_agreement", 1e-8);
    auto spectral = ctx.check("lemma19.spectral_bound", bound_slack);
    auto density = ctx.check("lemma19.density_normalization", 1e-12);
    auto tau_sum = ctx.check("lemma19.tau_sum", 1e-12);
    auto tau_bound = ctx.check("lemma19.tau_bounds", bound_slack);
    auto martingale = ctx.check("lemma19.R_martingale", 1e-10);
    PointSampler rng(ctx.cfg.seed, "lemma19");
    const double c = ctx.c;
    const std::size_t L = tree.num_leaves();

    for (int i = 0; i < ctx.cfg.n_points; ++i) {
        const NodeRef node = rng.node(tree);
        const PrimalPoint a = rng.primal(M, J, ctx.cfg);
        auto where = [&] { return at(a, node); };
        const auto res = lemma19_matrix(tree, agents, a, node);
        agree.point();
        for (Index l = 0; l < M; ++l) {
            for (Index m = 0; m < M; ++m) agree.compare(res.risk_tolerance_form(l, m), res.direct_form(l, m), where);
        }
        const Matrix sym = 0.5 * (res.risk_tolerance_form + res.risk_tolerance_form.transpose());
        const auto sb = spectral_bound_check(sym, c, 0.0);
        spectral.point();
        spectral.bound(sb.min_eigenvalue, 1.0 / c, c, where);
        spectral.bound(sb.max_eigenvalue, 1.0 / c, c, where);

        const auto& data = res.data;
        double mass = 0.0;
        for (std::size_t k = 0; k < L; ++k) mass += tree.leaf(k).probability * data.density[k];
        density.point();
        density.error(std::abs(mass - 1.0), where);
        tau_sum.point();
        tau_bound.point();
        const auto& terminal_R = data.R_process[static_cast<std::size_t>(tree.levels())];
        for (std::size_t k = 0; k < L; ++k) {
            tau_sum.compare(data.tau.row(static_cast<Index>(k)).sum(), terminal_R[k], where);
            for (Index m = 0; m < M; ++m) tau_bound.bound(data.tau(static_cast<Index>(k), m), 1.0 / c, c, where);
        }
        martingale.point();
        Matrix leaf_R(static_cast<Index>(L), 1);
        for (std::size_t k = 0; k < L; ++k) leaf_R(static_cast<Index>(k), 0) = terminal_R[k];
        for (int level = 0; level < tree.levels(); ++level) {
            for (std::size_t n = 0; n < tree.num_nodes(level); ++n) {
                const NodeRef at_node{level, static_cast<int>(n)};
                // One-step form: R at a node is the reweighted mean of R over its children.
                double num = 0.0, den = 0.0;
                const auto kids = tree.children(at_node);
                const auto& p = tree.transition_probabilities(at_node);
                for (std::size_t k = 0; k < kids.size(); ++k) {
                    double mass_k = 0.0;
                    for (const auto& [leaf, prob] : tree.descendants(kids[k])) mass_k += prob * data.density[leaf];
                    num += p[k] * mass_k *
                           data.R_process[static_cast<std::size_t>(level + 1)][static_cast<std::size_t>(kids[k].index)];
                    den += p[k] * mass_k;
                }
                martingale.compare(num / den, data.R_process[static_cast<std::size_t>(level)][n], where);
                martingale.compare(reweighted_expectation(tree, data, at_node, leaf_R)[0],
                                   data.R_process[static_cast<std::size_t>(level)][n], where);
            }
        }
    }
    return {agree.finish(), spectral.finish(), density.finish(), tau_sum.finish(), tau_bound.finish(), martingale.finish()};
}

inline std::vector<CheckReport> suite_envelope(const SuiteContext& ctx) {
    if (ctx.J == 0) return {};
    const auto& [agents, tree] = ctx.problem;
    auto env = ctx.check("envelope.dg_dq", 1e-5);
    PointSampler rng(ctx.cfg.seed, "envelope");
    for (int i = 0; i < ctx.cfg.n_points; ++i) {
        const NodeRef node = rng.node(tree);
        const NodeField f(tree, agents, node);
        const PrimalPoint a = rng.primal(ctx.M, ctx.J, ctx.cfg);
        auto where = [&] { return at(a, node); };
        const Vector dev = envelope_check(f, conjugate_point_from_primal(f, a), ctx.cfg.envelope_step);
        env.point();
        env.error(dev.maxCoeff(), where);
    }
    return {env.finish()};
}

// Weights w_n = (1/n, (1 - 1/n)/(M-1), ...) approach the boundary of the
// simplex; sum_m dr/dv^m must decrease without bound (reported threshold
// -1e6). On the dual side g(u_n, 1, 0) with u_n = (-1/n, -1, ..., -1) must
// increase, at least by log(n'/n)/c between probes (a consequence of G7).
inline std::vector<CheckReport> suite_boundary(const SuiteContext& ctx) {
    if (ctx.M < 2) return {};
    const auto& [agents, tree] = ctx.problem;
    const Index M = ctx.M;
    const double threshold = -1e6;
    auto f6 = ctx.check("boundary.F6_divergence", 0.0);
    auto g6 = ctx.check("boundary.G6_divergence", bound_slack);
    std::vector<double> ns;
    for (double n = 10.0; n <= ctx.cfg.boundary_max_n * (1.0 + 1e-12); n *= 10.0) ns.push_back(n);

    double previous = 0.0, lowest = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < ns.size(); ++k) {
        Vector w = Vector::Constant(M, (1.0 - 1.0 / ns[k]) / static_cast<double>(M - 1));
        w[0] = 1.0 / ns[k];
        auto where = [&] { return "w=" + describe(w) + " x=" + describe(ctx.cfg.boundary_x); };
        const double sum = r_and_gradient(agents, w, ctx.cfg.boundary_x).dr_dv.sum();
        f6.point();
        if (k > 0 && !(sum < previous)) f6.error(1.0, where);
        previous = sum;
        lowest = std::min(lowest, sum);
    }
    f6.observe(lowest);
    if (!(lowest < threshold)) {
        f6.error((lowest - threshold) / std::abs(threshold), [&] {
            return "sum of dr/dv stays above -1e6 down to w^1=" + describe(1.0 / ns.back()) + " at x=" +
                   describe(ctx.cfg.boundary_x);
        });
    }

    const NodeField f(tree, agents, tree.root());
    std::optional<PrimalPoint> guess;
    double g_previous = 0.0;
    for (std::size_t k = 0; k < ns.size(); ++k) {
        DualPoint b{-Vector::Ones(M), 1.0, Vector::Zero(ctx.J)};
        b.u[0] = -1.0 / ns[k];
        auto where = [&] { return describe(b); };
        const auto pair = conjugate_point_from_dual(f, b, guess);
        guess = pair.primal;
        g6.point();
        if (k > 0) {
            const double rise = pair.g_value - g_previous;
            const double need = std::log(ns[k] / ns[k - 1]) / ctx.c;
            g6.error(std::max(0.0, need - rise) / need, where);
        }
        g_previous = pair.g_value;
    }
    g6.observe(g_previous);
    return {f6.finish(), g6.finish()};
}

}  // namespace detail

/// Runs one named suite, or every suite for "all". Deterministic in the seed.
inline std::vector<CheckReport> run_suite(const std::string& name, const SweepConfig& cfg, const Problem& problem) {
    cfg.validate();
    const Index J = problem.tree.num_assets();
    const detail::SuiteContext ctx{problem, cfg, static_cast<Index>(problem.agents.size()), J,
                                   cfg.c_override.value_or(problem.agents.c())};
    using Runner = std::vector<CheckReport> (*)(const detail::SuiteContext&);
    static const std::map<std::string, Runner> runners{
        {"assumptions", detail::suite_assumptions}, {"aggregate", detail::suite_aggregate},
        {"conjugacy", detail::suite_conjugacy},     {"identities", detail::suite_identities},
        {"field", detail::suite_field},             {"bounds", detail::suite_bounds},
        {"lemma19", detail::suite_lemma19},         {"envelope", detail::suite_envelope},
        {"boundary", detail::suite_boundary}};
    if (name == "all") {
        std::vector<CheckReport> out;
        for (const auto& s : suite_names()) {
            auto part = runners.at(s)(ctx);
            out.insert(out.end(), part.begin(), part.end());
        }
        return out;
    }
    auto it = runners.find(name);
    if (it == runners.end()) {
        throw ConfigError("unknown suite '" + name + "' (expected one of: all, assumptions, aggregate, conjugacy, "
                          "identities, field, bounds, lemma19, envelope, boundary)");
    }
    return it->second(ctx);
}

inline bool all_passed(const std::vector<CheckReport>& reports) {
    return std::all_of(reports.begin(), reports.end(), [](const CheckReport& r) { return r.passed; });
}

inline void to_json(nlohmann::json& j, const CheckReport& r) {
    j = nlohmann::json{{"name", r.name},
                       {"points_tested", r.points_tested},
                       {"max_abs_error", r.max_abs_error},
                       {"max_rel_error", r.max_rel_error},
                       {"tolerance", r.tolerance},
                       {"passed", r.passed},
                       {"worst_case", r.passed ? nlohmann::json(nullptr) : nlohmann::json(r.worst_case)}};
    if (r.observed) j["observed"] = *r.observed;
}

}  // namespace saddlefield
