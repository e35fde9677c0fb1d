#pragma once

// Aggregate utility: the v-weighted sup-convolution
//
//     r(v, x) = max { sum_m v^m u_m(x^m) : x^1 + ... + x^M = x },
//
// its maximizing (Pareto) allocation, and closed-form first and second
// derivatives expressed through the agents' risk tolerances at the optimum.

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

#include "saddlefield/errors.hpp"
#include "saddlefield/points.hpp"
#include "saddlefield/utility.hpp"

namespace saddlefield {

struct AllocationResult {
    Vector x_hat;
    // dr/dx, the common weighted marginal utility v^m u_m'(x_hat^m).
    double lambda = 0.0;
    Vector tolerances;
    double total_tolerance = 0.0;
    int iterations = 0;
};

struct AggregateDerivatives {
    AllocationResult allocation;

    double value = 0.0;
    double dr_dx = 0.0;
    Vector dr_dv;

    // Second-order part, filled by r_hessian().
    double d2r_dx2 = 0.0;
    Vector d2r_dvdx;
    Matrix d2r_dv2;
    Matrix A_matrix;
    Vector dxhat_dx;
    // (l, m) entry: v^l * d x_hat^m / d v^l.
    Matrix weighted_dxhat_dv;
};

namespace detail {

inline void validate_weights(const AgentSet& agents, const Vector& v) {
    if (agents.size() == 0) throw DomainError("aggregate utility: empty agent set");
    if (static_cast<std::size_t>(v.size()) != agents.size()) {
        std::ostringstream msg;
        msg << "aggregate utility: weight vector has " << v.size() << " components, expected " << agents.size();
        throw DomainError(msg.str());
    }
    for (Index m = 0; m < v.size(); ++m) {
        if (!(v[m] > 0.0) || !std::isfinite(v[m])) {
            throw DomainError("aggregate utility: Pareto weights must be positive and finite");
        }
    }
}

}  // namespace detail

/// Pareto allocation of the total endowment x.
///
/// Solves sum_m (u_m')^{-1}(lambda / v^m) = x in s = log(lambda). The left
/// side is strictly decreasing in s with slope -sum_m t_m(x_hat^m), so the
/// root is bracketed by doubling/halving lambda and then polished with
/// bisection-safeguarded Newton steps.
inline AllocationResult solve_allocation(const AgentSet& agents, const Vector& v, double x) {
    detail::validate_weights(agents, v);
    if (!std::isfinite(x)) throw DomainError("aggregate utility: x must be finite");

    const Index M = v.size();
    AllocationResult out;
    out.x_hat.resize(M);
    out.tolerances.resize(M);

    if (M == 1) {
        out.x_hat[0] = x;
        out.lambda = v[0] * eval(agents[0], x, 1);
        out.tolerances[0] = risk_tolerance(agents[0], x);
        out.total_tolerance = out.tolerances[0];
        return out;
    }

    Vector log_v = v.array().log();
    auto residual = [&](double s, Vector& xs) {
        double sum = 0.0;
        for (Index m = 0; m < M; ++m) {
            xs[m] = detail::inverse_marginal_log(agents[m], s - log_v[m]);
            sum += xs[m];
        }
        return sum - x;
    };
    auto total_tolerance = [&](const Vector& xs) {
        double total = 0.0;
        for (Index m = 0; m < M; ++m) total += risk_tolerance(agents[m], xs[m]);
        return total;
    };

    // Scale-free start: geometric mean of v^m u_m'(x / M).
    double s = 0.0;
    for (Index m = 0; m < M; ++m) {
        s += log_v[m] + detail::log_marginal(agents[m], x / static_cast<double>(M));
    }
    s /= static_cast<double>(M);

    Vector xs(M);
    int iterations = 0;
    constexpr int max_iterations = 200;
    double h = residual(s, xs);

    double lo = s, hi = s;
    double h_lo = h, h_hi = h;
    double step = std::log(2.0);
    while (h_lo < 0.0) {
        if (++iterations > max_iterations) throw SolverError("allocation: bracketing failed");
        hi = lo;
        h_hi = h_lo;
        lo -= step;
        step *= 2.0;
        h_lo = residual(lo, xs);
    }
    step = std::log(2.0);
    while (h_hi > 0.0) {
        if (++iterations > max_iterations) throw SolverError("allocation: bracketing failed");
        lo = hi;
        h_lo = h_hi;
        hi += step;
        step *= 2.0;
        h_hi = residual(hi, xs);
    }

    auto magnitude = [&](const Vector& xs_) { return std::abs(x) + xs_.cwiseAbs().sum(); };
    constexpr double eps = std::numeric_limits<double>::epsilon();
    while (true) {
        if (++iterations > max_iterations) {
            throw SolverError("allocation: no convergence after 200 iterations");
        }
        h = residual(s, xs);
        if (std::abs(h) <= 4.0 * eps * magnitude(xs)) break;
        if (h > 0.0) {
            lo = s;
        } else {
            hi = s;
        }
        double next = s + h / total_tolerance(xs);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == s || hi - lo <= 4.0 * eps * std::max(1.0, std::abs(s))) break;
        s = next;
    }

    const double budget_tol = 1e-12 * std::max(1.0, std::abs(x)) + 8.0 * eps * magnitude(xs);
    if (!(std::abs(h) <= budget_tol)) {
        std::ostringstream msg;
        msg << "allocation: budget residual " << h << " exceeds " << budget_tol;
        throw SolverError(msg.str());
    }

    out.x_hat = xs;
    out.lambda = std::exp(s);
    for (Index m = 0; m < M; ++m) out.tolerances[m] = risk_tolerance(agents[m], xs[m]);
    out.total_tolerance = out.tolerances.sum();
    out.iterations = iterations;
    return out;
}

/// r(v, x) with dr/dx = lambda and dr/dv^m = u_m(x_hat^m).
inline AggregateDerivatives r_and_gradient(const AgentSet& agents, const Vector& v, double x) {
    AggregateDerivatives d;
    d.allocation = solve_allocation(agents, v, x);
    const Index M = v.size();
    d.dr_dv.resize(M);
    d.value = 0.0;
    for (Index m = 0; m < M; ++m) {
        d.dr_dv[m] = eval(agents[m], d.allocation.x_hat[m], 0);
        d.value += v[m] * d.dr_dv[m];
    }
    d.dr_dx = d.allocation.lambda;
    return d;
}

/// Adds the second derivatives, allocation sensitivities and the diagonal
/// matrix A(r) = diag(t_l(x_hat^l)).
inline AggregateDerivatives r_hessian(const AgentSet& agents, const Vector& v, double x) {
    AggregateDerivatives d = r_and_gradient(agents, v, x);
    const Index M = v.size();
    const Vector& t = d.allocation.tolerances;
    const double T = d.allocation.total_tolerance;
    const double lambda = d.dr_dx;

    d.d2r_dx2 = -lambda / T;
    d.d2r_dvdx.resize(M);
    d.d2r_dv2.resize(M, M);
    d.A_matrix = Matrix::Zero(M, M);
    d.dxhat_dx.resize(M);
    d.weighted_dxhat_dv.resize(M, M);
    for (Index m = 0; m < M; ++m) {
        d.d2r_dvdx[m] = lambda * (t[m] / T) / v[m];
        d.dxhat_dx[m] = t[m] / T;
        d.A_matrix(m, m) = t[m];
    }
    for (Index l = 0; l < M; ++l) {
        for (Index m = 0; m < M; ++m) {
            const double delta = (l == m) ? 1.0 : 0.0;
            d.weighted_dxhat_dv(l, m) = t[m] * (delta - t[l] / T);
            if (l == m) {
                d.d2r_dv2(l, m) = lambda * t[l] * (1.0 - t[l] / T) / (v[l] * v[l]);
            } else {
                d.d2r_dv2(l, m) = -lambda * (t[l] * t[m]) / T / (v[l] * v[m]);
            }
        }
    }
    return d;
}

/// Grid maximum of sum_m v^m u_m(x^m) over allocations x^m = x/M + delta_m
/// (m < M) with delta_m on a uniform grid in [-half_width, half_width] and
/// x^M closing the budget. A lower bound for r(v, x).
inline double brute_force_r(const AgentSet& agents, const Vector& v, double x, double half_width, int grid_points) {
    detail::validate_weights(agents, v);
    if (grid_points < 3) throw DomainError("brute force: grid_points must be at least 3");
    if (!(half_width > 0.0)) throw DomainError("brute force: half width must be positive");
    const Index M = v.size();
    if (M == 1) return v[0] * eval(agents[0], x, 0);

    double cells = 1.0;
    for (Index m = 0; m + 1 < M; ++m) cells *= grid_points;
    if (cells > 1e8) throw DomainError("brute force: grid too large");

    const double base = x / static_cast<double>(M);
    const double spacing = 2.0 * half_width / (grid_points - 1);
    std::vector<int> counter(static_cast<std::size_t>(M - 1), 0);
    double best = -std::numeric_limits<double>::infinity();
    while (true) {
        double total = 0.0;
        double used = 0.0;
        bool ok = true;
        for (Index m = 0; m + 1 < M && ok; ++m) {
            const double xm = base - half_width + spacing * counter[static_cast<std::size_t>(m)];
            used += xm;
            if (xm < agents[m].lower_limit()) {
                ok = false;
            } else {
                total += v[m] * eval(agents[m], xm, 0);
            }
        }
        const double last = x - used;
        if (ok && last >= agents[M - 1].lower_limit()) {
            total += v[M - 1] * eval(agents[M - 1], last, 0);
            best = std::max(best, total);
        }
        Index k = 0;
        while (k < M - 1 && ++counter[static_cast<std::size_t>(k)] == grid_points) {
            counter[static_cast<std::size_t>(k)] = 0;
            ++k;
        }
        if (k == M - 1) break;
    }
    return best;
}

/// Starting point for the saddle solve that is exact when every agent is a
/// pure exponential: v^m = -t_m y / u^m and
/// x = sum_m t_m log v^m - T log y - shift, with tolerances taken at zero.
/// `shift` is the certainty equivalent of any additive random endowment.
inline PrimalPoint exponential_proxy_guess(const AgentSet& agents, const DualPoint& b, double shift = 0.0) {
    const Index M = b.u.size();
    PrimalPoint a;
    a.v.resize(M);
    a.q = b.q;
    double T = 0.0;
    double x = 0.0;
    for (Index m = 0; m < M; ++m) {
        const double t = risk_tolerance(agents[static_cast<std::size_t>(m)], 0.0);
        a.v[m] = -t * b.y / b.u[m];
        x += t * std::log(a.v[m]);
        T += t;
    }
    a.x = x - T * std::log(b.y) - shift;
    return a;
}

/// r(v, x) viewed as a saddle function on A that does not depend on q.
class AggregateFunction {
public:
    explicit AggregateFunction(const AgentSet& agents, Index num_assets = 0)
        : agents_(&agents), num_assets_(num_assets) {}

    Index num_agents() const { return static_cast<Index>(agents_->size()); }
    Index num_assets() const { return num_assets_; }
    const AgentSet& agents() const { return *agents_; }

    PrimalDerivatives operator()(const PrimalPoint& a) const {
        const Index M = num_agents();
        const auto d = r_hessian(*agents_, a.v, a.x);
        PrimalDerivatives out(M, num_assets_);
        out.value = d.value;
        out.gradient.head(M) = d.dr_dv;
        out.gradient[M] = d.dr_dx;
        out.hessian.topLeftCorner(M, M) = d.d2r_dv2;
        out.hessian.col(M).head(M) = d.d2r_dvdx;
        out.hessian.row(M).head(M) = d.d2r_dvdx.transpose();
        out.hessian(M, M) = d.d2r_dx2;
        return out;
    }

    PrimalPoint saddle_guess(const DualPoint& b) const { return exponential_proxy_guess(*agents_, b); }

private:
    const AgentSet* agents_;
    Index num_assets_;
};

}  // namespace saddlefield
