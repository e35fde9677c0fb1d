#pragma once

// Saddle conjugacy between a function f on A (concave-convex in (x, v)) and
// its conjugate
//
//     g(u, y, q) = sup_v inf_x [ <v, u> + x y - f(v, x, q) ].
//
// The conjugate is never tabulated. A dual point b = (u, y, q) is mapped to
// its saddle point a = (v, x, q) by solving u = df/dv(a), y = df/dx(a), after
// which g(b) = x y. Second derivatives of g follow from those of f through
// the matrices A, C, D (primal side) and B, E, H (dual side):
//
//     B = A^{-1},   E = -A^{-1} C,   H = C^T A^{-1} C + D.

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "saddlefield/errors.hpp"
#include "saddlefield/points.hpp"

namespace saddlefield {

struct SaddlePair {
    PrimalPoint primal;
    DualPoint dual;
    double f_value = 0.0;
    double g_value = 0.0;
    int iterations = 0;
    // max(|df/dv^m / u^m - 1|, |df/dx / y - 1|) at the returned point.
    double residual = 0.0;
};

struct SecondOrderBundle {
    Matrix A_mat;
    Matrix C_mat;
    Matrix D_mat;
    Matrix B_mat;
    Matrix E_mat;
    Matrix H_mat;
};

/// A^{lm} = v^l v^m / f_x * (f_{v^l v^m} - f_{v^l x} f_{v^m x} / f_xx).
inline Matrix a_matrix(const PrimalDerivatives& d, const Vector& v) {
    const Index M = d.M;
    const double fx = d.df_dx();
    const double fxx = d.d2f_dx2();
    const Vector fvx = d.d2f_dvdx();
    Matrix A(M, M);
    for (Index l = 0; l < M; ++l) {
        for (Index m = 0; m < M; ++m) {
            A(l, m) = v[l] * v[m] / fx * (d.hessian(l, m) - fvx[l] * fvx[m] / fxx);
        }
    }
    return A;
}

/// C^{mj} = v^m / f_x * (f_{v^m q^j} - f_{v^m x} f_{x q^j} / f_xx).
inline Matrix c_matrix(const PrimalDerivatives& d, const Vector& v) {
    const Index M = d.M, J = d.J;
    const double fx = d.df_dx();
    const double fxx = d.d2f_dx2();
    Matrix C(M, J);
    for (Index m = 0; m < M; ++m) {
        for (Index j = 0; j < J; ++j) {
            C(m, j) = v[m] / fx * (d.hessian(m, M + 1 + j) - d.hessian(m, M) * d.hessian(M, M + 1 + j) / fxx);
        }
    }
    return C;
}

/// D^{ij} = 1 / f_x * (-f_{q^i q^j} + f_{x q^i} f_{x q^j} / f_xx).
inline Matrix d_matrix(const PrimalDerivatives& d) {
    const Index M = d.M, J = d.J;
    const double fx = d.df_dx();
    const double fxx = d.d2f_dx2();
    Matrix D(J, J);
    for (Index i = 0; i < J; ++i) {
        for (Index j = 0; j < J; ++j) {
            D(i, j) = (-d.hessian(M + 1 + i, M + 1 + j) + d.hessian(M, M + 1 + i) * d.hessian(M, M + 1 + j) / fxx) / fx;
        }
    }
    return D;
}

/// Dual point of a: u = df/dv(a), y = df/dx(a).
template <PrimalEvaluator F>
SaddlePair conjugate_point_from_primal(const F& f, const PrimalPoint& a) {
    a.validate();
    const PrimalDerivatives d = f(a);
    SaddlePair pair;
    pair.primal = a;
    pair.dual.u = d.df_dv();
    pair.dual.y = d.df_dx();
    pair.dual.q = a.q;
    for (Index m = 0; m < d.M; ++m) {
        if (!(pair.dual.u[m] < 0.0)) {
            throw DomainError("conjugate point: df/dv must be negative (f is not strictly decreasing in v)");
        }
    }
    if (!(pair.dual.y > 0.0)) {
        throw DomainError("conjugate point: df/dx must be positive (f is not strictly increasing in x)");
    }
    pair.f_value = d.value;
    pair.g_value = a.x * pair.dual.y;
    return pair;
}

struct SaddleSolveOptions {
    int max_iterations = 100;
    // Required final value of SaddlePair::residual.
    double tolerance = 1e-10;
};

namespace detail {

// Log-residuals log(f_v / u) and log(f_x / y); +inf where a sign condition
// fails.
inline Vector saddle_log_residual(const PrimalDerivatives& d, const DualPoint& b) {
    const Index M = d.M;
    Vector r(M + 1);
    for (Index m = 0; m < M; ++m) {
        const double ratio = d.gradient[m] / b.u[m];
        r[m] = ratio > 0.0 ? std::log(ratio) : std::numeric_limits<double>::infinity();
    }
    const double ratio = d.df_dx() / b.y;
    r[M] = ratio > 0.0 ? std::log(ratio) : std::numeric_limits<double>::infinity();
    return r;
}

inline double relative_residual(const Vector& log_residual) {
    double worst = 0.0;
    for (Index i = 0; i < log_residual.size(); ++i) worst = std::max(worst, std::abs(std::expm1(log_residual[i])));
    return worst;
}

}  // namespace detail

/// Saddle point of the conjugate pair at the dual point b.
///
/// Damped Newton in (log v, x) on the log-residuals, with the analytic second
/// derivatives of f as Jacobian; the step is halved until the residual
/// sup-norm decreases. Starts from `guess`, else from the evaluator's own
/// proposal, else from v = 1, x = 0.
template <PrimalEvaluator F>
SaddlePair conjugate_point_from_dual(const F& f, const DualPoint& b, std::optional<PrimalPoint> guess = std::nullopt,
                                     const SaddleSolveOptions& options = {}) {
    b.validate();
    const Index M = f.num_agents();
    if (b.u.size() != M) throw DomainError("conjugate point: dual point has the wrong number of agents");
    if (b.q.size() != f.num_assets()) throw DomainError("conjugate point: dual point has the wrong number of assets");

    PrimalPoint a;
    if (guess) {
        a = *guess;
        a.q = b.q;
    } else if constexpr (ProvidesSaddleGuess<F>) {
        a = f.saddle_guess(b);
    } else {
        a.v = Vector::Ones(M);
        a.x = 0.0;
        a.q = b.q;
    }
    a.validate();

    auto try_eval = [&](const PrimalPoint& p) -> std::optional<std::pair<PrimalDerivatives, Vector>> {
        try {
            PrimalDerivatives d = f(p);
            Vector r = detail::saddle_log_residual(d, b);
            if (!r.allFinite()) return std::nullopt;
            return std::make_pair(std::move(d), std::move(r));
        } catch (const RangeError&) {
            return std::nullopt;
        } catch (const SolverError&) {
            return std::nullopt;
        }
    };

    auto current = try_eval(a);
    if (!current) throw SolverError("saddle solve: starting point is outside the valid range of f");

    int iteration = 0;
    for (; iteration < options.max_iterations; ++iteration) {
        const PrimalDerivatives& d = current->first;
        const Vector& r = current->second;
        const double norm = r.lpNorm<Eigen::Infinity>();
        if (norm <= 4.0 * std::numeric_limits<double>::epsilon()) break;

        Matrix jac(M + 1, M + 1);
        for (Index m = 0; m < M; ++m) {
            for (Index l = 0; l < M; ++l) jac(m, l) = d.hessian(m, l) * a.v[l] / d.gradient[m];
            jac(m, M) = d.hessian(m, M) / d.gradient[m];
        }
        for (Index l = 0; l < M; ++l) jac(M, l) = d.hessian(M, l) * a.v[l] / d.df_dx();
        jac(M, M) = d.d2f_dx2() / d.df_dx();

        Eigen::PartialPivLU<Matrix> lu(jac);
        if (!(lu.rcond() > 1e-14)) {
            throw SolverError("saddle solve: singular Jacobian (the matrix A(f) is not of full rank)");
        }
        const Vector step = lu.solve(-r);

        bool accepted = false;
        for (double t = 1.0; t > 1e-12; t *= 0.5) {
            PrimalPoint trial = a;
            trial.v = (a.v.array().log() + t * step.head(M).array()).exp().matrix();
            trial.x = a.x + t * step[M];
            auto candidate = try_eval(trial);
            if (candidate && candidate->second.template lpNorm<Eigen::Infinity>() < norm) {
                a = std::move(trial);
                current = std::move(candidate);
                accepted = true;
                break;
            }
            // Already at working precision: a failed full step means stagnation.
            if (detail::relative_residual(r) <= options.tolerance) break;
        }
        if (!accepted) break;
    }

    const double residual = detail::relative_residual(current->second);
    if (!(residual <= options.tolerance)) {
        std::ostringstream msg;
        msg << "saddle solve: no convergence after " << iteration << " iterations (residual " << residual
            << ") at " << describe(b);
        throw SolverError(msg.str());
    }

    SaddlePair pair;
    pair.primal = a;
    pair.dual = b;
    pair.f_value = current->first.value;
    pair.g_value = a.x * b.y;
    pair.iterations = iteration;
    pair.residual = residual;
    return pair;
}

/// Primal matrices A, C, D at the saddle point and the dual matrices
/// B, E, H obtained from them through a Cholesky factorization of A.
template <PrimalEvaluator F>
SecondOrderBundle second_order_bundle(const F& f, const SaddlePair& pair) {
    const PrimalDerivatives d = f(pair.primal);
    SecondOrderBundle out;
    out.A_mat = a_matrix(d, pair.primal.v);
    out.C_mat = c_matrix(d, pair.primal.v);
    out.D_mat = d_matrix(d);

    const Matrix A_sym = 0.5 * (out.A_mat + out.A_mat.transpose());
    Eigen::LLT<Matrix> llt(A_sym);
    if (llt.info() != Eigen::Success) {
        throw DomainError("second-order bundle: A(f) is not positive definite");
    }
    const Index M = d.M;
    out.B_mat = llt.solve(Matrix::Identity(M, M));
    out.B_mat = 0.5 * (out.B_mat + out.B_mat.transpose()).eval();
    const Matrix AinvC = llt.solve(out.C_mat);
    out.E_mat = -AinvC;
    out.H_mat = out.C_mat.transpose() * AinvC + out.D_mat;
    return out;
}

/// |dg/dq^j + df/dq^j| for each asset j, with dg/dq^j from central
/// differences of g (re-solving the saddle point at q +/- step e_j).
template <PrimalEvaluator F>
Vector envelope_check(const F& f, const SaddlePair& pair, double step) {
    if (!(step > 0.0)) throw DomainError("envelope check: step must be positive");
    const Index J = pair.dual.q.size();
    Vector deviation(J);
    if (J == 0) return deviation;
    const PrimalDerivatives d = f(pair.primal);
    for (Index j = 0; j < J; ++j) {
        DualPoint up = pair.dual, down = pair.dual;
        up.q[j] += step;
        down.q[j] -= step;
        const double g_up = conjugate_point_from_dual(f, up, pair.primal).g_value;
        const double g_down = conjugate_point_from_dual(f, down, pair.primal).g_value;
        const double dg_dq = (g_up - g_down) / (2.0 * step);
        deviation[j] = std::abs(dg_dq + d.df_dq()[j]);
    }
    return deviation;
}

struct MinimaxGridResult {
    double sup_inf = 0.0;
    double inf_sup = 0.0;
};

/// Discrete sup-inf and inf-sup of L(v, x) = <v, u> + x y - f(v, x, q) on a
/// grid of (v, x) centred at the saddle point. v moves along the log
/// direction (1, 2, ..., M) and x in steps of half_width / (n / 2).
template <PrimalEvaluator F>
MinimaxGridResult minimax_grid(const F& f, const SaddlePair& pair, int grid_points = 21, double half_width = 0.5) {
    if (grid_points < 3 || grid_points % 2 == 0) throw DomainError("minimax grid: need an odd number of points >= 3");
    const Index M = pair.primal.v.size();
    Vector direction(M);
    for (Index m = 0; m < M; ++m) direction[m] = static_cast<double>(m + 1);

    const auto n = static_cast<std::size_t>(grid_points);
    Matrix L(grid_points, grid_points);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = -half_width + 2.0 * half_width * static_cast<double>(i) / static_cast<double>(n - 1);
        for (std::size_t k = 0; k < n; ++k) {
            PrimalPoint p = pair.primal;
            p.v = (pair.primal.v.array() * (s * direction.array()).exp()).matrix();
            p.x = pair.primal.x + (-half_width + 2.0 * half_width * static_cast<double>(k) / static_cast<double>(n - 1));
            if (i == n / 2) p.v = pair.primal.v;
            if (k == n / 2) p.x = pair.primal.x;
            const double fv = f(p).value;
            L(static_cast<Index>(i), static_cast<Index>(k)) = p.v.dot(pair.dual.u) + p.x * pair.dual.y - fv;
        }
    }
    MinimaxGridResult out;
    out.sup_inf = L.rowwise().minCoeff().maxCoeff();
    out.inf_sup = L.colwise().maxCoeff().minCoeff();
    return out;
}

}  // namespace saddlefield
