#pragma once

// Coordinates of the two conjugate parameter sets
//
//     A = (0,inf)^M x R x R^J   (Pareto weights v, cash x, stock quantities q)
//     B = (-inf,0)^M x (0,inf) x R^J   (utilities u, marginal y, quantities q)
//
// and the second-order jet of a saddle function on A.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <sstream>
#include <string>

#include "saddlefield/errors.hpp"

namespace saddlefield {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct PrimalPoint {
    Vector v;
    double x = 0.0;
    Vector q;

    Index num_agents() const { return v.size(); }
    Index num_assets() const { return q.size(); }

    void validate() const {
        if (v.size() < 1) throw DomainError("primal point: v must have at least one component");
        for (Index m = 0; m < v.size(); ++m) {
            if (!(v[m] > 0.0) || !std::isfinite(v[m])) {
                throw DomainError("primal point: every Pareto weight must be positive and finite");
            }
        }
        if (!std::isfinite(x)) throw DomainError("primal point: x must be finite");
        if (!q.allFinite()) throw DomainError("primal point: q must be finite");
    }
};

struct DualPoint {
    Vector u;
    double y = 1.0;
    Vector q;

    Index num_agents() const { return u.size(); }
    Index num_assets() const { return q.size(); }

    void validate() const {
        if (u.size() < 1) throw DomainError("dual point: u must have at least one component");
        for (Index m = 0; m < u.size(); ++m) {
            if (!(u[m] < 0.0) || !std::isfinite(u[m])) {
                throw DomainError("dual point: every utility level u must be negative and finite");
            }
        }
        if (!(y > 0.0) || !std::isfinite(y)) throw DomainError("dual point: y must be positive and finite");
        if (!q.allFinite()) throw DomainError("dual point: q must be finite");
    }
};

/// Value, gradient and Hessian of f at a point of A, with coordinates
/// ordered (v^1..v^M, x, q^1..q^J).
struct PrimalDerivatives {
    double value = 0.0;
    Vector gradient;
    Matrix hessian;
    Index M = 0;
    Index J = 0;

    PrimalDerivatives() = default;
    PrimalDerivatives(Index num_agents, Index num_assets)
        : gradient(Vector::Zero(num_agents + 1 + num_assets)),
          hessian(Matrix::Zero(num_agents + 1 + num_assets, num_agents + 1 + num_assets)),
          M(num_agents),
          J(num_assets) {}

    Index x_index() const { return M; }

    auto df_dv() const { return gradient.head(M); }
    double df_dx() const { return gradient[M]; }
    auto df_dq() const { return gradient.tail(J); }

    auto d2f_dv2() const { return hessian.topLeftCorner(M, M); }
    auto d2f_dvdx() const { return hessian.col(M).head(M); }
    double d2f_dx2() const { return hessian(M, M); }
    auto d2f_dvdq() const { return hessian.block(0, M + 1, M, J); }
    auto d2f_dxdq() const { return hessian.row(M).tail(J).transpose(); }
    auto d2f_dq2() const { return hessian.bottomRightCorner(J, J); }
};

/// Anything that returns the second-order jet of a saddle function f on A.
template <class F>
concept PrimalEvaluator = requires(const F& f, const PrimalPoint& a) {
    { f.num_agents() } -> std::convertible_to<Index>;
    { f.num_assets() } -> std::convertible_to<Index>;
    { f(a) } -> std::convertible_to<PrimalDerivatives>;
};

/// Evaluators that can propose a starting point for the saddle solve.
template <class F>
concept ProvidesSaddleGuess = PrimalEvaluator<F> && requires(const F& f, const DualPoint& b) {
    { f.saddle_guess(b) } -> std::convertible_to<PrimalPoint>;
};

inline std::string describe(const Vector& v) {
    std::ostringstream out;
    out.precision(17);
    out << '[';
    for (Index i = 0; i < v.size(); ++i) {
        if (i) out << ',';
        out << v[i];
    }
    out << ']';
    return out.str();
}

inline std::string describe(double value) {
    std::ostringstream out;
    out.precision(17);
    out << value;
    return out.str();
}

inline std::string describe(const PrimalPoint& a) {
    return "v=" + describe(a.v) + " x=" + describe(a.x) + " q=" + describe(a.q);
}

inline std::string describe(const DualPoint& b) {
    return "u=" + describe(b.u) + " y=" + describe(b.y) + " q=" + describe(b.q);
}

}  // namespace saddlefield
