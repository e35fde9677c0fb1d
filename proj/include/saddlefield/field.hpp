#pragma once

// Stochastic field of aggregate utilities on a scenario tree,
//
//     F_t(v, x, q) = E[ r(v, Sigma_0 + x + <q, psi>) | F_t ],
//
// with derivatives taken as conditional expectations of the terminal
// derivatives, the expected-utility field U = dF/dv, the inverse fields
// (X, V) obtained through the saddle conjugate of F_t, and the
// risk-tolerance representation of the matrix A(F_t).

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "saddlefield/aggregate.hpp"
#include "saddlefield/errors.hpp"
#include "saddlefield/points.hpp"
#include "saddlefield/saddle.hpp"
#include "saddlefield/scenario_tree.hpp"
#include "saddlefield/utility.hpp"

namespace saddlefield {

struct FieldEvaluation : PrimalDerivatives {
    NodeRef node;
    PrimalPoint point;
};

namespace detail {

inline void validate_field_point(const ScenarioTree& tree, const AgentSet& agents, const PrimalPoint& a) {
    a.validate();
    if (static_cast<std::size_t>(a.v.size()) != agents.size()) {
        throw DomainError("field: point has " + std::to_string(a.v.size()) + " weights, expected " +
                          std::to_string(agents.size()));
    }
    if (a.q.size() != tree.num_assets()) {
        throw DomainError("field: point has " + std::to_string(a.q.size()) + " quantities, expected " +
                          std::to_string(tree.num_assets()));
    }
}

inline double total_endowment(const ScenarioTree::Leaf& leaf, const PrimalPoint& a) {
    return leaf.sigma0 + a.x + leaf.psi.dot(a.q);
}

// Chain rule for r(v, Sigma(x, q)) with dSigma/dx = 1 and dSigma/dq = psi.
inline void add_terminal(const AgentSet& agents, const ScenarioTree::Leaf& leaf, const PrimalPoint& a, double weight,
                         PrimalDerivatives& out) {
    const Index M = a.v.size();
    const Index J = a.q.size();
    const auto d = r_hessian(agents, a.v, total_endowment(leaf, a));

    // dSigma/d(x, q) = (1, psi).
    Vector ds(J + 1);
    ds[0] = 1.0;
    ds.tail(J) = leaf.psi;

    out.value += weight * d.value;
    out.gradient.head(M) += weight * d.dr_dv;
    out.gradient.tail(J + 1) += weight * d.dr_dx * ds;

    out.hessian.topLeftCorner(M, M) += weight * d.d2r_dv2;
    const Vector cross = weight * d.d2r_dvdx;
    out.hessian.block(0, M, M, J + 1) += cross * ds.transpose();
    out.hessian.block(M, 0, J + 1, M) += ds * cross.transpose();
    out.hessian.bottomRightCorner(J + 1, J + 1) += weight * d.d2r_dx2 * ds * ds.transpose();
}

}  // namespace detail

/// F_T at a terminal node: r and its derivatives at (v, Sigma(x, q)).
inline FieldEvaluation terminal_field(const ScenarioTree& tree, const AgentSet& agents, const PrimalPoint& a,
                                      NodeRef leaf) {
    detail::validate_field_point(tree, agents, a);
    const std::size_t k = tree.leaf_index(leaf);
    FieldEvaluation out;
    static_cast<PrimalDerivatives&>(out) = PrimalDerivatives(a.v.size(), a.q.size());
    out.node = leaf;
    out.point = a;
    detail::add_terminal(agents, tree.leaf(k), a, 1.0, out);
    return out;
}

/// F_t at `node`: conditional expectations over the descendant leaves of the
/// terminal value, gradient and Hessian.
inline FieldEvaluation field_at(const ScenarioTree& tree, const AgentSet& agents, const PrimalPoint& a, NodeRef node) {
    detail::validate_field_point(tree, agents, a);
    FieldEvaluation out;
    static_cast<PrimalDerivatives&>(out) = PrimalDerivatives(a.v.size(), a.q.size());
    out.node = node;
    out.point = a;
    for (const auto& [k, p] : tree.descendants(node)) detail::add_terminal(agents, tree.leaf(k), a, p, out);
    return out;
}

/// Pareto allocation pi(a) of the total endowment at a terminal node.
inline Vector pareto_allocation_field(const ScenarioTree& tree, const AgentSet& agents, const PrimalPoint& a,
                                      NodeRef leaf) {
    detail::validate_field_point(tree, agents, a);
    const auto& l = tree.leaf(tree.leaf_index(leaf));
    return solve_allocation(agents, a.v, detail::total_endowment(l, a)).x_hat;
}

/// U_t(a) = E[u_m(pi^m(a)) | F_t], computed from the allocations.
inline Vector expected_utility_field(const ScenarioTree& tree, const AgentSet& agents, const PrimalPoint& a,
                                     NodeRef node) {
    detail::validate_field_point(tree, agents, a);
    const Index M = a.v.size();
    Vector out = Vector::Zero(M);
    for (const auto& [k, p] : tree.descendants(node)) {
        const Vector pi = solve_allocation(agents, a.v, detail::total_endowment(tree.leaf(k), a)).x_hat;
        for (Index m = 0; m < M; ++m) out[m] += p * eval(agents[static_cast<std::size_t>(m)], pi[m], 0);
    }
    return out;
}

/// F_t at a fixed node as a saddle function on A.
class NodeField {
public:
    NodeField(const ScenarioTree& tree, const AgentSet& agents, NodeRef node)
        : tree_(&tree), agents_(&agents), node_(node) {
        tree.validate(node);
    }

    Index num_agents() const { return static_cast<Index>(agents_->size()); }
    Index num_assets() const { return tree_->num_assets(); }
    NodeRef node() const { return node_; }

    PrimalDerivatives operator()(const PrimalPoint& a) const { return field_at(*tree_, *agents_, a, node_); }

    /// Exponential proxy shifted by the certainty equivalent
    /// -T log E[exp(-(Sigma_0 + <q, psi>) / T) | node], T = sum_m t_m(0).
    PrimalPoint saddle_guess(const DualPoint& b) const {
        double T = 0.0;
        for (const auto& u : agents_->agents()) T += risk_tolerance(u, 0.0);
        const auto leaves = tree_->descendants(node_);
        double top = -std::numeric_limits<double>::infinity();
        std::vector<double> exponents;
        exponents.reserve(leaves.size());
        for (const auto& [k, p] : leaves) {
            const auto& leaf = tree_->leaf(k);
            exponents.push_back(std::log(p) - (leaf.sigma0 + leaf.psi.dot(b.q)) / T);
            top = std::max(top, exponents.back());
        }
        double sum = 0.0;
        for (double e : exponents) sum += std::exp(e - top);
        const double shift = -T * (top + std::log(sum));
        return exponential_proxy_guess(*agents_, b, shift);
    }

private:
    const ScenarioTree* tree_;
    const AgentSet* agents_;
    NodeRef node_;
};

struct InverseFieldResult {
    // Collective cash amount X_t(u, q) = G_t(u, 1, q).
    double X = 0.0;
    // Pareto weights normalized to the simplex.
    Vector V;
    SaddlePair pair;
};

/// Inverts U_t(V, X, q) = u at y = 1 through the saddle conjugate of F_t.
inline InverseFieldResult invert_field(const ScenarioTree& tree, const AgentSet& agents, const Vector& u,
                                       const Vector& q, NodeRef node) {
    const NodeField f(tree, agents, node);
    DualPoint b{u, 1.0, q};
    InverseFieldResult out;
    out.pair = conjugate_point_from_dual(f, b);
    out.X = out.pair.g_value;
    out.V = out.pair.primal.v / out.pair.primal.v.sum();
    return out;
}

/// Ingredients of the risk-tolerance representation of A(F_t) at a point a.
struct LemmaNineteenData {
    // Per leaf: d2F_T/dx2 / d2F_0/dx2, the density of the reweighted measure.
    std::vector<double> density;
    // Per level and node: -dF_t/dx / d2F_t/dx2, the aggregate risk tolerance.
    std::vector<std::vector<double>> R_process;
    // Per leaf (rows) and agent (columns): t_m(pi^m(a)).
    Matrix tau;
};

inline LemmaNineteenData lemma19_data(const ScenarioTree& tree, const AgentSet& agents, const PrimalPoint& a) {
    detail::validate_field_point(tree, agents, a);
    const Index M = a.v.size();
    const std::size_t L = tree.num_leaves();
    LemmaNineteenData out;
    out.tau.resize(static_cast<Index>(L), M);
    std::vector<double> r_x(L), r_xx(L);
    for (std::size_t k = 0; k < L; ++k) {
        const auto d = r_hessian(agents, a.v, detail::total_endowment(tree.leaf(k), a));
        out.tau.row(static_cast<Index>(k)) = d.allocation.tolerances.transpose();
        r_x[k] = d.dr_dx;
        r_xx[k] = d.d2r_dx2;
    }
    double root_xx = 0.0;
    for (std::size_t k = 0; k < L; ++k) root_xx += tree.leaf(k).probability * r_xx[k];
    out.density.resize(L);
    for (std::size_t k = 0; k < L; ++k) out.density[k] = r_xx[k] / root_xx;

    out.R_process.resize(static_cast<std::size_t>(tree.levels() + 1));
    for (int level = 0; level <= tree.levels(); ++level) {
        auto& row = out.R_process[static_cast<std::size_t>(level)];
        row.resize(tree.num_nodes(level));
        for (std::size_t i = 0; i < row.size(); ++i) {
            double fx = 0.0, fxx = 0.0;
            for (const auto& [k, p] : tree.descendants({level, static_cast<int>(i)})) {
                fx += p * r_x[k];
                fxx += p * r_xx[k];
            }
            row[i] = -fx / fxx;
        }
    }
    return out;
}

/// Conditional expectation under the reweighted measure given `node`.
inline Vector reweighted_expectation(const ScenarioTree& tree, const LemmaNineteenData& data, NodeRef node,
                                     const Matrix& per_leaf) {
    Vector sum = Vector::Zero(per_leaf.cols());
    double mass = 0.0;
    for (const auto& [k, p] : tree.descendants(node)) {
        const double w = p * data.density[k];
        sum += w * per_leaf.row(static_cast<Index>(k)).transpose();
        mass += w;
    }
    return sum / mass;
}

struct Lemma19Result {
    // (1/R_t) (E_R[tau^l (delta_lm sum_k tau^k - tau^m)] + E_R[tau^l] E_R[tau^m]).
    Matrix risk_tolerance_form;
    // A(F_t) assembled directly from the second derivatives of F_t.
    Matrix direct_form;
    double max_abs_difference = 0.0;
    LemmaNineteenData data;
};

inline Lemma19Result lemma19_matrix(const ScenarioTree& tree, const AgentSet& agents, const PrimalPoint& a,
                                    NodeRef node) {
    const Index M = a.v.size();
    Lemma19Result out;
    out.data = lemma19_data(tree, agents, a);
    const auto& tau = out.data.tau;
    const Index L = tau.rows();

    // Per-leaf products tau^l (delta_lm sum_k tau^k - tau^m), flattened.
    Matrix products(L, M * M);
    for (Index k = 0; k < L; ++k) {
        const double total = tau.row(k).sum();
        for (Index l = 0; l < M; ++l) {
            for (Index m = 0; m < M; ++m) {
                products(k, l * M + m) = tau(k, l) * ((l == m ? total : 0.0) - tau(k, m));
            }
        }
    }
    const Vector mean_products = reweighted_expectation(tree, out.data, node, products);
    const Vector mean_tau = reweighted_expectation(tree, out.data, node, tau);
    const double R = out.data.R_process[static_cast<std::size_t>(node.level)][static_cast<std::size_t>(node.index)];

    out.risk_tolerance_form.resize(M, M);
    for (Index l = 0; l < M; ++l) {
        for (Index m = 0; m < M; ++m) {
            out.risk_tolerance_form(l, m) = (mean_products[l * M + m] + mean_tau[l] * mean_tau[m]) / R;
        }
    }
    out.direct_form = a_matrix(field_at(tree, agents, a, node), a.v);
    out.max_abs_difference = (out.risk_tolerance_form - out.direct_form).cwiseAbs().maxCoeff();
    return out;
}

struct SpectralBound {
    bool within = false;
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
};

/// Whether every eigenvalue of the symmetric matrix lies in [1/c, c], up to
/// an absolute slack.
inline SpectralBound spectral_bound_check(const Matrix& matrix, double c, double slack = 1e-9) {
    if (matrix.rows() != matrix.cols() || matrix.rows() == 0) {
        throw DomainError("spectral bound: matrix must be square and nonempty");
    }
    if (!(c > 0.0)) throw DomainError("spectral bound: c must be positive");
    const double scale = std::max(1.0, matrix.cwiseAbs().maxCoeff());
    if ((matrix - matrix.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw DomainError("spectral bound: matrix is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> solver(matrix, Eigen::EigenvaluesOnly);
    SpectralBound out;
    out.min_eigenvalue = solver.eigenvalues().minCoeff();
    out.max_eigenvalue = solver.eigenvalues().maxCoeff();
    out.within = out.min_eigenvalue >= 1.0 / c - slack && out.max_eigenvalue <= c + slack;
    return out;
}

}  // namespace saddlefield
