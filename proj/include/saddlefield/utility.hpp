#pragma once

// Utility functions on the real line: strictly concave, strictly increasing,
// vanishing at +infinity, with absolute risk aversion bounded in [1/c, c].
//
// Every supported utility is a finite positive mixture of normalized
// exponentials
//
//     u(x) = -sum_i (w_i / a_i) exp(-a_i x),
//
// so u'(x) = sum_i w_i exp(-a_i x) and the risk aversion -u''/u' is a convex
// combination of the rates a_i.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "saddlefield/errors.hpp"

namespace saddlefield {

class UtilitySpec {
public:
    enum class Kind { exponential, mixture };

    struct Term {
        double weight;
        double rate;
    };

    static UtilitySpec exponential(double rate) {
        if (!(rate > 0.0) || !std::isfinite(rate)) {
            throw DomainError("exponential utility: rate must be positive and finite");
        }
        return UtilitySpec(Kind::exponential, {{1.0, rate}});
    }

    static UtilitySpec mixture(const std::vector<double>& weights, const std::vector<double>& rates) {
        if (weights.empty() || weights.size() != rates.size()) {
            throw DomainError("mixture utility: weights and rates must be nonempty and of equal length");
        }
        std::vector<Term> terms;
        terms.reserve(weights.size());
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (!(weights[i] > 0.0) || !std::isfinite(weights[i]) || !(rates[i] > 0.0) ||
                !std::isfinite(rates[i])) {
                std::ostringstream msg;
                msg << "mixture utility: term " << i << " needs positive finite weight and rate";
                throw DomainError(msg.str());
            }
            terms.push_back({weights[i], rates[i]});
        }
        return UtilitySpec(Kind::mixture, std::move(terms));
    }

    Kind kind() const { return kind_; }
    const std::vector<Term>& terms() const { return terms_; }

    double min_rate() const { return min_rate_; }
    double max_rate() const { return max_rate_; }

    // Constant c with 1/c <= -u''/u' <= c and 1/c <= -u'/u <= c.
    double c_bound() const { return std::max(max_rate_, 1.0 / min_rate_); }

    // Arguments below this bound are rejected: exp(-rate * x) would approach
    // the double overflow threshold.
    double lower_limit() const { return -700.0 / max_rate_; }

    bool operator==(const UtilitySpec& other) const {
        if (kind_ != other.kind_ || terms_.size() != other.terms_.size()) return false;
        for (std::size_t i = 0; i < terms_.size(); ++i) {
            if (terms_[i].weight != other.terms_[i].weight || terms_[i].rate != other.terms_[i].rate) {
                return false;
            }
        }
        return true;
    }

private:
    UtilitySpec(Kind kind, std::vector<Term> terms) : kind_(kind), terms_(std::move(terms)) {
        min_rate_ = terms_.front().rate;
        max_rate_ = terms_.front().rate;
        for (const auto& t : terms_) {
            min_rate_ = std::min(min_rate_, t.rate);
            max_rate_ = std::max(max_rate_, t.rate);
        }
    }

    Kind kind_;
    std::vector<Term> terms_;
    double min_rate_ = 1.0;
    double max_rate_ = 1.0;
};

namespace detail {

// Scaled moments sum_i w_i a_i^k exp(-a_i x - shift) for k = -1, 0, 1, with
// the shift chosen so the largest term is exp(0).
struct ExpMoments {
    double shift;
    double m_minus1;
    double m0;
    double m1;
};

inline ExpMoments exp_moments(const UtilitySpec& u, double x) {
    double shift = -std::numeric_limits<double>::infinity();
    for (const auto& t : u.terms()) {
        shift = std::max(shift, std::log(t.weight) - t.rate * x);
    }
    ExpMoments m{shift, 0.0, 0.0, 0.0};
    for (const auto& t : u.terms()) {
        const double e = std::exp(std::log(t.weight) - t.rate * x - shift);
        m.m_minus1 += e / t.rate;
        m.m0 += e;
        m.m1 += e * t.rate;
    }
    return m;
}

inline void check_range(const UtilitySpec& u, double x) {
    if (!std::isfinite(x)) {
        throw DomainError("utility evaluation: argument must be finite");
    }
    if (x < u.lower_limit()) {
        std::ostringstream msg;
        msg << "utility evaluation: x = " << x << " is below the representable limit " << u.lower_limit();
        throw RangeError(msg.str());
    }
}

}  // namespace detail

/// Value (order 0), marginal utility (order 1) or second derivative (order 2).
inline double eval(const UtilitySpec& u, double x, int order) {
    if (order < 0 || order > 2) {
        throw DomainError("utility evaluation: order must be 0, 1 or 2");
    }
    detail::check_range(u, x);
    const auto m = detail::exp_moments(u, x);
    const double scale = std::exp(m.shift);
    switch (order) {
        case 0: return -m.m_minus1 * scale;
        case 1: return m.m0 * scale;
        default: return -m.m1 * scale;
    }
}

/// Absolute risk tolerance -u'(x)/u''(x).
inline double risk_tolerance(const UtilitySpec& u, double x) {
    if (!std::isfinite(x)) {
        throw DomainError("risk tolerance: argument must be finite");
    }
    if (u.kind() == UtilitySpec::Kind::exponential) {
        return 1.0 / u.terms().front().rate;
    }
    const auto m = detail::exp_moments(u, x);
    return m.m0 / m.m1;
}

inline double risk_aversion(const UtilitySpec& u, double x) { return 1.0 / risk_tolerance(u, x); }

namespace detail {

// log u'(x), finite for every finite x.
inline double log_marginal(const UtilitySpec& u, double x) {
    const auto m = exp_moments(u, x);
    return m.shift + std::log(m.m0);
}

// Solves log u'(x) = log_y.
inline double inverse_marginal_log(const UtilitySpec& u, double log_y) {
    if (!std::isfinite(log_y)) {
        throw DomainError("inverse marginal utility: y must be positive and finite");
    }
    if (u.terms().size() == 1) {
        const auto& t = u.terms().front();
        return (std::log(t.weight) - log_y) / t.rate;
    }

    // phi(x) = log u'(x) - log y is convex and strictly decreasing with slope
    // in [-max_rate, -min_rate].
    auto phi = [&](double x) {
        const auto m = exp_moments(u, x);
        return std::make_pair(m.shift + std::log(m.m0) - log_y, -m.m1 / m.m0);
    };

    double total_weight = 0.0;
    for (const auto& t : u.terms()) total_weight += t.weight;
    double x = (std::log(total_weight) - log_y) / u.max_rate();

    double lo = x, hi = x;
    double step = 1.0;
    while (phi(lo).first < 0.0) {
        lo -= step;
        step *= 2.0;
    }
    step = 1.0;
    while (phi(hi).first > 0.0) {
        hi += step;
        step *= 2.0;
    }
    x = 0.5 * (lo + hi);

    for (int iter = 0; iter < 200; ++iter) {
        const auto [value, slope] = phi(x);
        if (value == 0.0) return x;
        if (value > 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        double next = x - value / slope;
        if (!(next > lo && next < hi)) {
            next = 0.5 * (lo + hi);
        }
        if (std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) {
            return next;
        }
        x = next;
    }
    throw SolverError("inverse marginal utility: no convergence after 200 iterations");
}

}  // namespace detail

/// Solves u'(x) = y; closed form for a single exponential, safeguarded
/// Newton on log u' otherwise.
inline double inverse_marginal(const UtilitySpec& u, double y) {
    if (!(y > 0.0) || !std::isfinite(y)) {
        throw DomainError("inverse marginal utility: y must be positive and finite");
    }
    return detail::inverse_marginal_log(u, std::log(y));
}

/// Ordered collection of agents' utilities with the common curvature bound.
class AgentSet {
public:
    AgentSet() = default;

    explicit AgentSet(std::vector<UtilitySpec> agents) : agents_(std::move(agents)) {
        if (agents_.empty()) {
            throw DomainError("agent set must contain at least one utility");
        }
        for (const auto& a : agents_) c_global_ = std::max(c_global_, a.c_bound());
    }

    std::size_t size() const { return agents_.size(); }
    const UtilitySpec& operator[](std::size_t m) const { return agents_[m]; }
    const std::vector<UtilitySpec>& agents() const { return agents_; }

    // Largest c_bound over the agents; always >= 1.
    double c() const { return c_global_; }

    bool all_exponential() const {
        return std::all_of(agents_.begin(), agents_.end(),
                           [](const UtilitySpec& u) { return u.kind() == UtilitySpec::Kind::exponential; });
    }

    bool operator==(const AgentSet& other) const { return agents_ == other.agents_; }

private:
    std::vector<UtilitySpec> agents_;
    double c_global_ = 1.0;
};

}  // namespace saddlefield
