#pragma once

// Independent reference computations for the unit and acceptance tests:
// closed forms for pure-exponential agents, plain central differences and a
// small deterministic sampler.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct ExpSharing {
    double lambda;
    Vec x_hat;
    double value;
    double T;
};

// Sup-convolution of -e^{-a_m x}/a_m: lambda = exp((sum t ln v - x)/T),
// x_hat^m = t_m ln(v^m / lambda), r = -T lambda.
inline ExpSharing exp_sharing(const std::vector<double>& rates, const Vec& v, double x) {
    const auto M = static_cast<Eigen::Index>(rates.size());
    double T = 0.0, s = 0.0;
    for (Eigen::Index m = 0; m < M; ++m) {
        const double t = 1.0 / rates[static_cast<std::size_t>(m)];
        T += t;
        s += t * std::log(v[m]);
    }
    ExpSharing out;
    out.T = T;
    out.lambda = std::exp((s - x) / T);
    out.x_hat.resize(M);
    for (Eigen::Index m = 0; m < M; ++m) {
        out.x_hat[m] = (1.0 / rates[static_cast<std::size_t>(m)]) * (std::log(v[m]) - std::log(out.lambda));
    }
    out.value = -T * out.lambda;
    return out;
}

// r = -T e^{-x/T} prod (v^m)^{t_m/T}, written as a product.
inline double exp_r_product(const std::vector<double>& rates, const Vec& v, double x) {
    double T = 0.0;
    for (double a : rates) T += 1.0 / a;
    double prod = 1.0;
    for (std::size_t m = 0; m < rates.size(); ++m) prod *= std::pow(v[static_cast<Eigen::Index>(m)], (1.0 / rates[m]) / T);
    return -T * std::exp(-x / T) * prod;
}

// g(u, 1) = sum t_m ln(t_m / (-u^m)).
inline double exp_g(const std::vector<double>& rates, const Vec& u) {
    double g = 0.0;
    for (std::size_t m = 0; m < rates.size(); ++m) {
        const double t = 1.0 / rates[m];
        g += t * std::log(t / -u[static_cast<Eigen::Index>(m)]);
    }
    return g;
}

// u(x) = -sum (w_i / a_i) e^{-a_i x}, evaluated from its own coefficients.
struct Mixture {
    std::vector<double> w;
    std::vector<double> a;

    double value(double x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) s -= w[i] / a[i] * std::exp(-a[i] * x);
        return s;
    }
    double d1(double x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * std::exp(-a[i] * x);
        return s;
    }
    double d2(double x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) s -= w[i] * a[i] * std::exp(-a[i] * x);
        return s;
    }
    double tolerance(double x) const { return -d1(x) / d2(x); }

    // The cash amount with utility `target` < 0, by bisection.
    double inverse(double target) const {
        double lo = -1.0, hi = 1.0;
        while (value(lo) > target) lo *= 2.0;
        while (value(hi) < target) hi *= 2.0;
        for (int k = 0; k < 2000; ++k) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            (value(mid) < target ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }
};

inline Vec central_gradient(const std::function<double(const Vec&)>& f, const Vec& p, double step) {
    Vec g(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double h = step * std::max(1.0, std::abs(p[i]));
        Vec up = p, down = p;
        up[i] += h;
        down[i] -= h;
        g[i] = (f(up) - f(down)) / (2.0 * h);
    }
    return g;
}

// Column i holds the central difference of G along coordinate i.
inline Mat central_jacobian(const std::function<Vec(const Vec&)>& G, const Vec& p, double step) {
    const Vec g0 = G(p);
    Mat jac(g0.size(), p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double h = step * std::max(1.0, std::abs(p[i]));
        Vec up = p, down = p;
        up[i] += h;
        down[i] -= h;
        jac.col(i) = (G(up) - G(down)) / (2.0 * h);
    }
    return jac;
}

inline double rel_err(double got, double want) {
    const double scale = std::abs(want);
    return scale < 1e-8 ? std::abs(got - want) : std::abs(got - want) / scale;
}

class Sampler {
public:
    explicit Sampler(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        const double u = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

    Vec log_uniform(Eigen::Index n, double lo, double hi) {
        Vec out(n);
        for (Eigen::Index i = 0; i < n; ++i) out[i] = std::exp(uniform(std::log(lo), std::log(hi)));
        return out;
    }

    Vec uniform_vec(Eigen::Index n, double lo, double hi) {
        Vec out(n);
        for (Eigen::Index i = 0; i < n; ++i) out[i] = uniform(lo, hi);
        return out;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace oracle
