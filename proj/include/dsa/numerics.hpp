#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "dsa/cloud.hpp"
#include "dsa/matrix.hpp"
#include "dsa/rng.hpp"

namespace dsa {

/// log sum_j exp(v_j), max-shifted so any finite input stays finite.
inline double logsumexp(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("logsumexp: empty input");
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// result[i] = log sum_j exp(M[i,j])
inline std::vector<double> logsumexp_rows(const DenseMatrix& m) {
    if (m.rows() == 0 || m.cols() == 0)
        throw std::invalid_argument("logsumexp_rows: empty matrix");
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = logsumexp(m.row(i));
    return out;
}

/// result[j] = log sum_i exp(M[i,j])
inline std::vector<double> logsumexp_cols(const DenseMatrix& m) {
    if (m.rows() == 0 || m.cols() == 0)
        throw std::invalid_argument("logsumexp_cols: empty matrix");
    const std::size_t n = m.rows(), c = m.cols();
    std::vector<double> mx(c, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = m.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) mx[j] = std::max(mx[j], r[j]);
    }
    std::vector<double> s(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* r = m.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) s[j] += std::exp(r[j] - mx[j]);
    }
    std::vector<double> out(c);
    for (std::size_t j = 0; j < c; ++j) out[j] = mx[j] + std::log(s[j]);
    return out;
}

/// Streaming log-sum-exp: absorbs one term at a time with a running
/// max shift, so column reductions can be done in a single pass over rows.
struct OnlineLse {
    double max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;

    void add(double t) {
        if (t <= max) {
            sum += std::exp(t - max);
        } else {
            sum = sum * std::exp(max - t) + 1.0;
            max = t;
        }
    }

    double value() const { return max + std::log(sum); }
};

/// n i.i.d. draws from the isotropic Gaussian N(mean, stddev^2 I).
inline ParticleCloud gaussian_sample(SeededRng& rng, std::size_t n, std::size_t d,
                                     std::span<const double> mean, double stddev) {
    if (n == 0) throw std::invalid_argument("gaussian_sample: n must be >= 1");
    if (!(stddev > 0.0)) throw std::invalid_argument("gaussian_sample: stddev must be > 0");
    if (mean.size() != d) throw std::invalid_argument("gaussian_sample: mean has wrong dimension");
    ParticleCloud cloud(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            cloud.positions(i, j) = mean[j] + stddev * rng.normal();
    return cloud;
}

inline ParticleCloud gaussian_sample(SeededRng& rng, std::size_t n, std::size_t d,
                                     double mean, double stddev) {
    std::vector<double> m(d, mean);
    return gaussian_sample(rng, n, d, m, stddev);
}

/// Central finite differences (f(x+h e_k) - f(x-h e_k)) / 2h per coordinate.
inline std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> point, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff_gradient: step must be > 0");
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double saved = x[k];
        x[k] = saved + step;
        const double fp = f(x);
        x[k] = saved - step;
        const double fm = f(x);
        x[k] = saved;
        g[k] = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// Gauss-Jordan inverse with partial pivoting; for the small (d <= 3)
/// parameter matrices used here.
inline DenseMatrix invert(const DenseMatrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("invert: matrix not square");
    const std::size_t n = a.rows();
    DenseMatrix w = a;
    DenseMatrix inv = DenseMatrix::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(w(r, col)) > std::abs(w(piv, col))) piv = r;
        if (w(piv, col) == 0.0) throw std::invalid_argument("invert: singular matrix");
        if (piv != col)
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(w(piv, j), w(col, j));
                std::swap(inv(piv, j), inv(col, j));
            }
        const double p = w(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            w(col, j) /= p;
            inv(col, j) /= p;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double factor = w(r, col);
            if (factor == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                w(r, j) -= factor * w(col, j);
                inv(r, j) -= factor * inv(col, j);
            }
        }
    }
    return inv;
}

/// Frobenius condition estimate ||A||_F ||A^-1||_F (upper bounds cond_2).
inline double condition_estimate(const DenseMatrix& a) {
    return frobenius_norm(a) * frobenius_norm(invert(a));
}

} // namespace dsa
