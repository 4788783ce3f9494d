#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "dsa/matrix.hpp"

namespace dsa {

/// n points in R^d, the discrete measure mu = (1/n) sum_i delta_{x_i}.
/// Positions are the rows of an n x d matrix.
struct ParticleCloud {
    DenseMatrix positions; // n x d

    ParticleCloud() = default;
    explicit ParticleCloud(DenseMatrix x) : positions(std::move(x)) {}
    ParticleCloud(std::size_t n, std::size_t d) : positions(n, d) {}

    std::size_t size() const { return positions.rows(); }
    std::size_t dim() const { return positions.cols(); }

    std::span<double> point(std::size_t i) { return positions.row(i); }
    std::span<const double> point(std::size_t i) const { return positions.row(i); }

    std::vector<double> mean() const {
        std::vector<double> m(dim(), 0.0);
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = 0; j < dim(); ++j) m[j] += positions(i, j);
        for (double& v : m) v /= static_cast<double>(size());
        return m;
    }

    /// Per-coordinate empirical variance summed over coordinates
    /// (for d = 1 this is the plain sample variance, 1/n convention).
    double variance() const {
        const auto m = mean();
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t j = 0; j < dim(); ++j) {
                const double c = positions(i, j) - m[j];
                s += c * c;
            }
        return s / static_cast<double>(size());
    }
};

inline void require_same_points(const ParticleCloud& a, const ParticleCloud& b, const char* who) {
    if (a.size() != b.size() || a.dim() != b.dim())
        throw std::invalid_argument(std::string(who) + ": clouds differ in shape");
}

} // namespace dsa
