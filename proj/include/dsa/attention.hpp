#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "dsa/cloud.hpp"
#include "dsa/matrix.hpp"
#include "dsa/sinkhorn.hpp"

namespace dsa {

/// Query/key/value matrices of a single attention head.
/// W_Q and W_K map points to an m-dimensional score space; W_V stays in the
/// embedding space.
struct AttentionParams {
    DenseMatrix w_q; // m x d
    DenseMatrix w_k; // m x d
    DenseMatrix w_v; // d x d

    AttentionParams() = default;
    AttentionParams(DenseMatrix q, DenseMatrix k, DenseMatrix v)
        : w_q(std::move(q)), w_k(std::move(k)), w_v(std::move(v)) {
        if (w_q.rows() != w_k.rows() || w_q.cols() != w_k.cols())
            throw std::invalid_argument("AttentionParams: W_Q and W_K must share shape");
        if (w_v.rows() != w_v.cols() || w_v.rows() != w_q.cols())
            throw std::invalid_argument("AttentionParams: W_V must be d x d");
    }

    std::size_t score_dim() const { return w_q.rows(); }
    std::size_t embed_dim() const { return w_q.cols(); }
};

/// Which normalization turns the cost into an attention kernel.
/// Sinkhorn iteration counts are odd so the kernel rows, like SoftMax rows,
/// always sum to 1.
struct NormalizationSpec {
    enum class Kind { softmax, sinkhorn };

    Kind kind = Kind::softmax;
    int iterations = 1;

    static NormalizationSpec softmax_kind() { return {Kind::softmax, 1}; }
    static NormalizationSpec sinkhorn_kind(int iterations = 3) {
        if (iterations < 1 || iterations % 2 == 0)
            throw std::invalid_argument("NormalizationSpec: sinkhorn iterations must be odd and >= 1");
        return {Kind::sinkhorn, iterations};
    }
};

/// C[i,j] = (W_Q x_i)^T (W_K y_j). The one-argument form is self-attention.
inline CostMatrix dot_cost(const AttentionParams& p, const ParticleCloud& x,
                           const ParticleCloud& y) {
    if (x.dim() != p.embed_dim() || y.dim() != p.embed_dim())
        throw std::invalid_argument("dot_cost: cloud dimension does not match parameters");
    const DenseMatrix q = matmul(x.positions, p.w_q, false, true); // n x m
    const DenseMatrix k = matmul(y.positions, p.w_k, false, true); // n' x m
    return CostMatrix(matmul(q, k, false, true));
}

inline CostMatrix dot_cost(const AttentionParams& p, const ParticleCloud& x) {
    return dot_cost(p, x, x);
}

/// L2 variant C~[i,j] = -0.5 ||W_Q x_i - W_K x_j||^2. Differs from the dot
/// cost only by per-row and per-column terms, so Sinkhorn's output kernel is
/// unchanged.
inline CostMatrix l2_cost(const AttentionParams& p, const ParticleCloud& x,
                          const ParticleCloud& y) {
    if (x.dim() != p.embed_dim() || y.dim() != p.embed_dim())
        throw std::invalid_argument("l2_cost: cloud dimension does not match parameters");
    const DenseMatrix q = matmul(x.positions, p.w_q, false, true);
    const DenseMatrix k = matmul(y.positions, p.w_k, false, true);
    DenseMatrix c(q.rows(), k.rows());
    for (std::size_t i = 0; i < q.rows(); ++i)
        for (std::size_t j = 0; j < k.rows(); ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < q.cols(); ++l) {
                const double dlt = q(i, l) - k(j, l);
                s += dlt * dlt;
            }
            c(i, j) = -0.5 * s;
        }
    return CostMatrix(std::move(c));
}

inline CostMatrix l2_cost(const AttentionParams& p, const ParticleCloud& x) {
    return l2_cost(p, x, x);
}

inline DenseMatrix attention_kernel(const CostMatrix& cost, const NormalizationSpec& norm) {
    if (norm.kind == NormalizationSpec::Kind::softmax) return softmax(cost);
    return sinkhorn(cost, SinkhornOptions::fixed(norm.iterations)).kernel;
}

/// Residual attention update x_i <- x_i + sum_j K[i,j] W_V x_j.
/// The input cloud is left untouched.
inline ParticleCloud attention_forward(const ParticleCloud& x, const AttentionParams& p,
                                       const NormalizationSpec& norm) {
    const DenseMatrix kernel = attention_kernel(dot_cost(p, x), norm);
    const DenseMatrix values = matmul(x.positions, p.w_v, false, true); // n x d
    ParticleCloud out = x;
    out.positions += matmul(kernel, values);
    return out;
}

/// Column-sum summary of an attention kernel: exact sums plus a fixed
/// 60-bin histogram over [0, 3]. Sums outside the range land in the edge
/// bins.
struct ColumnSumStats {
    static constexpr std::size_t kBins = 60;
    static constexpr double kLo = 0.0;
    static constexpr double kHi = 3.0;

    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    std::vector<double> sums;
    std::array<std::size_t, kBins> histogram{};

    /// Largest deviation of any column sum from 1.
    double spread() const {
        double s = 0.0;
        for (double v : sums) s = std::max(s, std::abs(v - 1.0));
        return s;
    }
};

inline ColumnSumStats column_sum_stats(const DenseMatrix& k) {
    if (k.rows() == 0 || k.cols() == 0)
        throw std::invalid_argument("column_sum_stats: empty kernel");
    ColumnSumStats st;
    st.sums.assign(k.cols(), 0.0);
    for (std::size_t i = 0; i < k.rows(); ++i)
        for (std::size_t j = 0; j < k.cols(); ++j) st.sums[j] += k(i, j);

    st.min = st.sums[0];
    st.max = st.sums[0];
    double total = 0.0;
    const double bin_width = (ColumnSumStats::kHi - ColumnSumStats::kLo) / ColumnSumStats::kBins;
    for (double s : st.sums) {
        st.min = std::min(st.min, s);
        st.max = std::max(st.max, s);
        total += s;
        auto bin = static_cast<long>(std::floor((s - ColumnSumStats::kLo) / bin_width));
        bin = std::clamp(bin, 0L, static_cast<long>(ColumnSumStats::kBins) - 1);
        ++st.histogram[static_cast<std::size_t>(bin)];
    }
    st.mean = total / static_cast<double>(st.sums.size());
    return st;
}

} // namespace dsa
