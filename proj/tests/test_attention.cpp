#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "dsa/attention.hpp"
#include "test_support.hpp"

using namespace dsa;

namespace {

AttentionParams random_params(SeededRng& rng, std::size_t m, std::size_t d, double scale = 1.0) {
    return AttentionParams(testing::random_matrix(rng, m, d, scale),
                           testing::random_matrix(rng, m, d, scale),
                           testing::random_matrix(rng, d, d, scale));
}

ParticleCloud permuted(const ParticleCloud& x, const std::vector<std::size_t>& perm) {
    ParticleCloud out(x.size(), x.dim());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.dim(); ++j) out.positions(i, j) = x.positions(perm[i], j);
    return out;
}

} // namespace

TEST_CASE("dot_cost identity parameters on basis vectors") {
    AttentionParams p(DenseMatrix::identity(2), DenseMatrix::identity(2), DenseMatrix::identity(2));
    ParticleCloud x(DenseMatrix{{1.0, 0.0}, {0.0, 1.0}});
    const auto c = dot_cost(p, x);
    CHECK(max_abs_diff(c.c, DenseMatrix::identity(2)) < 1e-15);
}

TEST_CASE("dot_cost of the zero cloud vanishes") {
    SeededRng rng(2);
    auto p = random_params(rng, 3, 2);
    ParticleCloud x(DenseMatrix(4, 2, 0.0));
    const auto c = dot_cost(p, x);
    for (double v : c.c.storage()) CHECK(v == 0.0);
}

TEST_CASE("dot_cost matches an explicit triple loop") {
    SeededRng rng(3);
    auto p = random_params(rng, 4, 3);
    auto x = testing::random_cloud(rng, 3, 3);
    const auto c = dot_cost(p, x);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double want = 0.0;
            for (std::size_t a = 0; a < 4; ++a) {
                double qi = 0.0, kj = 0.0;
                for (std::size_t b = 0; b < 3; ++b) {
                    qi += p.w_q(a, b) * x.positions(i, b);
                    kj += p.w_k(a, b) * x.positions(j, b);
                }
                want += qi * kj;
            }
            CHECK(c.c(i, j) == Catch::Approx(want).margin(1e-13));
        }
}

TEST_CASE("dot_cost rejects mismatched dimensions") {
    SeededRng rng(4);
    auto p = random_params(rng, 3, 2);
    auto x = testing::random_cloud(rng, 5, 3);
    CHECK_THROWS_AS(dot_cost(p, x), std::invalid_argument);
}

TEST_CASE("l2_cost diagonal vanishes for shared projections") {
    SeededRng rng(5);
    auto w = testing::random_matrix(rng, 2, 2);
    AttentionParams p(w, w, DenseMatrix::identity(2));
    auto x = testing::random_cloud(rng, 4, 2);
    const auto c = l2_cost(p, x);
    for (std::size_t i = 0; i < 4; ++i) CHECK(c.c(i, i) == 0.0);
}

TEST_CASE("l2_cost decomposes as dot cost plus per-point terms") {
    SeededRng rng(6);
    auto p = random_params(rng, 3, 2);
    auto x = testing::random_cloud(rng, 5, 2);
    const auto dot = dot_cost(p, x);
    const auto l2 = l2_cost(p, x);
    const auto q = matmul(x.positions, p.w_q, false, true);
    const auto k = matmul(x.positions, p.w_k, false, true);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double qi2 = 0.0, kj2 = 0.0;
            for (std::size_t a = 0; a < 3; ++a) {
                qi2 += q(i, a) * q(i, a);
                kj2 += k(j, a) * k(j, a);
            }
            CHECK(l2.c(i, j) == Catch::Approx(dot.c(i, j) - 0.5 * qi2 - 0.5 * kj2).margin(1e-12));
        }
}

TEST_CASE("sinkhorn kernels agree for dot and l2 costs") {
    SeededRng rng(7);
    auto p = random_params(rng, 2, 2);
    auto x = testing::random_cloud(rng, 6, 2);
    const auto ka = sinkhorn(dot_cost(p, x), SinkhornOptions::with_tolerance(1e-12)).kernel;
    const auto kb = sinkhorn(l2_cost(p, x), SinkhornOptions::with_tolerance(1e-12)).kernel;
    CHECK(max_abs_diff(ka, kb) < 1e-9);
}

TEST_CASE("attention_forward with zero values is the identity") {
    SeededRng rng(8);
    AttentionParams p(testing::random_matrix(rng, 2, 2), testing::random_matrix(rng, 2, 2),
                      DenseMatrix(2, 2, 0.0));
    auto x = testing::random_cloud(rng, 5, 2);
    for (auto norm : {NormalizationSpec::softmax_kind(), NormalizationSpec::sinkhorn_kind(3)}) {
        const auto out = attention_forward(x, p, norm);
        CHECK(out.positions.storage() == x.positions.storage());
    }
}

TEST_CASE("attention_forward single token") {
    SeededRng rng(9);
    auto p = random_params(rng, 2, 2);
    auto x = testing::random_cloud(rng, 1, 2);
    const auto soft = attention_forward(x, p, NormalizationSpec::softmax_kind());
    const auto sink = attention_forward(x, p, NormalizationSpec::sinkhorn_kind(3));
    for (std::size_t j = 0; j < 2; ++j) {
        const double want = x.positions(0, j) +
                            p.w_v(j, 0) * x.positions(0, 0) + p.w_v(j, 1) * x.positions(0, 1);
        CHECK(soft.positions(0, j) == Catch::Approx(want).margin(1e-14));
        CHECK(sink.positions(0, j) == Catch::Approx(want).margin(1e-14));
    }
}

TEST_CASE("one sinkhorn iteration reproduces the softmax forward") {
    SeededRng rng(10);
    auto p = random_params(rng, 3, 2);
    auto x = testing::random_cloud(rng, 6, 2);
    const auto soft = attention_forward(x, p, NormalizationSpec::softmax_kind());
    const auto sink1 = attention_forward(x, p, NormalizationSpec::sinkhorn_kind(1));
    CHECK(max_abs_diff(soft.positions, sink1.positions) < 1e-14);
}

TEST_CASE("attention_forward is permutation equivariant") {
    SeededRng rng(11);
    auto p = random_params(rng, 2, 2);
    auto x = testing::random_cloud(rng, 7, 2);
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = 6; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

    for (auto norm : {NormalizationSpec::softmax_kind(), NormalizationSpec::sinkhorn_kind(5)}) {
        const auto direct = permuted(attention_forward(x, p, norm), perm);
        const auto shuffled = attention_forward(permuted(x, perm), p, norm);
        CHECK(max_abs_diff(direct.positions, shuffled.positions) < 1e-12);
    }
}

TEST_CASE("sinkhorn forward ignores separable cost modifications") {
    SeededRng rng(12);
    auto p = random_params(rng, 2, 2);
    auto x = testing::random_cloud(rng, 6, 2);
    const auto values = matmul(x.positions, p.w_v, false, true);
    const auto ka = sinkhorn(dot_cost(p, x), SinkhornOptions::with_tolerance(1e-12)).kernel;
    const auto kb = sinkhorn(l2_cost(p, x), SinkhornOptions::with_tolerance(1e-12)).kernel;
    const auto ya = matmul(ka, values);
    const auto yb = matmul(kb, values);
    CHECK(max_abs_diff(ya, yb) < 1e-9);
}

TEST_CASE("doubly stochastic mass balance of the residual term") {
    SeededRng rng(13);
    auto p = random_params(rng, 2, 2);
    auto x = testing::random_cloud(rng, 8, 2);
    const auto k = sinkhorn(dot_cost(p, x), SinkhornOptions::with_tolerance(1e-12)).kernel;
    const auto residual = matmul(k, matmul(x.positions, p.w_v, false, true));

    const auto mean = x.mean();
    for (std::size_t jdim = 0; jdim < 2; ++jdim) {
        double avg = 0.0;
        for (std::size_t i = 0; i < 8; ++i) avg += residual(i, jdim);
        avg /= 8.0;
        double want = 0.0;
        for (std::size_t l = 0; l < 2; ++l) want += p.w_v(jdim, l) * mean[l];
        CHECK(avg == Catch::Approx(want).margin(1e-9));
    }
}

TEST_CASE("NormalizationSpec rejects even sinkhorn iteration counts") {
    CHECK_THROWS_AS(NormalizationSpec::sinkhorn_kind(2), std::invalid_argument);
    CHECK_THROWS_AS(NormalizationSpec::sinkhorn_kind(0), std::invalid_argument);
    CHECK_NOTHROW(NormalizationSpec::sinkhorn_kind(21));
}

TEST_CASE("column_sum_stats on a doubly stochastic kernel") {
    const auto k = sinkhorn(CostMatrix(DenseMatrix(5, 5, 0.0)), SinkhornOptions::fixed(3)).kernel;
    const auto st = column_sum_stats(k);
    CHECK(st.min == Catch::Approx(1.0).margin(1e-12));
    CHECK(st.max == Catch::Approx(1.0).margin(1e-12));
    CHECK(st.mean == Catch::Approx(1.0).margin(1e-12));
    // all mass in the bin containing 1
    const std::size_t bin_of_one = static_cast<std::size_t>(1.0 / 0.05);
    CHECK(st.histogram[bin_of_one] == 5);
}

TEST_CASE("column_sum_stats on total concentration") {
    DenseMatrix k(4, 4, 0.0);
    for (std::size_t i = 0; i < 4; ++i) k(i, 0) = 1.0;
    const auto st = column_sum_stats(k);
    CHECK(st.sums == std::vector<double>{4.0, 0.0, 0.0, 0.0});
    CHECK(st.min == 0.0);
    CHECK(st.max == 4.0);
    CHECK(st.histogram[0] == 3);  // three empty columns
    CHECK(st.histogram[59] == 1); // the out-of-range sum lands in the top bin
}

TEST_CASE("column_sum_stats matches direct summation") {
    SeededRng rng(14);
    const auto k = softmax(CostMatrix(testing::random_matrix(rng, 9, 9, 1.0)));
    const auto st = column_sum_stats(k);
    for (std::size_t j = 0; j < 9; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < 9; ++i) s += k(i, j);
        CHECK(st.sums[j] == Catch::Approx(s).margin(1e-13));
    }
}
