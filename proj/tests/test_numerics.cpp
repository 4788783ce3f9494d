#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dsa/numerics.hpp"
#include "test_support.hpp"

using namespace dsa;

namespace {

// Naive oracle: no max shift, valid only when nothing overflows.
double naive_lse(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += std::exp(x);
    return std::log(s);
}

} // namespace

TEST_CASE("logsumexp_rows basic values") {
    DenseMatrix m{{0.0, 0.0}};
    CHECK(logsumexp_rows(m)[0] == Catch::Approx(std::log(2.0)).margin(1e-15));

    DenseMatrix big{{1000.0, 1000.0}};
    CHECK(logsumexp_rows(big)[0] == Catch::Approx(1000.0 + std::log(2.0)).margin(1e-12));
}

TEST_CASE("logsumexp_rows matches naive summation on random input") {
    SeededRng rng(7);
    const auto m = testing::random_matrix(rng, 5, 5, 2.0);
    const auto fast = logsumexp_rows(m);
    for (std::size_t i = 0; i < m.rows(); ++i)
        CHECK(fast[i] == Catch::Approx(naive_lse(m.row(i))).margin(1e-12));
}

TEST_CASE("logsumexp_cols basic values and transpose consistency") {
    DenseMatrix m{{0.0}, {0.0}};
    CHECK(logsumexp_cols(m)[0] == Catch::Approx(std::log(2.0)).margin(1e-15));

    SeededRng rng(11);
    const auto a = testing::random_matrix(rng, 4, 7, 1.5);
    const auto by_cols = logsumexp_cols(a);
    const auto by_rows_of_t = logsumexp_rows(a.transposed());
    for (std::size_t j = 0; j < a.cols(); ++j) {
        CHECK(by_cols[j] == by_rows_of_t[j]); // exactly the same reduction order
        std::vector<double> col(a.rows());
        for (std::size_t i = 0; i < a.rows(); ++i) col[i] = a(i, j);
        CHECK(by_cols[j] == Catch::Approx(naive_lse(col)).margin(1e-12));
    }
}

TEST_CASE("logsumexp stays finite at extreme magnitudes") {
    DenseMatrix m{{1e6, -1e6}, {-1e6, 1e6}};
    for (double v : logsumexp_rows(m)) CHECK(std::isfinite(v));
    for (double v : logsumexp_cols(m)) CHECK(std::isfinite(v));
}

TEST_CASE("logsumexp shift equivariance") {
    SeededRng rng(3);
    const auto m = testing::random_matrix(rng, 6, 4, 1.0);
    const double shift = 13.75;
    DenseMatrix shifted = m;
    for (double& v : shifted.storage()) v += shift;
    const auto base = logsumexp_rows(m);
    const auto moved = logsumexp_rows(shifted);
    for (std::size_t i = 0; i < m.rows(); ++i)
        CHECK(moved[i] == Catch::Approx(base[i] + shift).margin(1e-12));
}

TEST_CASE("gaussian_sample moments at seed 0") {
    SeededRng rng(0);
    const auto cloud = gaussian_sample(rng, 100000, 1, 0.0, 1.0);
    CHECK(std::abs(cloud.mean()[0]) < 0.02);
    CHECK(std::abs(cloud.variance() - 1.0) < 0.03);
}

TEST_CASE("gaussian_sample is deterministic given the seed") {
    SeededRng a(42), b(42);
    const auto ca = gaussian_sample(a, 100, 3, 0.5, 2.0);
    const auto cb = gaussian_sample(b, 100, 3, 0.5, 2.0);
    CHECK(ca.positions.storage() == cb.positions.storage());
}

TEST_CASE("gaussian_sample rejects bad parameters") {
    SeededRng rng(1);
    CHECK_THROWS_AS(gaussian_sample(rng, 0, 1, 0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_sample(rng, 5, 1, 0.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_sample(rng, 5, 1, 0.0, -1.0), std::invalid_argument);
}

TEST_CASE("rng substreams are independent and reproducible") {
    SeededRng root(9);
    auto s1 = root.split(1);
    auto s2 = root.split(2);
    CHECK(s1.next_u64() != s2.next_u64());
    auto s1_again = SeededRng(9).split(1);
    s1 = root.split(1);
    CHECK(s1.next_u64() == s1_again.next_u64());
}

TEST_CASE("finite_diff_gradient on quadratic and analytic cases") {
    auto half_norm2 = [](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return 0.5 * s;
    };
    const std::vector<double> p{1.0, 2.0};
    const auto g = finite_diff_gradient(half_norm2, p, 1e-5);
    CHECK(g[0] == Catch::Approx(1.0).margin(1e-8));
    CHECK(g[1] == Catch::Approx(2.0).margin(1e-8));

    auto constant = [](std::span<const double>) { return 3.25; };
    for (double v : finite_diff_gradient(constant, p, 1e-5))
        CHECK(std::abs(v) < 1e-10);

    auto f = [](std::span<const double> x) { return std::exp(x[0] * x[1]); };
    const std::vector<double> q{0.3, 0.7};
    const auto gf = finite_diff_gradient(f, q, 1e-5);
    const double e = std::exp(0.3 * 0.7);
    CHECK(gf[0] == Catch::Approx(0.7 * e).epsilon(1e-7));
    CHECK(gf[1] == Catch::Approx(0.3 * e).epsilon(1e-7));
}

TEST_CASE("finite_diff_gradient of a symmetric quadratic form equals Ax") {
    SeededRng rng(17);
    auto raw = testing::random_matrix(rng, 4, 4, 1.0);
    DenseMatrix a = raw;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) a(i, j) = 0.5 * (raw(i, j) + raw(j, i));

    auto quad = [&](std::span<const double> x) {
        double s = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) s += x[i] * a(i, j) * x[j];
        return 0.5 * s;
    };
    std::vector<double> x{0.4, -1.2, 0.9, 2.1};
    const auto g = finite_diff_gradient(quad, x, 1e-5);
    for (std::size_t i = 0; i < 4; ++i) {
        double want = 0.0;
        for (std::size_t j = 0; j < 4; ++j) want += a(i, j) * x[j];
        CHECK(g[i] == Catch::Approx(want).epsilon(1e-7));
    }
}

TEST_CASE("invert recovers the identity") {
    SeededRng rng(23);
    auto m = testing::random_matrix(rng, 3, 3, 1.0);
    for (std::size_t i = 0; i < 3; ++i) m(i, i) += 2.0;
    const auto prod = matmul(m, invert(m));
    CHECK(max_abs_diff(prod, DenseMatrix::identity(3)) < 1e-12);
}

TEST_CASE("matmul transpose flags agree with explicit transposition") {
    SeededRng rng(29);
    const auto a = testing::random_matrix(rng, 3, 5);
    const auto b = testing::random_matrix(rng, 3, 4);
    const auto direct = matmul(a, b, true, false);
    const auto manual = matmul(a.transposed(), b);
    CHECK(max_abs_diff(direct, manual) < 1e-14);

    const auto c = testing::random_matrix(rng, 4, 5);
    CHECK(max_abs_diff(matmul(a, c, false, true), matmul(a, c.transposed())) < 1e-14);
}
