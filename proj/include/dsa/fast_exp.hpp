#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>

namespace dsa::detail {

/// exp(x) for x <= 0, accurate to ~2 ulp, written branch-free so the
/// compiler can vectorize the log-sum-exp inner loops. Inputs are clamped at
/// -60: terms that far below a row maximum contribute less than 1e-26 to a
/// shifted sum, which is far below the 1e-10 marginal tolerances used here.
inline double exp_neg(double x) {
    constexpr double kLog2e = 1.4426950408889634074;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;

    x = x < -60.0 ? -60.0 : x;
    x = x > 0.0 ? 0.0 : x;

    const double kd = static_cast<double>(static_cast<std::int64_t>(x * kLog2e + (x >= 0 ? 0.5 : -0.5)));
    const double r = (x - kd * kLn2Hi) - kd * kLn2Lo;

    // Taylor series of e^r on |r| <= ln2/2; degree 13 keeps the tail below
    // double rounding.
    double p = 1.0 / 6227020800.0;           // 1/13!
    p = p * r + 1.0 / 479001600.0;           // 1/12!
    p = p * r + 1.0 / 39916800.0;            // 1/11!
    p = p * r + 1.0 / 3628800.0;             // 1/10!
    p = p * r + 1.0 / 362880.0;              // 1/9!
    p = p * r + 1.0 / 40320.0;               // 1/8!
    p = p * r + 1.0 / 5040.0;                // 1/7!
    p = p * r + 1.0 / 720.0;                 // 1/6!
    p = p * r + 1.0 / 120.0;                 // 1/5!
    p = p * r + 1.0 / 24.0;                  // 1/4!
    p = p * r + 1.0 / 6.0;                   // 1/3!
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;

    // scale by 2^k through the exponent bits; k is in [-87, 0]
    const auto k = static_cast<std::int64_t>(kd);
    const double scale = std::bit_cast<double>(static_cast<std::uint64_t>(k + 1023) << 52);
    return p * scale;
}

/// sum_j exp(t_j - shift), where shift is the maximum of t.
inline double sum_exp_shifted(const double* t, std::size_t n, double shift) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += exp_neg(t[j] - shift);
    return s;
}

inline double max_of(const double* t, std::size_t n) {
    double m = t[0];
    for (std::size_t j = 1; j < n; ++j) m = t[j] > m ? t[j] : m;
    return m;
}

} // namespace dsa::detail
