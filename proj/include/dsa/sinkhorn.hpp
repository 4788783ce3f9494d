#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsa/fast_exp.hpp"
#include "dsa/io.hpp"
#include "dsa/matrix.hpp"
#include "dsa/numerics.hpp"

namespace dsa {

/// Pairwise log-affinity matrix C. For self-attention it is square and
/// C[i,j] is the query/key score of point i against point j.
struct CostMatrix {
    DenseMatrix c;

    CostMatrix() = default;
    explicit CostMatrix(DenseMatrix m) : c(std::move(m)) {}

    std::size_t rows() const { return c.rows(); }
    std::size_t cols() const { return c.cols(); }
};

/// Scaled kernel K = exp(C + f 1^T + 1 g^T) together with the log-domain
/// scalings (dual potentials) that produced it.
///
/// Convention: Sinkhorn targets rows and columns that each sum to 1, so K's
/// rows are probability vectors exactly like SoftMax output. The
/// measure-weighted kernel used by the flow and mean-field code is n*K; see
/// continuous_potentials().
struct SinkhornResult {
    DenseMatrix kernel;
    std::vector<double> f; // row log-scaling
    std::vector<double> g; // column log-scaling
    int iterations = 0;
    double row_violation = 0.0;
    double col_violation = 0.0;
};

class nonconvergence_error : public std::runtime_error {
public:
    nonconvergence_error(int iterations, double row_violation, double col_violation,
                         double tolerance)
        : std::runtime_error("sinkhorn did not converge after " + std::to_string(iterations) +
                             " iterations: row violation " + format_double(row_violation) +
                             ", column violation " + format_double(col_violation) +
                             ", tolerance " + format_double(tolerance)),
          iterations(iterations),
          row_violation(row_violation),
          col_violation(col_violation),
          tolerance(tolerance) {}

    int iterations;
    double row_violation;
    double col_violation;
    double tolerance;
};

/// Stopping rule: either a fixed number of single normalizations (odd count
/// leaves rows summing to 1), or iterate until both marginal violations are
/// below tolerance.
struct SinkhornOptions {
    std::optional<int> iterations;
    double tolerance = 1e-9;
    int max_iterations = 5000;

    // Tolerance-mode accelerator for the matrix-free solver: once the
    // iteration is near its fixed point, updates are mixed as
    // (1-theta) old + theta new. 1.0 is the plain iteration; values toward 2
    // cut the iteration count sharply when the cost is strongly peaked
    // (small bandwidth). A safeguard falls back to 1.0 if the residual grows.
    double overrelaxation = 1.0;

    // Warm start for the potentials, used by the simulation loops where the
    // point set moves a little between consecutive solves.
    const std::vector<double>* warm_f = nullptr;
    const std::vector<double>* warm_g = nullptr;

    static SinkhornOptions fixed(int iters) {
        SinkhornOptions o;
        o.iterations = iters;
        return o;
    }
    static SinkhornOptions with_tolerance(double tol, int max_iters = 5000) {
        SinkhornOptions o;
        o.tolerance = tol;
        o.max_iterations = max_iters;
        return o;
    }
};

/// result[i,j] = K[i,j] / sum_l K[i,l]; requires strictly positive entries.
inline DenseMatrix row_normalize(const DenseMatrix& k) {
    DenseMatrix out = k;
    for (std::size_t i = 0; i < k.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k.cols(); ++j) {
            if (!(k(i, j) > 0.0))
                throw std::invalid_argument("row_normalize: entries must be strictly positive");
            s += k(i, j);
        }
        for (std::size_t j = 0; j < k.cols(); ++j) out(i, j) /= s;
    }
    return out;
}

/// Column analogue; col_normalize(K) == row_normalize(K^T)^T.
inline DenseMatrix col_normalize(const DenseMatrix& k) {
    DenseMatrix out = k;
    std::vector<double> s(k.cols(), 0.0);
    for (std::size_t i = 0; i < k.rows(); ++i)
        for (std::size_t j = 0; j < k.cols(); ++j) {
            if (!(k(i, j) > 0.0))
                throw std::invalid_argument("col_normalize: entries must be strictly positive");
            s[j] += k(i, j);
        }
    for (std::size_t i = 0; i < k.rows(); ++i)
        for (std::size_t j = 0; j < k.cols(); ++j) out(i, j) /= s[j];
    return out;
}

/// Row-stochastic kernel exp(C) row-normalized, evaluated in log domain so
/// costs of any magnitude are safe.
inline DenseMatrix softmax(const CostMatrix& cost) {
    require_finite(cost.c, "softmax");
    const auto lse = logsumexp_rows(cost.c);
    DenseMatrix k(cost.rows(), cost.cols());
    for (std::size_t i = 0; i < cost.rows(); ++i)
        for (std::size_t j = 0; j < cost.cols(); ++j)
            k(i, j) = std::exp(cost.c(i, j) - lse[i]);
    return k;
}

/// (max_i |row_i sum - 1|, max_j |col_j sum - 1|)
inline std::pair<double, double> marginal_violation(const DenseMatrix& k) {
    require_finite(k, "marginal_violation");
    double row_err = 0.0;
    std::vector<double> col_sum(k.cols(), 0.0);
    for (std::size_t i = 0; i < k.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k.cols(); ++j) {
            s += k(i, j);
            col_sum[j] += k(i, j);
        }
        row_err = std::max(row_err, std::abs(s - 1.0));
    }
    double col_err = 0.0;
    for (double s : col_sum) col_err = std::max(col_err, std::abs(s - 1.0));
    return {row_err, col_err};
}

namespace detail {

/// Potentials produced by the matrix-free core.
struct SinkhornPotentials {
    std::vector<double> f, g;
    int iterations = 0;
    double row_violation = 0.0;
    double col_violation = 0.0;
    bool converged = false;
};

// The cost argument is any callable (i, j) -> C[i,j]; dense and
// generated-on-the-fly costs share all of the iteration machinery below.

template <class Cost>
void f_update(const Cost& cost, std::size_t n, const std::vector<double>& g,
              std::vector<double>& f, std::vector<double>& scratch) {
    scratch.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scratch[j] = cost(i, j) + g[j];
        f[i] = -logsumexp(scratch);
    }
}

template <class Cost>
void g_update(const Cost& cost, std::size_t n, const std::vector<double>& f,
              std::vector<double>& g, std::vector<OnlineLse>& acc) {
    acc.assign(n, OnlineLse{});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) acc[j].add(cost(i, j) + f[i]);
    for (std::size_t j = 0; j < n; ++j) g[j] = -acc[j].value();
}

/// Exact marginal violations of exp(C + f 1^T + 1 g^T), two passes.
template <class Cost>
std::pair<double, double> exact_violation(const Cost& cost, std::size_t n,
                                          const std::vector<double>& f,
                                          const std::vector<double>& g) {
    double row_err = 0.0;
    std::vector<double> col_sum(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = std::exp(cost(i, j) + f[i] + g[j]);
            s += v;
            col_sum[j] += v;
        }
        row_err = std::max(row_err, std::abs(s - 1.0));
    }
    double col_err = 0.0;
    for (double s : col_sum) col_err = std::max(col_err, std::abs(s - 1.0));
    return {row_err, col_err};
}

inline double max_abs_expm1_diff(const std::vector<double>& before,
                                 const std::vector<double>& after) {
    double m = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i)
        m = std::max(m, std::abs(std::expm1(before[i] - after[i])));
    return m;
}

/// Log-domain Sinkhorn on an n x n cost. Iteration 1 is the row
/// normalization (the f update), so one iteration reproduces SoftMax.
template <class Cost>
SinkhornPotentials sinkhorn_core(const Cost& cost, std::size_t n, const SinkhornOptions& opt) {
    if (n == 0) throw std::invalid_argument("sinkhorn: empty cost");
    SinkhornPotentials r;
    r.f.assign(n, 0.0);
    r.g.assign(n, 0.0);
    if (opt.warm_f) {
        if (opt.warm_f->size() != n) throw std::invalid_argument("sinkhorn: warm_f size mismatch");
        r.f = *opt.warm_f;
    }
    if (opt.warm_g) {
        if (opt.warm_g->size() != n) throw std::invalid_argument("sinkhorn: warm_g size mismatch");
        r.g = *opt.warm_g;
    }

    std::vector<double> scratch;
    std::vector<OnlineLse> acc;

    if (opt.iterations) {
        const int total = *opt.iterations;
        if (total < 1) throw std::invalid_argument("sinkhorn: iteration count must be >= 1");
        for (int l = 1; l <= total; ++l) {
            if (l % 2 == 1)
                f_update(cost, n, r.g, r.f, scratch);
            else
                g_update(cost, n, r.f, r.g, acc);
        }
        r.iterations = total;
        std::tie(r.row_violation, r.col_violation) = exact_violation(cost, n, r.f, r.g);
        r.converged = true;
        return r;
    }

    const double tol = opt.tolerance;
    if (!(tol > 0.0)) throw std::invalid_argument("sinkhorn: tolerance must be > 0");
    std::vector<double> prev;
    double row_est = std::numeric_limits<double>::infinity();
    double col_est = std::numeric_limits<double>::infinity();
    while (r.iterations < opt.max_iterations) {
        // The f update's log-sum-exp equals the pre-update row sums, so each
        // half step measures the violation it is about to remove.
        prev = r.f;
        f_update(cost, n, r.g, r.f, scratch);
        ++r.iterations;
        row_est = max_abs_expm1_diff(prev, r.f);

        if (r.iterations >= opt.max_iterations) break;
        prev = r.g;
        g_update(cost, n, r.f, r.g, acc);
        ++r.iterations;
        col_est = max_abs_expm1_diff(prev, r.g);

        if (row_est <= 0.5 * tol && col_est <= 0.5 * tol) {
            std::tie(r.row_violation, r.col_violation) = exact_violation(cost, n, r.f, r.g);
            if (r.row_violation <= tol && r.col_violation <= tol) {
                r.converged = true;
                return r;
            }
        }
    }
    std::tie(r.row_violation, r.col_violation) = exact_violation(cost, n, r.f, r.g);
    r.converged = r.row_violation <= tol && r.col_violation <= tol;
    return r;
}

struct DenseCostView {
    const DenseMatrix* m;
    double operator()(std::size_t i, std::size_t j) const { return (*m)(i, j); }
};

/// Row view of the pairwise cost c(i,j) = -||q_i - k_j||^2 / (2 eps) between
/// projected point sets, generated on the fly so the n x n matrix is never
/// materialized. transposed() swaps the roles of q and k, which turns every
/// column reduction into a row reduction.
struct PairwiseL2Cost {
    const DenseMatrix* q; // n x d
    const DenseMatrix* k; // n x d
    double inv_two_eps;

    std::size_t size() const { return q->rows(); }

    double operator()(std::size_t i, std::size_t j) const {
        const double* qi = q->data() + i * q->cols();
        const double* kj = k->data() + j * k->cols();
        double s = 0.0;
        for (std::size_t a = 0; a < q->cols(); ++a) {
            const double d = qi[a] - kj[a];
            s += d * d;
        }
        return -s * inv_two_eps;
    }

    /// out[j] = c(i,j) + add[j]
    void fill_row(std::size_t i, const double* add, double* out) const {
        const std::size_t n = k->rows();
        const std::size_t d = q->cols();
        const double* qi = q->data() + i * d;
        const double* kd = k->data();
        if (d == 1) {
            const double qv = qi[0];
            for (std::size_t j = 0; j < n; ++j) {
                const double diff = qv - kd[j];
                out[j] = add[j] - diff * diff * inv_two_eps;
            }
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                const double* kj = kd + j * d;
                double s = 0.0;
                for (std::size_t a = 0; a < d; ++a) {
                    const double diff = qi[a] - kj[a];
                    s += diff * diff;
                }
                out[j] = add[j] - s * inv_two_eps;
            }
        }
    }

    PairwiseL2Cost transposed() const { return {k, q, inv_two_eps}; }
};

/// out[i] = -lse_j(cost(i,j) + add[j]); the basic Sinkhorn half step.
template <class Cost>
void potential_row_pass(const Cost& cost, const std::vector<double>& add,
                        std::vector<double>& out, std::vector<double>& scratch) {
    const std::size_t n = cost.size();
    scratch.resize(n);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        cost.fill_row(i, add.data(), scratch.data());
        const double m = max_of(scratch.data(), n);
        const double s = sum_exp_shifted(scratch.data(), n, m);
        out[i] = -(m + std::log(s));
    }
}

/// Matrix-free log-domain Sinkhorn on a pairwise cost, tolerance mode only.
/// Column updates run as row updates on the transposed cost view, so the
/// whole solve is cache-friendly row passes. Overrelaxation (if requested)
/// kicks in once the residual is inside the fixed point's basin and backs
/// off on any residual growth.
template <class RowCost>
SinkhornPotentials sinkhorn_pairwise(const RowCost& rows, const SinkhornOptions& opt) {
    const std::size_t n = rows.size();
    if (n == 0) throw std::invalid_argument("sinkhorn: empty cost");
    if (opt.iterations)
        throw std::invalid_argument("sinkhorn_pairwise: fixed iteration counts are not supported");
    const auto cols = rows.transposed();
    const double tol = opt.tolerance;
    if (!(tol > 0.0)) throw std::invalid_argument("sinkhorn: tolerance must be > 0");

    SinkhornPotentials r;
    r.f.assign(n, 0.0);
    r.g.assign(n, 0.0);
    if (opt.warm_f) r.f = *opt.warm_f;
    if (opt.warm_g) r.g = *opt.warm_g;
    if (r.f.size() != n || r.g.size() != n)
        throw std::invalid_argument("sinkhorn: warm start size mismatch");

    std::vector<double> plain, scratch;
    double theta = 1.0;
    double row_est = std::numeric_limits<double>::infinity();
    double col_est = std::numeric_limits<double>::infinity();
    double prev_worst = std::numeric_limits<double>::infinity();

    auto half_step = [&](const auto& view, const std::vector<double>& add,
                         std::vector<double>& pot) {
        potential_row_pass(view, add, plain, scratch);
        double est = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            est = std::max(est, std::abs(std::expm1(pot[i] - plain[i])));
            pot[i] = (1.0 - theta) * pot[i] + theta * plain[i];
        }
        return est;
    };

    auto exact_check = [&]() {
        potential_row_pass(rows, r.g, plain, scratch);
        double rv = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            rv = std::max(rv, std::abs(std::expm1(r.f[i] - plain[i])));
        potential_row_pass(cols, r.f, plain, scratch);
        double cv = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            cv = std::max(cv, std::abs(std::expm1(r.g[j] - plain[j])));
        r.row_violation = rv;
        r.col_violation = cv;
        return std::max(rv, cv);
    };

    while (r.iterations < opt.max_iterations) {
        row_est = half_step(rows, r.g, r.f);
        ++r.iterations;
        if (r.iterations >= opt.max_iterations) break;
        col_est = half_step(cols, r.f, r.g);
        ++r.iterations;

        const double worst = std::max(row_est, col_est);
        if (theta != 1.0 && worst > prev_worst * 1.05) theta = 1.0; // diverging, back off
        if (theta == 1.0 && opt.overrelaxation > 1.0 && worst < 0.5)
            theta = opt.overrelaxation;
        prev_worst = worst;

        if (row_est <= 0.5 * tol && col_est <= 0.5 * tol) {
            if (exact_check() <= tol) {
                r.converged = true;
                return r;
            }
        }
    }
    exact_check();
    r.converged = std::max(r.row_violation, r.col_violation) <= tol;
    return r;
}

/// out.row(i) = sum_j exp(cost(i,j) + f_i + g_j) * x_j, plus optionally the
/// plain kernel row sums. One streaming pass; nothing is materialized.
template <class Cost>
void kernel_weighted_positions(const Cost& cost, const DenseMatrix& x,
                               const std::vector<double>& f, const std::vector<double>& g,
                               DenseMatrix& out, std::vector<double>* row_sums = nullptr) {
    const std::size_t n = cost.size();
    const std::size_t d = x.cols();
    out = DenseMatrix(n, d);
    if (row_sums) row_sums->assign(n, 0.0);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        cost.fill_row(i, g.data(), w.data());
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            w[j] = exp_neg(w[j] + f[i]);
            s += w[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            const double* xj = x.data() + j * d;
            double* oi = out.data() + i * d;
            for (std::size_t a = 0; a < d; ++a) oi[a] += w[j] * xj[a];
        }
        if (row_sums) (*row_sums)[i] = s;
    }
}

} // namespace detail

/// Log-domain Sinkhorn scaling of exp(C) toward a doubly stochastic kernel.
///
/// Alternates f = -lse_rows(C + 1 g^T) and g = -lse_cols(C + f 1^T) starting
/// from g = 0; kernel and potentials are returned together and satisfy
/// K = exp(C + f 1^T + 1 g^T) by construction.
///
/// Throws nonconvergence_error when a tolerance stop cannot be met within
/// max_iterations.
inline SinkhornResult sinkhorn(const CostMatrix& cost, const SinkhornOptions& opt = {}) {
    require_finite(cost.c, "sinkhorn");
    if (cost.rows() != cost.cols())
        throw std::invalid_argument("sinkhorn: cost matrix must be square");
    const std::size_t n = cost.rows();
    detail::DenseCostView view{&cost.c};
    auto pots = detail::sinkhorn_core(view, n, opt);
    if (!opt.iterations && !pots.converged)
        throw nonconvergence_error(pots.iterations, pots.row_violation, pots.col_violation,
                                   opt.tolerance);

    SinkhornResult r;
    r.f = std::move(pots.f);
    r.g = std::move(pots.g);
    r.iterations = pots.iterations;
    r.row_violation = pots.row_violation;
    r.col_violation = pots.col_violation;
    r.kernel = DenseMatrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            r.kernel(i, j) = std::exp(cost.c(i, j) + r.f[i] + r.g[j]);
    return r;
}

/// Potentials in the measure-weighted convention, where the kernel
/// n*K = exp(C + phi_i + psi_j) integrates to 1 against mu = (1/n) sum delta.
/// These are the potentials the soft c-transform extends off-sample.
inline std::pair<std::vector<double>, std::vector<double>> continuous_potentials(
    const SinkhornResult& r) {
    const double half_log_n = 0.5 * std::log(static_cast<double>(r.f.size()));
    auto phi = r.f;
    auto psi = r.g;
    for (double& v : phi) v += half_log_n;
    for (double& v : psi) v += half_log_n;
    return {std::move(phi), std::move(psi)};
}

/// Soft c-transform in the measure-weighted convention:
/// f(x) = -log( (1/n) sum_j exp(g_j + c_row_j) ), computed via log-sum-exp.
/// c_row holds the costs c(x, x_j) against the sample points and g their
/// measure-weighted column potentials.
inline double extend_potential(std::span<const double> c_row, std::span<const double> g) {
    if (c_row.size() != g.size())
        throw std::invalid_argument("extend_potential: length mismatch");
    if (c_row.empty()) throw std::invalid_argument("extend_potential: empty input");
    std::vector<double> t(c_row.size());
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = c_row[j] + g[j];
    return -(logsumexp(t) - std::log(static_cast<double>(t.size())));
}

} // namespace dsa
