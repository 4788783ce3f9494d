#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsa/matrix.hpp"
#include "dsa/numerics.hpp"
#include "dsa/rng.hpp"

namespace dsa {

using NodeId = std::size_t;

/// Gradients keyed by parameter name, shaped exactly like the parameters.
using GradientSet = std::map<std::string, DenseMatrix>;

/// Small reverse-mode tape over dense matrices.
///
/// The operation set is intentionally narrow: just what an unrolled
/// log-domain Sinkhorn attention classifier needs. Log-sum-exp is its own
/// primitive; its adjoint is the softmax-weighted scatter, which keeps the
/// backward pass free of exp/log chains and their precision loss.
///
/// Construction fixes the graph topology and all shapes; forward() evaluates
/// with fresh input values, backward() accumulates exact adjoints.
class Graph {
public:
    enum class Op {
        input,
        parameter,
        constant,
        matmul,
        add,
        scalar_mul,
        exp,
        lse_rows,      // n x m -> n x 1
        lse_cols,      // n x m -> 1 x m
        sub_broadcast, // subtract an n x 1 vector from every column, or 1 x m from every row
        relu,
        mean_rows,     // n x m -> 1 x m, mean over rows
        softmax_xent,  // (B x C, labels) -> 1 x 1 mean cross-entropy
    };

    NodeId input(std::string name, std::size_t rows, std::size_t cols) {
        Node n;
        n.op = Op::input;
        n.name = std::move(name);
        n.rows = rows;
        n.cols = cols;
        return push(std::move(n));
    }

    NodeId parameter(std::string name, DenseMatrix value) {
        Node n;
        n.op = Op::parameter;
        n.name = std::move(name);
        n.rows = value.rows();
        n.cols = value.cols();
        n.value = std::move(value);
        n.has_value = true;
        return push(std::move(n));
    }

    NodeId constant(DenseMatrix value) {
        Node n;
        n.op = Op::constant;
        n.rows = value.rows();
        n.cols = value.cols();
        n.value = std::move(value);
        n.has_value = true;
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false) {
        const auto [am, ak] = shape_of(a, trans_a);
        const auto [bk, bn] = shape_of(b, trans_b);
        if (ak != bk) throw std::invalid_argument("Graph::matmul: inner dimensions differ");
        Node n;
        n.op = Op::matmul;
        n.args = {a, b};
        n.trans_a = trans_a;
        n.trans_b = trans_b;
        n.rows = am;
        n.cols = bn;
        return push(std::move(n));
    }

    NodeId add(NodeId a, NodeId b) {
        require_same(a, b, "Graph::add");
        Node n;
        n.op = Op::add;
        n.args = {a, b};
        n.rows = node(a).rows;
        n.cols = node(a).cols;
        return push(std::move(n));
    }

    NodeId scalar_mul(NodeId a, double s) {
        Node n;
        n.op = Op::scalar_mul;
        n.args = {a, a};
        n.scalar = s;
        n.rows = node(a).rows;
        n.cols = node(a).cols;
        return push(std::move(n));
    }

    NodeId exp(NodeId a) { return unary(Op::exp, a); }
    NodeId relu(NodeId a) { return unary(Op::relu, a); }

    NodeId logsumexp_rows(NodeId a) {
        Node n;
        n.op = Op::lse_rows;
        n.args = {a, a};
        n.rows = node(a).rows;
        n.cols = 1;
        return push(std::move(n));
    }

    NodeId logsumexp_cols(NodeId a) {
        Node n;
        n.op = Op::lse_cols;
        n.args = {a, a};
        n.rows = 1;
        n.cols = node(a).cols;
        return push(std::move(n));
    }

    NodeId sub_broadcast(NodeId a, NodeId v) {
        const Node& av = node(a);
        const Node& vv = node(v);
        const bool per_row = vv.rows == av.rows && vv.cols == 1;
        const bool per_col = vv.rows == 1 && vv.cols == av.cols;
        if (!per_row && !per_col)
            throw std::invalid_argument("Graph::sub_broadcast: vector shape fits neither axis");
        Node n;
        n.op = Op::sub_broadcast;
        n.args = {a, v};
        n.rows = av.rows;
        n.cols = av.cols;
        return push(std::move(n));
    }

    NodeId mean_rows(NodeId a) {
        Node n;
        n.op = Op::mean_rows;
        n.args = {a, a};
        n.rows = 1;
        n.cols = node(a).cols;
        return push(std::move(n));
    }

    /// Mean softmax cross-entropy over the batch; labels are supplied to
    /// forward() alongside the inputs.
    NodeId softmax_xent(NodeId logits) {
        Node n;
        n.op = Op::softmax_xent;
        n.args = {logits, logits};
        n.rows = 1;
        n.cols = 1;
        xent_node_ = nodes_.size();
        return push(std::move(n));
    }

    std::size_t size() const { return nodes_.size(); }

    DenseMatrix& parameter_value(const std::string& name) {
        return nodes_[param_id(name)].value;
    }
    const DenseMatrix& parameter_value(const std::string& name) const {
        return nodes_[param_id(name)].value;
    }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> out;
        for (const auto& n : nodes_)
            if (n.op == Op::parameter) out.push_back(n.name);
        return out;
    }

    const DenseMatrix& value(NodeId id) const {
        if (!nodes_[id].has_value) throw std::logic_error("Graph::value: node not evaluated");
        return nodes_[id].value;
    }
    const DenseMatrix& grad(NodeId id) const {
        if (!backward_done_) throw std::logic_error("Graph::grad: backward has not run");
        return nodes_[id].grad;
    }

    /// Deterministic evaluation in construction order; every intermediate is
    /// retained for backward.
    void forward(const std::map<std::string, DenseMatrix>& inputs,
                 std::vector<int> labels = {}) {
        labels_ = std::move(labels);
        for (auto& n : nodes_) {
            if (n.op == Op::input) {
                auto it = inputs.find(n.name);
                if (it == inputs.end())
                    throw std::invalid_argument("Graph::forward: missing input '" + n.name + "'");
                if (it->second.rows() != n.rows || it->second.cols() != n.cols)
                    throw std::invalid_argument("Graph::forward: input '" + n.name +
                                                "' has the wrong shape");
                n.value = it->second;
                n.has_value = true;
            } else if (n.op != Op::parameter && n.op != Op::constant) {
                eval(n);
            }
        }
        forward_done_ = true;
        backward_done_ = false;
    }

    /// Reverse-mode gradients of the scalar at `out` w.r.t. every leaf.
    GradientSet backward(NodeId out, double cotangent = 1.0) {
        if (!forward_done_) throw std::logic_error("Graph::backward: forward has not run");
        const Node& o = node(out);
        if (o.rows != 1 || o.cols != 1)
            throw std::invalid_argument("Graph::backward: output must be a scalar");
        for (auto& n : nodes_) {
            n.grad = DenseMatrix(n.rows, n.cols, 0.0);
        }
        nodes_[out].grad(0, 0) = cotangent;
        for (std::size_t k = nodes_.size(); k-- > 0;) propagate(nodes_[k]);
        backward_done_ = true;

        GradientSet grads;
        for (const auto& n : nodes_)
            if (n.op == Op::parameter) grads.emplace(n.name, n.grad);
        return grads;
    }

private:
    struct Node {
        Op op = Op::constant;
        std::array<NodeId, 2> args{0, 0};
        bool trans_a = false, trans_b = false;
        double scalar = 0.0;
        std::size_t rows = 0, cols = 0;
        std::string name;
        DenseMatrix value;
        DenseMatrix grad;
        bool has_value = false;
    };

    NodeId push(Node n) {
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    NodeId unary(Op op, NodeId a) {
        Node n;
        n.op = op;
        n.args = {a, a};
        n.rows = node(a).rows;
        n.cols = node(a).cols;
        return push(std::move(n));
    }

    const Node& node(NodeId id) const {
        if (id >= nodes_.size()) throw std::invalid_argument("Graph: bad node id");
        return nodes_[id];
    }

    std::pair<std::size_t, std::size_t> shape_of(NodeId id, bool transposed) const {
        const Node& n = node(id);
        return transposed ? std::pair{n.cols, n.rows} : std::pair{n.rows, n.cols};
    }

    void require_same(NodeId a, NodeId b, const char* who) const {
        if (node(a).rows != node(b).rows || node(a).cols != node(b).cols)
            throw std::invalid_argument(std::string(who) + ": shape mismatch");
    }

    NodeId param_id(const std::string& name) const {
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].op == Op::parameter && nodes_[i].name == name) return i;
        throw std::invalid_argument("Graph: no parameter named '" + name + "'");
    }

    void eval(Node& n) {
        const auto& a = nodes_[n.args[0]].value;
        const auto& b = nodes_[n.args[1]].value;
        switch (n.op) {
            case Op::matmul:
                n.value = dsa::matmul(a, b, n.trans_a, n.trans_b);
                break;
            case Op::add:
                n.value = a + b;
                break;
            case Op::scalar_mul:
                n.value = a * n.scalar;
                break;
            case Op::exp: {
                n.value = a;
                for (double& v : n.value.storage()) v = std::exp(v);
                break;
            }
            case Op::relu: {
                n.value = a;
                for (double& v : n.value.storage()) v = v > 0.0 ? v : 0.0;
                break;
            }
            case Op::lse_rows: {
                const auto l = dsa::logsumexp_rows(a);
                n.value = DenseMatrix(a.rows(), 1);
                for (std::size_t i = 0; i < a.rows(); ++i) n.value(i, 0) = l[i];
                break;
            }
            case Op::lse_cols: {
                const auto l = dsa::logsumexp_cols(a);
                n.value = DenseMatrix(1, a.cols());
                for (std::size_t j = 0; j < a.cols(); ++j) n.value(0, j) = l[j];
                break;
            }
            case Op::sub_broadcast: {
                n.value = a;
                if (b.cols() == 1) {
                    for (std::size_t i = 0; i < a.rows(); ++i)
                        for (std::size_t j = 0; j < a.cols(); ++j) n.value(i, j) -= b(i, 0);
                } else {
                    for (std::size_t i = 0; i < a.rows(); ++i)
                        for (std::size_t j = 0; j < a.cols(); ++j) n.value(i, j) -= b(0, j);
                }
                break;
            }
            case Op::mean_rows: {
                n.value = DenseMatrix(1, a.cols(), 0.0);
                for (std::size_t i = 0; i < a.rows(); ++i)
                    for (std::size_t j = 0; j < a.cols(); ++j) n.value(0, j) += a(i, j);
                n.value *= 1.0 / static_cast<double>(a.rows());
                break;
            }
            case Op::softmax_xent: {
                if (labels_.size() != a.rows())
                    throw std::invalid_argument("Graph::forward: labels do not match batch size");
                double loss = 0.0;
                for (std::size_t bi = 0; bi < a.rows(); ++bi) {
                    const int y = labels_[bi];
                    if (y < 0 || static_cast<std::size_t>(y) >= a.cols())
                        throw std::invalid_argument("Graph::forward: label out of range");
                    loss += logsumexp(a.row(bi)) - a(bi, static_cast<std::size_t>(y));
                }
                n.value = DenseMatrix(1, 1, loss / static_cast<double>(a.rows()));
                break;
            }
            default:
                throw std::logic_error("Graph::eval: leaf reached");
        }
        n.has_value = true;
    }

    void propagate(Node& n) {
        Node& na = nodes_[n.args[0]];
        Node& nb = nodes_[n.args[1]];
        const DenseMatrix& d = n.grad;
        switch (n.op) {
            case Op::input:
            case Op::parameter:
            case Op::constant:
                break;
            case Op::matmul: {
                const auto& a = na.value;
                const auto& b = nb.value;
                if (!n.trans_a)
                    na.grad += n.trans_b ? dsa::matmul(d, b) : dsa::matmul(d, b, false, true);
                else
                    na.grad += n.trans_b ? dsa::matmul(b, d, true, true) : dsa::matmul(b, d, false, true);
                if (!n.trans_b)
                    nb.grad += n.trans_a ? dsa::matmul(a, d) : dsa::matmul(a, d, true, false);
                else
                    nb.grad += n.trans_a ? dsa::matmul(d, a, true, true) : dsa::matmul(d, a, true, false);
                break;
            }
            case Op::add:
                na.grad += d;
                nb.grad += d;
                break;
            case Op::scalar_mul:
                na.grad += d * n.scalar;
                break;
            case Op::exp: {
                DenseMatrix t = d;
                for (std::size_t k = 0; k < t.size(); ++k)
                    t.storage()[k] *= n.value.storage()[k];
                na.grad += t;
                break;
            }
            case Op::relu: {
                DenseMatrix t = d;
                for (std::size_t k = 0; k < t.size(); ++k)
                    if (!(na.value.storage()[k] > 0.0)) t.storage()[k] = 0.0;
                na.grad += t;
                break;
            }
            case Op::lse_rows: {
                for (std::size_t i = 0; i < na.value.rows(); ++i) {
                    const double di = d(i, 0);
                    if (di == 0.0) continue;
                    for (std::size_t j = 0; j < na.value.cols(); ++j)
                        na.grad(i, j) += di * std::exp(na.value(i, j) - n.value(i, 0));
                }
                break;
            }
            case Op::lse_cols: {
                for (std::size_t j = 0; j < na.value.cols(); ++j) {
                    const double dj = d(0, j);
                    if (dj == 0.0) continue;
                    for (std::size_t i = 0; i < na.value.rows(); ++i)
                        na.grad(i, j) += dj * std::exp(na.value(i, j) - n.value(0, j));
                }
                break;
            }
            case Op::sub_broadcast: {
                na.grad += d;
                if (nb.value.cols() == 1) {
                    for (std::size_t i = 0; i < d.rows(); ++i)
                        for (std::size_t j = 0; j < d.cols(); ++j) nb.grad(i, 0) -= d(i, j);
                } else {
                    for (std::size_t i = 0; i < d.rows(); ++i)
                        for (std::size_t j = 0; j < d.cols(); ++j) nb.grad(0, j) -= d(i, j);
                }
                break;
            }
            case Op::mean_rows: {
                const double inv = 1.0 / static_cast<double>(na.value.rows());
                for (std::size_t i = 0; i < na.value.rows(); ++i)
                    for (std::size_t j = 0; j < na.value.cols(); ++j)
                        na.grad(i, j) += d(0, j) * inv;
                break;
            }
            case Op::softmax_xent: {
                const double scale = d(0, 0) / static_cast<double>(na.value.rows());
                if (scale == 0.0) break;
                for (std::size_t bi = 0; bi < na.value.rows(); ++bi) {
                    const double lse = logsumexp(na.value.row(bi));
                    for (std::size_t cj = 0; cj < na.value.cols(); ++cj) {
                        double p = std::exp(na.value(bi, cj) - lse);
                        if (static_cast<std::size_t>(labels_[bi]) == cj) p -= 1.0;
                        na.grad(bi, cj) += scale * p;
                    }
                }
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<int> labels_;
    std::size_t xent_node_ = 0;
    bool forward_done_ = false;
    bool backward_done_ = false;
};

/// Unrolled log-domain Sinkhorn normalization as graph nodes: the log-kernel
/// starts at C and alternately subtracts row and column log-sum-exps, which
/// is exactly the row/column normalization sequence. iterations = 1 is
/// SoftMax.
inline NodeId build_unrolled_sinkhorn(Graph& g, NodeId cost, int iterations) {
    if (iterations < 1)
        throw std::invalid_argument("build_unrolled_sinkhorn: iterations must be >= 1");
    NodeId log_kernel = cost;
    for (int l = 1; l <= iterations; ++l) {
        const NodeId lse = (l % 2 == 1) ? g.logsumexp_rows(log_kernel)
                                        : g.logsumexp_cols(log_kernel);
        log_kernel = g.sub_broadcast(log_kernel, lse);
    }
    return g.exp(log_kernel);
}

struct GradCheckOptions {
    double step = 1e-6;
    double tolerance = 1e-5;
    std::size_t coords_per_parameter = 50;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::map<std::string, double> per_parameter;
    double tolerance = 0.0;

    bool passed() const { return max_rel_error <= tolerance; }
};

/// Compares reverse-mode gradients against central finite differences on a
/// random subset of coordinates per parameter. The relative-error
/// denominator is floored at 1e-3 so coordinates with negligible gradient
/// do not divide by rounding noise.
inline GradCheckReport grad_check(Graph& g, NodeId output,
                                  const std::map<std::string, DenseMatrix>& inputs,
                                  std::vector<int> labels = {},
                                  const GradCheckOptions& opt = {}) {
    g.forward(inputs, labels);
    const GradientSet grads = g.backward(output);

    GradCheckReport report;
    report.tolerance = opt.tolerance;
    SeededRng rng(opt.seed);
    for (const auto& [name, ad] : grads) {
        DenseMatrix& value = g.parameter_value(name);
        std::vector<std::size_t> coords(value.size());
        for (std::size_t k = 0; k < coords.size(); ++k) coords[k] = k;
        if (coords.size() > opt.coords_per_parameter) {
            for (std::size_t k = 0; k < opt.coords_per_parameter; ++k) {
                const std::size_t other = k + rng.below(coords.size() - k);
                std::swap(coords[k], coords[other]);
            }
            coords.resize(opt.coords_per_parameter);
        }

        double worst = 0.0;
        for (std::size_t idx : coords) {
            const double saved = value.storage()[idx];
            value.storage()[idx] = saved + opt.step;
            g.forward(inputs, labels);
            const double fp = g.value(output)(0, 0);
            value.storage()[idx] = saved - opt.step;
            g.forward(inputs, labels);
            const double fm = g.value(output)(0, 0);
            value.storage()[idx] = saved;
            const double fd = (fp - fm) / (2.0 * opt.step);
            const double adv = ad.storage()[idx];
            const double rel = std::abs(adv - fd) / std::max({std::abs(adv), std::abs(fd), 1e-3});
            worst = std::max(worst, rel);
        }
        report.per_parameter[name] = worst;
        report.max_rel_error = std::max(report.max_rel_error, worst);
    }
    // leave the graph evaluated at the unperturbed point
    g.forward(inputs, labels);
    g.backward(output);
    return report;
}

} // namespace dsa
