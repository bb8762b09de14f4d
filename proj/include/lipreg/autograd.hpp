#pragma once

// Tape-based reverse-mode differentiation over dense 2-D tensors. Primitives
// cover exactly what the CTR models and losses need; every op validates
// shapes and rejects non-finite outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "lipreg/error.hpp"
#include "lipreg/tensor.hpp"

namespace lipreg {

using NodeId = int;

enum class OpKind {
    Constant,
    Parameter,
    MatMul,
    Add,
    AddRowVec,
    Affine,      // s*x + c elementwise, scalar constants
    Mul,
    Div,
    ColScale,    // out[b][j] = a[b][j] * s[b], s is Bx1
    Relu,
    Sigmoid,
    SoftmaxRows,
    LogClamped,
    Gather,
    ConcatCols,
    RowSum,
    Sum,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Constant: return "constant";
        case OpKind::Parameter: return "parameter";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::AddRowVec: return "add_rowvec";
        case OpKind::Affine: return "affine";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::ColScale: return "col_scale";
        case OpKind::Relu: return "relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::SoftmaxRows: return "softmax";
        case OpKind::LogClamped: return "log";
        case OpKind::Gather: return "gather";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::RowSum: return "rowsum";
        case OpKind::Sum: return "sum";
    }
    return "?";
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

class Tape {
public:
    NodeId constant(Tensor v) { return push(OpKind::Constant, {}, std::move(v)); }

    NodeId parameter(Tensor v) {
        NodeId id = push(OpKind::Parameter, {}, std::move(v));
        param_ids_.push_back(id);
        return id;
    }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.cols() != B.rows()) {
            throw ArgumentError("matmul: inner dimensions disagree " + A.shape_string() +
                                " x " + B.shape_string());
        }
        Tensor out(A.rows(), B.cols());
        for (std::size_t i = 0; i < A.rows(); ++i) {
            for (std::size_t k = 0; k < A.cols(); ++k) {
                const double aik = A(i, k);
                if (aik == 0.0) continue;
                for (std::size_t j = 0; j < B.cols(); ++j) {
                    out(i, j) += aik * B(k, j);
                }
            }
        }
        return push(OpKind::MatMul, {a, b}, std::move(out));
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B)) throw ArgumentError("add: shape mismatch");
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
        return push(OpKind::Add, {a, b}, std::move(out));
    }

    // Matrix [BxD] plus row vector [1xD], broadcast over rows (bias add).
    NodeId add_rowvec(NodeId m, NodeId r) {
        const Tensor& M = value(m);
        const Tensor& R = value(r);
        if (R.rows() != 1 || R.cols() != M.cols()) {
            throw ArgumentError("add_rowvec: bias shape mismatch");
        }
        Tensor out = M;
        for (std::size_t i = 0; i < M.rows(); ++i) {
            for (std::size_t j = 0; j < M.cols(); ++j) out(i, j) += R(0, j);
        }
        return push(OpKind::AddRowVec, {m, r}, std::move(out));
    }

    NodeId affine(NodeId a, double scale, double shift) {
        Tensor out = value(a);
        for (double& v : out.data()) v = scale * v + shift;
        NodeId id = push(OpKind::Affine, {a}, std::move(out));
        nodes_[id].aux_a = scale;
        return id;
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B)) throw ArgumentError("mul: shape mismatch");
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
        return push(OpKind::Mul, {a, b}, std::move(out));
    }

    NodeId div(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (!A.same_shape(B)) throw ArgumentError("div: shape mismatch");
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= B[i];
        return push(OpKind::Div, {a, b}, std::move(out));
    }

    // out[b][j] = a[b][j] * s[b]; s is a Bx1 column.
    NodeId col_scale(NodeId a, NodeId s) {
        const Tensor& A = value(a);
        const Tensor& S = value(s);
        if (S.cols() != 1 || S.rows() != A.rows()) {
            throw ArgumentError("col_scale: scale must be a Bx1 column matching a");
        }
        Tensor out = A;
        for (std::size_t i = 0; i < A.rows(); ++i) {
            for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) *= S(i, 0);
        }
        return push(OpKind::ColScale, {a, s}, std::move(out));
    }

    NodeId relu(NodeId a) {
        Tensor out = value(a);
        for (double& v : out.data()) {
            const double m = std::fabs(v);
            if (m < min_relu_abs_) min_relu_abs_ = m;
            if (v < 0.0) v = 0.0;
        }
        return push(OpKind::Relu, {a}, std::move(out));
    }

    NodeId sigmoid(NodeId a) {
        Tensor out = value(a);
        for (double& v : out.data()) v = stable_sigmoid(v);
        return push(OpKind::Sigmoid, {a}, std::move(out));
    }

    // Row-wise softmax with temperature, max-shifted for stability.
    NodeId softmax_rows(NodeId a, double tau) {
        if (tau <= 0.0) throw ArgumentError("softmax: tau must be positive");
        const Tensor& A = value(a);
        Tensor out(A.rows(), A.cols());
        for (std::size_t i = 0; i < A.rows(); ++i) {
            double mx = A(i, 0);
            for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, A(i, j));
            double denom = 0.0;
            for (std::size_t j = 0; j < A.cols(); ++j) {
                out(i, j) = std::exp((A(i, j) - mx) / tau);
                denom += out(i, j);
            }
            for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) /= denom;
        }
        NodeId id = push(OpKind::SoftmaxRows, {a}, std::move(out));
        nodes_[id].aux_a = tau;
        return id;
    }

    NodeId log_clamped(NodeId a, double eps = 1e-12) {
        const Tensor& A = value(a);
        Tensor out = A;
        for (double& v : out.data()) v = std::log(std::max(v, eps));
        NodeId id = push(OpKind::LogClamped, {a}, std::move(out));
        nodes_[id].aux_a = eps;
        return id;
    }

    // Embedding lookup: rows of `table` selected by `idx`, output [B x d].
    NodeId gather(NodeId table, std::vector<std::size_t> idx) {
        const Tensor& T = value(table);
        Tensor out(idx.size(), T.cols());
        for (std::size_t b = 0; b < idx.size(); ++b) {
            if (idx[b] >= T.rows()) throw ArgumentError("gather: index out of bounds");
            for (std::size_t j = 0; j < T.cols(); ++j) out(b, j) = T(idx[b], j);
        }
        NodeId id = push(OpKind::Gather, {table}, std::move(out));
        nodes_[id].indices = std::move(idx);
        return id;
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rows() != B.rows()) throw ArgumentError("concat_cols: row count mismatch");
        Tensor out(A.rows(), A.cols() + B.cols());
        for (std::size_t i = 0; i < A.rows(); ++i) {
            for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) = A(i, j);
            for (std::size_t j = 0; j < B.cols(); ++j) out(i, A.cols() + j) = B(i, j);
        }
        return push(OpKind::ConcatCols, {a, b}, std::move(out));
    }

    // [BxK] -> [Bx1]
    NodeId rowsum(NodeId a) {
        const Tensor& A = value(a);
        Tensor out(A.rows(), 1);
        for (std::size_t i = 0; i < A.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < A.cols(); ++j) s += A(i, j);
            out(i, 0) = s;
        }
        return push(OpKind::RowSum, {a}, std::move(out));
    }

    // Total sum -> [1x1]
    NodeId sum(NodeId a) {
        const Tensor& A = value(a);
        double s = 0.0;
        for (double v : A.data()) s += v;
        return push(OpKind::Sum, {a}, Tensor(1, 1, {s}));
    }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
    const std::vector<NodeId>& parameters() const { return param_ids_; }
    std::size_t node_count() const { return nodes_.size(); }

    // Smallest |x| seen at any relu input so far; kink-proximity indicator.
    double min_relu_abs() const { return min_relu_abs_; }

    // Populates grad tensors for every node; loss must be a 1x1 node.
    void backward(NodeId loss) {
        if (value(loss).size() != 1) {
            throw ArgumentError("backward: loss node must be scalar");
        }
        for (auto& n : nodes_) {
            n.grad = Tensor(n.value.rows(), n.value.cols());
        }
        nodes_[loss].grad[0] = 1.0;
        for (NodeId id = loss; id >= 0; --id) {
            backward_one(id);
        }
    }

private:
    struct Node {
        OpKind op;
        std::vector<NodeId> inputs;
        Tensor value;
        Tensor grad;
        double aux_a = 0.0;                 // tau / scale / eps depending on op
        std::vector<std::size_t> indices;   // gather only
    };

    NodeId push(OpKind op, std::vector<NodeId> inputs, Tensor v) {
        if (!v.all_finite()) {
            throw NumericError(std::string("non-finite output at node ") +
                               std::to_string(nodes_.size()) + " (" + op_name(op) + ")");
        }
        nodes_.push_back(Node{op, std::move(inputs), std::move(v), Tensor()});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void backward_one(NodeId id) {
        Node& n = nodes_[id];
        const Tensor& g = n.grad;
        switch (n.op) {
            case OpKind::Constant:
            case OpKind::Parameter:
                break;
            case OpKind::MatMul: {
                const Tensor& A = nodes_[n.inputs[0]].value;
                const Tensor& B = nodes_[n.inputs[1]].value;
                Tensor& gA = nodes_[n.inputs[0]].grad;
                Tensor& gB = nodes_[n.inputs[1]].grad;
                // gA += g * B^T
                for (std::size_t i = 0; i < A.rows(); ++i) {
                    for (std::size_t j = 0; j < B.cols(); ++j) {
                        const double gij = g(i, j);
                        if (gij == 0.0) continue;
                        for (std::size_t k = 0; k < A.cols(); ++k) {
                            gA(i, k) += gij * B(k, j);
                        }
                    }
                }
                // gB += A^T * g
                for (std::size_t i = 0; i < A.rows(); ++i) {
                    for (std::size_t k = 0; k < A.cols(); ++k) {
                        const double aik = A(i, k);
                        if (aik == 0.0) continue;
                        for (std::size_t j = 0; j < B.cols(); ++j) {
                            gB(k, j) += aik * g(i, j);
                        }
                    }
                }
                break;
            }
            case OpKind::Add: {
                accumulate(n.inputs[0], g);
                accumulate(n.inputs[1], g);
                break;
            }
            case OpKind::AddRowVec: {
                accumulate(n.inputs[0], g);
                Tensor& gR = nodes_[n.inputs[1]].grad;
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    for (std::size_t j = 0; j < g.cols(); ++j) gR(0, j) += g(i, j);
                }
                break;
            }
            case OpKind::Affine: {
                Tensor& gA = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += n.aux_a * g[i];
                break;
            }
            case OpKind::Mul: {
                const Tensor& A = nodes_[n.inputs[0]].value;
                const Tensor& B = nodes_[n.inputs[1]].value;
                Tensor& gA = nodes_[n.inputs[0]].grad;
                Tensor& gB = nodes_[n.inputs[1]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gA[i] += g[i] * B[i];
                    gB[i] += g[i] * A[i];
                }
                break;
            }
            case OpKind::Div: {
                const Tensor& A = nodes_[n.inputs[0]].value;
                const Tensor& B = nodes_[n.inputs[1]].value;
                Tensor& gA = nodes_[n.inputs[0]].grad;
                Tensor& gB = nodes_[n.inputs[1]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gA[i] += g[i] / B[i];
                    gB[i] -= g[i] * A[i] / (B[i] * B[i]);
                }
                break;
            }
            case OpKind::ColScale: {
                const Tensor& A = nodes_[n.inputs[0]].value;
                const Tensor& S = nodes_[n.inputs[1]].value;
                Tensor& gA = nodes_[n.inputs[0]].grad;
                Tensor& gS = nodes_[n.inputs[1]].grad;
                for (std::size_t i = 0; i < A.rows(); ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < A.cols(); ++j) {
                        gA(i, j) += g(i, j) * S(i, 0);
                        acc += g(i, j) * A(i, j);
                    }
                    gS(i, 0) += acc;
                }
                break;
            }
            case OpKind::Relu: {
                const Tensor& X = nodes_[n.inputs[0]].value;
                Tensor& gX = nodes_[n.inputs[0]].grad;
                // Subgradient 0 at exactly 0.
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (X[i] > 0.0) gX[i] += g[i];
                }
                break;
            }
            case OpKind::Sigmoid: {
                Tensor& gX = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double s = n.value[i];
                    gX[i] += g[i] * s * (1.0 - s);
                }
                break;
            }
            case OpKind::SoftmaxRows: {
                const double tau = n.aux_a;
                Tensor& gX = nodes_[n.inputs[0]].grad;
                const Tensor& P = n.value;
                for (std::size_t i = 0; i < P.rows(); ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < P.cols(); ++j) dot += g(i, j) * P(i, j);
                    for (std::size_t j = 0; j < P.cols(); ++j) {
                        gX(i, j) += P(i, j) * (g(i, j) - dot) / tau;
                    }
                }
                break;
            }
            case OpKind::LogClamped: {
                const double eps = n.aux_a;
                const Tensor& X = nodes_[n.inputs[0]].value;
                Tensor& gX = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (X[i] > eps) gX[i] += g[i] / X[i];
                }
                break;
            }
            case OpKind::Gather: {
                Tensor& gT = nodes_[n.inputs[0]].grad;
                for (std::size_t b = 0; b < n.indices.size(); ++b) {
                    for (std::size_t j = 0; j < g.cols(); ++j) {
                        gT(n.indices[b], j) += g(b, j);
                    }
                }
                break;
            }
            case OpKind::ConcatCols: {
                Tensor& gA = nodes_[n.inputs[0]].grad;
                Tensor& gB = nodes_[n.inputs[1]].grad;
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    for (std::size_t j = 0; j < gA.cols(); ++j) gA(i, j) += g(i, j);
                    for (std::size_t j = 0; j < gB.cols(); ++j) {
                        gB(i, j) += g(i, gA.cols() + j);
                    }
                }
                break;
            }
            case OpKind::RowSum: {
                Tensor& gA = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < gA.rows(); ++i) {
                    for (std::size_t j = 0; j < gA.cols(); ++j) gA(i, j) += g(i, 0);
                }
                break;
            }
            case OpKind::Sum: {
                Tensor& gA = nodes_[n.inputs[0]].grad;
                for (std::size_t i = 0; i < gA.size(); ++i) gA[i] += g[0];
                break;
            }
        }
    }

    void accumulate(NodeId id, const Tensor& g) {
        Tensor& dst = nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }

    // Deque keeps value()/grad() references valid while new nodes are pushed.
    std::deque<Node> nodes_;
    std::vector<NodeId> param_ids_;
    double min_relu_abs_ = 1e300;
};

// ---------------------------------------------------------------------------
// Central finite differences against analytic gradients.

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;
    bool pass = true;
};

// `loss_fn` evaluates the scalar loss from a full parameter list. A coordinate
// that fails at step h is re-probed at h/16; only a consistent failure counts.
// This excludes coordinates whose probe interval straddles a ReLU kink.
// `exclude` may mark known-kink coordinates (tensor index, flat coordinate).
inline FiniteDiffReport finite_diff_check(
    const std::function<double(const std::vector<Tensor>&)>& loss_fn,
    std::vector<Tensor> params, const std::vector<Tensor>& analytic,
    double h, double rel_tol,
    const std::function<bool(std::size_t, std::size_t)>& exclude = nullptr) {
    if (h <= 0.0) throw ArgumentError("finite_diff_check: h must be positive");
    FiniteDiffReport report;
    auto probe = [&](std::size_t t, std::size_t i, double step) {
        const double saved = params[t][i];
        params[t][i] = saved + step;
        const double lp = loss_fn(params);
        params[t][i] = saved - step;
        const double lm = loss_fn(params);
        params[t][i] = saved;
        return (lp - lm) / (2.0 * step);
    };
    auto rel_err = [](double a, double n) {
        const double denom = std::max({std::fabs(a), std::fabs(n), 1e-8});
        return std::fabs(a - n) / denom;
    };
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].size(); ++i) {
            if (exclude && exclude(t, i)) {
                ++report.excluded;
                continue;
            }
            const double a = analytic[t][i];
            double err = rel_err(a, probe(t, i, h));
            if (err > rel_tol) {
                const double err2 = rel_err(a, probe(t, i, h / 16.0));
                if (err2 <= rel_tol) {
                    ++report.excluded;
                    continue;
                }
                err = std::min(err, err2);
            }
            ++report.checked;
            report.max_rel_err = std::max(report.max_rel_err, err);
            if (err > rel_tol) report.pass = false;
        }
    }
    return report;
}

}  // namespace lipreg
