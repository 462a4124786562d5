#pragma once

#include <algorithm>
#include <array>
#include <deque>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtnag/tensor.hpp"

namespace rtnag {

enum class Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale,      // c * x
    AddC,       // x + c
    MulScalar,  // x (*) s, s has numel 1
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Sqrt,
    ClampMin,   // max(x, c)
    Sum,
    Matmul,
    Transpose,
    SoftmaxRows,
    Conv3d,
    MaxPool3d,
    Conv1d,
    Cholesky,
    Gather,
    Scatter,
    Concat,
    Reshape,
    MulRowwise,
    AddRowwise,
};

struct Var {
    class Tape* tp = nullptr;
    int id = -1;
    bool valid() const { return tp != nullptr && id >= 0; }
};

// Reverse-mode tape. One tape per forward/backward pass; nodes are appended in
// evaluation order, so the node index order is already topological.
class Tape {
public:
    const Tensor& val(Var v) const { return nodes_[check(v)].val; }

    // Gradient of the last backward() root w.r.t. v. Zero tensor if v did not
    // participate.
    Tensor grad(Var v) const {
        const Node& n = nodes_[check(v)];
        if (n.grad.empty()) return Tensor::zeros(n.val.shape);
        return Tensor(n.val.shape, n.grad);
    }

    int size() const { return static_cast<int>(nodes_.size()); }

    void clear() { nodes_.clear(); }

    // Test hook: multiplies the upstream gradient of every node with the given
    // op during backward. Used by the fault-injection negative control.
    void set_backward_fault(Op op, double scale) {
        fault_op_ = op;
        fault_scale_ = scale;
        fault_armed_ = true;
    }

    Var leaf(Tensor t, bool requires_grad = false) {
        Node n;
        n.op = Op::Leaf;
        n.val = std::move(t);
        n.rg = requires_grad;
        return push(std::move(n));
    }

    Var constant(Tensor t) { return leaf(std::move(t), false); }
    Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

    // ---- elementwise binary ----

    Var add(Var a, Var b) { return ew_binary(Op::Add, a, b); }
    Var sub(Var a, Var b) { return ew_binary(Op::Sub, a, b); }
    Var mul(Var a, Var b) { return ew_binary(Op::Mul, a, b); }
    Var div(Var a, Var b) { return ew_binary(Op::Div, a, b); }

    Var scale(Var a, double c) {
        Node n = unary_node(Op::Scale, a);
        n.c0 = c;
        for (double& v : n.val.data) v *= c;
        return push(std::move(n));
    }

    Var add_const(Var a, double c) {
        Node n = unary_node(Op::AddC, a);
        n.c0 = c;
        for (double& v : n.val.data) v += c;
        return push(std::move(n));
    }

    Var mul_scalar(Var a, Var s) {
        if (val(s).numel() != 1)
            throw std::invalid_argument("mul_scalar: scalar operand has shape " +
                                        Tensor::shape_str(val(s).shape));
        Node n = unary_node(Op::MulScalar, a);
        n.b = s.id;
        double sv = val(s).data[0];
        for (double& v : n.val.data) v *= sv;
        n.rg = n.rg || nodes_[s.id].rg;
        return push(std::move(n));
    }

    // ---- elementwise unary ----

    Var relu(Var a) {
        Node n = unary_node(Op::Relu, a);
        for (double& v : n.val.data) v = v > 0.0 ? v : 0.0;
        return push(std::move(n));
    }

    Var tanh(Var a) {
        Node n = unary_node(Op::Tanh, a);
        for (double& v : n.val.data) v = std::tanh(v);
        return push(std::move(n));
    }

    Var sigmoid(Var a) {
        Node n = unary_node(Op::Sigmoid, a);
        for (double& v : n.val.data) v = sigmoid_stable(v);
        return push(std::move(n));
    }

    Var softplus(Var a) {
        Node n = unary_node(Op::Softplus, a);
        for (double& v : n.val.data) v = softplus_stable(v);
        return push(std::move(n));
    }

    Var exp(Var a) {
        Node n = unary_node(Op::Exp, a);
        for (double& v : n.val.data) v = std::exp(v);
        return push(std::move(n));
    }

    Var log(Var a) {
        Node n = unary_node(Op::Log, a);
        for (size_t i = 0; i < n.val.data.size(); ++i) {
            if (n.val.data[i] <= 0.0)
                throw std::domain_error("log: non-positive entry " +
                                        std::to_string(n.val.data[i]) + " at index " +
                                        std::to_string(i));
            n.val.data[i] = std::log(n.val.data[i]);
        }
        return push(std::move(n));
    }

    Var sqrt(Var a) {
        Node n = unary_node(Op::Sqrt, a);
        for (double& v : n.val.data) v = std::sqrt(v);
        return push(std::move(n));
    }

    Var clamp_min(Var a, double floor) {
        Node n = unary_node(Op::ClampMin, a);
        n.c0 = floor;
        for (double& v : n.val.data) v = std::max(v, floor);
        return push(std::move(n));
    }

    // ---- reductions ----

    Var sum(Var a) {
        Node n;
        n.op = Op::Sum;
        n.a = a.id;
        n.rg = nodes_[a.id].rg;
        double s = 0.0;
        for (double v : val(a).data) s += v;
        n.val = Tensor::scalar(s);
        return push(std::move(n));
    }

    Var mean(Var a) {
        int m = val(a).numel();
        return scale(sum(a), 1.0 / m);
    }

    // ---- linear algebra ----

    // A [m x k] times B [k x n] -> [m x n]; B may be 1-D [k] giving [m].
    Var matmul(Var av, Var bv) {
        const Tensor& A = val(av);
        const Tensor& B = val(bv);
        bool bvec = B.ndim() == 1;
        if (A.ndim() != 2 || (B.ndim() != 2 && !bvec))
            throw std::invalid_argument("matmul: need 2-D lhs and 1/2-D rhs, got " +
                                        Tensor::shape_str(A.shape) + " and " +
                                        Tensor::shape_str(B.shape));
        int m = A.rows(), k = A.cols();
        int kb = bvec ? B.shape[0] : B.rows();
        int nn = bvec ? 1 : B.cols();
        if (k != kb)
            throw std::invalid_argument("matmul: inner extents disagree, " +
                                        Tensor::shape_str(A.shape) + " vs " +
                                        Tensor::shape_str(B.shape));
        Node n;
        n.op = Op::Matmul;
        n.a = av.id;
        n.b = bv.id;
        n.rg = nodes_[av.id].rg || nodes_[bv.id].rg;
        n.val = bvec ? Tensor::zeros({m}) : Tensor::zeros({m, nn});
        for (int i = 0; i < m; ++i) {
            const double* arow = &A.data[static_cast<size_t>(i) * k];
            double* orow = &n.val.data[static_cast<size_t>(i) * nn];
            for (int l = 0; l < k; ++l) {
                double a = arow[l];
                if (a == 0.0) continue;
                const double* brow = &B.data[static_cast<size_t>(l) * nn];
                for (int j = 0; j < nn; ++j) orow[j] += a * brow[j];
            }
        }
        return push(std::move(n));
    }

    Var transpose(Var av) {
        const Tensor& A = val(av);
        if (A.ndim() != 2)
            throw std::invalid_argument("transpose: need 2-D, got " + Tensor::shape_str(A.shape));
        Node n;
        n.op = Op::Transpose;
        n.a = av.id;
        n.rg = nodes_[av.id].rg;
        int m = A.rows(), k = A.cols();
        n.val = Tensor::zeros({k, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) n.val.at(j, i) = A.at(i, j);
        return push(std::move(n));
    }

    // Row-wise softmax with row-max subtraction.
    Var softmax_rows(Var av) {
        const Tensor& A = val(av);
        if (A.ndim() != 2)
            throw std::invalid_argument("softmax_rows: need 2-D, got " +
                                        Tensor::shape_str(A.shape));
        Node n = unary_node(Op::SoftmaxRows, av);
        int m = A.rows(), k = A.cols();
        for (int i = 0; i < m; ++i) {
            double* row = &n.val.data[static_cast<size_t>(i) * k];
            double mx = row[0];
            for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            double s = 0.0;
            for (int j = 0; j < k; ++j) {
                row[j] = std::exp(row[j] - mx);
                s += row[j];
            }
            for (int j = 0; j < k; ++j) row[j] /= s;
        }
        return push(std::move(n));
    }

    // Cholesky factor of a symmetric positive definite matrix. The input is
    // symmetrized before factoring and the backward pass returns the
    // symmetrized adjoint, so entrywise finite differences agree.
    Var cholesky(Var av) {
        const Tensor& A = val(av);
        if (A.ndim() != 2 || A.rows() != A.cols())
            throw std::invalid_argument("cholesky: need square matrix, got " +
                                        Tensor::shape_str(A.shape));
        int nn = A.rows();
        // inputs are treated as exactly symmetric; the loose threshold leaves
        // room for finite-difference probes while rejecting gross misuse
        double asym = 0.0;
        for (int i = 0; i < nn; ++i)
            for (int j = 0; j < i; ++j) asym = std::max(asym, std::fabs(A.at(i, j) - A.at(j, i)));
        if (asym > 1e-4)
            throw std::invalid_argument("cholesky: input not symmetric, max asymmetry " +
                                        std::to_string(asym));
        Node n;
        n.op = Op::Cholesky;
        n.a = av.id;
        n.rg = nodes_[av.id].rg;
        n.val = Tensor::zeros({nn, nn});
        Tensor& L = n.val;
        for (int j = 0; j < nn; ++j) {
            double d = A.at(j, j);
            for (int k = 0; k < j; ++k) d -= L.at(j, k) * L.at(j, k);
            if (d <= 0.0)
                throw std::domain_error("cholesky: not positive definite at pivot " +
                                        std::to_string(j));
            L.at(j, j) = std::sqrt(d);
            for (int i = j + 1; i < nn; ++i) {
                double s = 0.5 * (A.at(i, j) + A.at(j, i));
                for (int k = 0; k < j; ++k) s -= L.at(i, k) * L.at(j, k);
                L.at(i, j) = s / L.at(j, j);
            }
        }
        return push(std::move(n));
    }

    // ---- convolution / pooling ----

    // input [Cin x D x H x W], kernels [Cout x Cin x 3 x 3 x 3]; stride 1,
    // zero padding 1, cross-correlation semantics.
    Var conv3d(Var iv, Var kv) {
        const Tensor& X = val(iv);
        const Tensor& K = val(kv);
        if (X.ndim() != 4)
            throw std::invalid_argument("conv3d: input must be 4-D, got " +
                                        Tensor::shape_str(X.shape));
        if (K.ndim() != 5 || K.shape[2] != 3 || K.shape[3] != 3 || K.shape[4] != 3)
            throw std::invalid_argument("conv3d: kernels must be [Cout x Cin x 3 x 3 x 3], got " +
                                        Tensor::shape_str(K.shape));
        if (K.shape[1] != X.shape[0])
            throw std::invalid_argument("conv3d: channel mismatch, input " +
                                        Tensor::shape_str(X.shape) + " kernels " +
                                        Tensor::shape_str(K.shape));
        int d = X.shape[1], h = X.shape[2], w = X.shape[3];
        int co = K.shape[0];
        Node n;
        n.op = Op::Conv3d;
        n.a = iv.id;
        n.b = kv.id;
        n.rg = nodes_[iv.id].rg || nodes_[kv.id].rg;
        n.val = Tensor::zeros({co, d, h, w});
        conv3d_forward(X, K, n.val);
        return push(std::move(n));
    }

    // 2x2x2 max pooling; even spatial extents required. Ties route to the
    // first (lowest linear index) maximum.
    Var maxpool3d(Var iv) {
        const Tensor& X = val(iv);
        if (X.ndim() != 4)
            throw std::invalid_argument("maxpool3d: input must be 4-D, got " +
                                        Tensor::shape_str(X.shape));
        int c = X.shape[0], d = X.shape[1], h = X.shape[2], w = X.shape[3];
        if (d % 2 || h % 2 || w % 2)
            throw std::invalid_argument("maxpool3d: odd spatial extent in " +
                                        Tensor::shape_str(X.shape));
        Node n;
        n.op = Op::MaxPool3d;
        n.a = iv.id;
        n.rg = nodes_[iv.id].rg;
        int od = d / 2, oh = h / 2, ow = w / 2;
        n.val = Tensor::zeros({c, od, oh, ow});
        n.iaux.resize(n.val.data.size());
        size_t o = 0;
        for (int cc = 0; cc < c; ++cc)
            for (int z = 0; z < od; ++z)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x, ++o) {
                        double best = -std::numeric_limits<double>::infinity();
                        int besti = -1;
                        for (int dz = 0; dz < 2; ++dz)
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx) {
                                    int idx = ((cc * d + 2 * z + dz) * h + 2 * y + dy) * w +
                                              2 * x + dx;
                                    if (X.data[static_cast<size_t>(idx)] > best) {
                                        best = X.data[static_cast<size_t>(idx)];
                                        besti = idx;
                                    }
                                }
                        n.val.data[o] = best;
                        n.iaux[o] = besti;
                    }
        return push(std::move(n));
    }

    // signal [W], kernels [Q x 3]; stride 1, zero padding 1 -> [Q x W].
    Var conv1d(Var sv, Var kv) {
        const Tensor& S = val(sv);
        const Tensor& K = val(kv);
        if (S.ndim() != 1)
            throw std::invalid_argument("conv1d: signal must be 1-D, got " +
                                        Tensor::shape_str(S.shape));
        if (K.ndim() != 2 || K.cols() != 3)
            throw std::invalid_argument("conv1d: kernels must be [Q x 3], got " +
                                        Tensor::shape_str(K.shape));
        int w = S.shape[0], q = K.rows();
        if (w < 3) throw std::invalid_argument("conv1d: signal length " + std::to_string(w) + " < 3");
        Node n;
        n.op = Op::Conv1d;
        n.a = sv.id;
        n.b = kv.id;
        n.rg = nodes_[sv.id].rg || nodes_[kv.id].rg;
        n.val = Tensor::zeros({q, w});
        for (int o = 0; o < q; ++o)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int t = -1; t <= 1; ++t) {
                    int xx = x + t;
                    if (xx < 0 || xx >= w) continue;
                    acc += K.at(o, t + 1) * S.data[static_cast<size_t>(xx)];
                }
                n.val.at(o, x) = acc;
            }
        return push(std::move(n));
    }

    // ---- structural ----

    // out[i] = in.flat[idx[i]]
    Var gather(Var av, std::shared_ptr<const std::vector<int>> idx) {
        const Tensor& A = val(av);
        Node n;
        n.op = Op::Gather;
        n.a = av.id;
        n.rg = nodes_[av.id].rg;
        n.idx = std::move(idx);
        n.val = Tensor::zeros({static_cast<int>(n.idx->size())});
        for (size_t i = 0; i < n.idx->size(); ++i) {
            int j = (*n.idx)[i];
            if (j < 0 || j >= A.numel())
                throw std::out_of_range("gather: index " + std::to_string(j) + " out of range");
            n.val.data[i] = A.data[static_cast<size_t>(j)];
        }
        return push(std::move(n));
    }

    // out.flat[idx[i]] = in[i], everything else zero. Indices must be unique.
    Var scatter(Var av, std::shared_ptr<const std::vector<int>> idx, std::vector<int> out_shape) {
        const Tensor& A = val(av);
        if (A.numel() != static_cast<int>(idx->size()))
            throw std::invalid_argument("scatter: value count " + std::to_string(A.numel()) +
                                        " != index count " + std::to_string(idx->size()));
        Node n;
        n.op = Op::Scatter;
        n.a = av.id;
        n.rg = nodes_[av.id].rg;
        n.idx = std::move(idx);
        n.val = Tensor::zeros(std::move(out_shape));
        for (size_t i = 0; i < n.idx->size(); ++i) {
            int j = (*n.idx)[i];
            if (j < 0 || j >= n.val.numel())
                throw std::out_of_range("scatter: index " + std::to_string(j) + " out of range");
            n.val.data[static_cast<size_t>(j)] = A.data[i];
        }
        return push(std::move(n));
    }

    // Flattening concatenation -> 1-D.
    Var concat(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat: empty input list");
        Node n;
        n.op = Op::Concat;
        n.a = parts[0].id;
        if (parts.size() > 1) n.b = parts[1].id;
        for (size_t i = 2; i < parts.size(); ++i) n.extra.push_back(parts[i].id);
        int total = 0;
        for (Var p : parts) {
            total += val(p).numel();
            n.rg = n.rg || nodes_[p.id].rg;
        }
        n.val = Tensor::zeros({total});
        int o = 0;
        for (Var p : parts)
            for (double v : val(p).data) n.val.data[static_cast<size_t>(o++)] = v;
        return push(std::move(n));
    }

    Var reshape(Var av, std::vector<int> shape) {
        const Tensor& A = val(av);
        if (Tensor::numel_of(shape) != A.numel())
            throw std::invalid_argument("reshape: cannot view " + Tensor::shape_str(A.shape) +
                                        " as " + Tensor::shape_str(shape));
        Node n;
        n.op = Op::Reshape;
        n.a = av.id;
        n.rg = nodes_[av.id].rg;
        n.val = Tensor(std::move(shape), A.data);
        return push(std::move(n));
    }

    // X [m x n] with per-row weight/bias vectors [m].
    Var mul_rowwise(Var xv, Var wv) { return rowwise(Op::MulRowwise, xv, wv); }
    Var add_rowwise(Var xv, Var bv) { return rowwise(Op::AddRowwise, xv, bv); }

    // ---- backward ----

    // Reverse sweep from a scalar root; gradients accumulate additively
    // across fan-out.
    void backward(Var root) {
        Node& r = nodes_[check(root)];
        if (r.val.numel() != 1)
            throw std::invalid_argument("backward: root must be scalar, got shape " +
                                        Tensor::shape_str(r.val.shape));
        for (Node& n : nodes_) n.grad.clear();
        ensure_grad(root.id);
        r.grad[0] = 1.0;
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.rg || n.grad.empty() || n.op == Op::Leaf) continue;
            step_backward(i);
        }
    }

private:
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1;
        std::vector<int> extra;
        double c0 = 0.0;
        Tensor val;
        std::vector<double> grad;
        std::shared_ptr<const std::vector<int>> idx;
        std::vector<int> iaux;
        bool rg = false;
    };

    // deque: appending never invalidates references to existing node values
    std::deque<Node> nodes_;
    bool fault_armed_ = false;
    Op fault_op_ = Op::Leaf;
    double fault_scale_ = 1.0;

    int check(Var v) const {
        if (v.tp != this || v.id < 0 || v.id >= size())
            throw std::invalid_argument("var does not belong to this tape");
        return v.id;
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size() - 1)};
    }

    Node unary_node(Op op, Var a) {
        Node n;
        n.op = op;
        n.a = a.id;
        n.rg = nodes_[check(a)].rg;
        n.val = val(a);
        return n;
    }

    Var ew_binary(Op op, Var av, Var bv) {
        const Tensor& A = val(av);
        const Tensor& B = val(bv);
        if (!A.same_shape(B))
            throw std::invalid_argument("elementwise op: shape mismatch " +
                                        Tensor::shape_str(A.shape) + " vs " +
                                        Tensor::shape_str(B.shape));
        Node n;
        n.op = op;
        n.a = av.id;
        n.b = bv.id;
        n.rg = nodes_[av.id].rg || nodes_[bv.id].rg;
        n.val = A;
        switch (op) {
            case Op::Add:
                for (size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] += B.data[i];
                break;
            case Op::Sub:
                for (size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] -= B.data[i];
                break;
            case Op::Mul:
                for (size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] *= B.data[i];
                break;
            case Op::Div:
                for (size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] /= B.data[i];
                break;
            default:
                throw std::logic_error("ew_binary: bad op");
        }
        return push(std::move(n));
    }

    Var rowwise(Op op, Var xv, Var wv) {
        const Tensor& X = val(xv);
        const Tensor& W = val(wv);
        if (X.ndim() != 2 || W.ndim() != 1 || W.shape[0] != X.rows())
            throw std::invalid_argument("rowwise op: need [m x n] and [m], got " +
                                        Tensor::shape_str(X.shape) + " and " +
                                        Tensor::shape_str(W.shape));
        Node n;
        n.op = op;
        n.a = xv.id;
        n.b = wv.id;
        n.rg = nodes_[xv.id].rg || nodes_[wv.id].rg;
        n.val = X;
        int m = X.rows(), k = X.cols();
        for (int i = 0; i < m; ++i) {
            double w = W.data[static_cast<size_t>(i)];
            double* row = &n.val.data[static_cast<size_t>(i) * k];
            for (int j = 0; j < k; ++j) row[j] = (op == Op::MulRowwise) ? row[j] * w : row[j] + w;
        }
        return push(std::move(n));
    }

    static double sigmoid_stable(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
    }

    static double softplus_stable(double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
    }

    static void conv3d_forward(const Tensor& X, const Tensor& K, Tensor& Y) {
        int ci = X.shape[0], d = X.shape[1], h = X.shape[2], w = X.shape[3];
        int co = K.shape[0];
        for (int oc = 0; oc < co; ++oc)
            for (int ic = 0; ic < ci; ++ic) {
                const double* kb = &K.data[(static_cast<size_t>(oc) * ci + ic) * 27];
                for (int z = 0; z < d; ++z)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) {
                            double acc = 0.0;
                            for (int dz = -1; dz <= 1; ++dz) {
                                int zz = z + dz;
                                if (zz < 0 || zz >= d) continue;
                                for (int dy = -1; dy <= 1; ++dy) {
                                    int yy = y + dy;
                                    if (yy < 0 || yy >= h) continue;
                                    for (int dx = -1; dx <= 1; ++dx) {
                                        int xx = x + dx;
                                        if (xx < 0 || xx >= w) continue;
                                        acc += kb[((dz + 1) * 3 + dy + 1) * 3 + dx + 1] *
                                               X.data[((static_cast<size_t>(ic) * d + zz) * h + yy) * w + xx];
                                    }
                                }
                            }
                            Y.data[((static_cast<size_t>(oc) * d + z) * h + y) * w + x] += acc;
                        }
            }
    }

    void ensure_grad(int i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad.empty()) n.grad.assign(n.val.data.size(), 0.0);
    }

    void step_backward(int i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        std::vector<double> gbuf;
        const std::vector<double>* gp = &n.grad;
        if (fault_armed_ && n.op == fault_op_) {
            gbuf = n.grad;
            for (double& v : gbuf) v *= fault_scale_;
            gp = &gbuf;
        }
        const std::vector<double>& g = *gp;
        Node* na = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)] : nullptr;
        Node* nb = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)] : nullptr;
        bool wa = na && na->rg;
        bool wb = nb && nb->rg;
        if (wa) ensure_grad(n.a);
        if (wb) ensure_grad(n.b);

        switch (n.op) {
            case Op::Add:
                if (wa) axpy(na->grad, g, 1.0);
                if (wb) axpy(nb->grad, g, 1.0);
                break;
            case Op::Sub:
                if (wa) axpy(na->grad, g, 1.0);
                if (wb) axpy(nb->grad, g, -1.0);
                break;
            case Op::Mul:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j) na->grad[j] += g[j] * nb->val.data[j];
                if (wb)
                    for (size_t j = 0; j < g.size(); ++j) nb->grad[j] += g[j] * na->val.data[j];
                break;
            case Op::Div:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j) na->grad[j] += g[j] / nb->val.data[j];
                if (wb)
                    for (size_t j = 0; j < g.size(); ++j)
                        nb->grad[j] -= g[j] * n.val.data[j] / nb->val.data[j];
                break;
            case Op::Scale:
                if (wa) axpy(na->grad, g, n.c0);
                break;
            case Op::AddC:
                if (wa) axpy(na->grad, g, 1.0);
                break;
            case Op::MulScalar: {
                double sv = nb->val.data[0];
                if (wa) axpy(na->grad, g, sv);
                if (wb) {
                    double acc = 0.0;
                    for (size_t j = 0; j < g.size(); ++j) acc += g[j] * na->val.data[j];
                    nb->grad[0] += acc;
                }
                break;
            }
            case Op::Relu:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j)
                        if (na->val.data[j] > 0.0) na->grad[j] += g[j];
                break;
            case Op::Tanh:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j)
                        na->grad[j] += g[j] * (1.0 - n.val.data[j] * n.val.data[j]);
                break;
            case Op::Sigmoid:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j)
                        na->grad[j] += g[j] * n.val.data[j] * (1.0 - n.val.data[j]);
                break;
            case Op::Softplus:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j)
                        na->grad[j] += g[j] * sigmoid_stable(na->val.data[j]);
                break;
            case Op::Exp:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j) na->grad[j] += g[j] * n.val.data[j];
                break;
            case Op::Log:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j) na->grad[j] += g[j] / na->val.data[j];
                break;
            case Op::Sqrt:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j)
                        na->grad[j] += g[j] * 0.5 / n.val.data[j];
                break;
            case Op::ClampMin:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j)
                        if (na->val.data[j] > n.c0) na->grad[j] += g[j];
                break;
            case Op::Sum:
                if (wa)
                    for (size_t j = 0; j < na->grad.size(); ++j) na->grad[j] += g[0];
                break;
            case Op::Matmul:
                backward_matmul(g, wa, wb, *na, *nb);
                break;
            case Op::Transpose:
                if (wa) {
                    int m = na->val.rows(), k = na->val.cols();
                    for (int r = 0; r < m; ++r)
                        for (int c = 0; c < k; ++c)
                            na->grad[static_cast<size_t>(r) * k + c] +=
                                g[static_cast<size_t>(c) * m + r];
                }
                break;
            case Op::SoftmaxRows:
                if (wa) {
                    int m = n.val.rows(), k = n.val.cols();
                    for (int r = 0; r < m; ++r) {
                        const double* y = &n.val.data[static_cast<size_t>(r) * k];
                        const double* gr = &g[static_cast<size_t>(r) * k];
                        double dot = 0.0;
                        for (int c = 0; c < k; ++c) dot += gr[c] * y[c];
                        double* da = &na->grad[static_cast<size_t>(r) * k];
                        for (int c = 0; c < k; ++c) da[c] += y[c] * (gr[c] - dot);
                    }
                }
                break;
            case Op::Cholesky:
                if (wa) backward_cholesky(n, g, *na);
                break;
            case Op::Conv3d:
                backward_conv3d(g, wa, wb, *na, *nb);
                break;
            case Op::MaxPool3d:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j)
                        na->grad[static_cast<size_t>(n.iaux[j])] += g[j];
                break;
            case Op::Conv1d:
                backward_conv1d(g, wa, wb, *na, *nb);
                break;
            case Op::Gather:
                if (wa)
                    for (size_t j = 0; j < g.size(); ++j)
                        na->grad[static_cast<size_t>((*n.idx)[j])] += g[j];
                break;
            case Op::Scatter:
                if (wa)
                    for (size_t j = 0; j < n.idx->size(); ++j)
                        na->grad[j] += g[static_cast<size_t>((*n.idx)[j])];
                break;
            case Op::Concat: {
                size_t o = 0;
                auto feed = [&](int id) {
                    Node& p = nodes_[static_cast<size_t>(id)];
                    size_t m = p.val.data.size();
                    if (p.rg) {
                        ensure_grad(id);
                        for (size_t j = 0; j < m; ++j)
                            nodes_[static_cast<size_t>(id)].grad[j] += g[o + j];
                    }
                    o += m;
                };
                feed(n.a);
                if (n.b >= 0) feed(n.b);
                for (int id : n.extra) feed(id);
                break;
            }
            case Op::Reshape:
                if (wa) axpy(na->grad, g, 1.0);
                break;
            case Op::MulRowwise: {
                int m = n.val.rows(), k = n.val.cols();
                for (int r = 0; r < m; ++r) {
                    double w = nb->val.data[static_cast<size_t>(r)];
                    const double* gr = &g[static_cast<size_t>(r) * k];
                    if (wa) {
                        double* da = &na->grad[static_cast<size_t>(r) * k];
                        for (int c = 0; c < k; ++c) da[c] += gr[c] * w;
                    }
                    if (wb) {
                        const double* xr = &na->val.data[static_cast<size_t>(r) * k];
                        double acc = 0.0;
                        for (int c = 0; c < k; ++c) acc += gr[c] * xr[c];
                        nb->grad[static_cast<size_t>(r)] += acc;
                    }
                }
                break;
            }
            case Op::AddRowwise: {
                int m = n.val.rows(), k = n.val.cols();
                for (int r = 0; r < m; ++r) {
                    const double* gr = &g[static_cast<size_t>(r) * k];
                    if (wa) {
                        double* da = &na->grad[static_cast<size_t>(r) * k];
                        for (int c = 0; c < k; ++c) da[c] += gr[c];
                    }
                    if (wb) {
                        double acc = 0.0;
                        for (int c = 0; c < k; ++c) acc += gr[c];
                        nb->grad[static_cast<size_t>(r)] += acc;
                    }
                }
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    static void axpy(std::vector<double>& y, const std::vector<double>& x, double a) {
        for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
    }

    void backward_matmul(const std::vector<double>& g, bool wa, bool wb, Node& na,
                         Node& nb) {
        const Tensor& A = na.val;
        const Tensor& B = nb.val;
        bool bvec = B.ndim() == 1;
        int m = A.rows(), k = A.cols();
        int nn = bvec ? 1 : B.cols();
        if (wa) {
            // dA = g * B^T
            for (int i = 0; i < m; ++i)
                for (int l = 0; l < k; ++l) {
                    double acc = 0.0;
                    const double* gi = &g[static_cast<size_t>(i) * nn];
                    const double* bl = &B.data[static_cast<size_t>(l) * nn];
                    for (int j = 0; j < nn; ++j) acc += gi[j] * bl[j];
                    na.grad[static_cast<size_t>(i) * k + l] += acc;
                }
        }
        if (wb) {
            // dB = A^T * g
            for (int l = 0; l < k; ++l)
                for (int j = 0; j < nn; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i)
                        acc += A.data[static_cast<size_t>(i) * k + l] *
                               g[static_cast<size_t>(i) * nn + j];
                    nb.grad[static_cast<size_t>(l) * nn + j] += acc;
                }
        }
    }

    // Reverse rule via the triangular differential identity:
    //   T = L^-T Phi(L^T G) L^-1,  dA = (T + T^T) / 2
    // with Phi keeping the lower triangle and halving the diagonal.
    void backward_cholesky(Node& n, const std::vector<double>& g, Node& na) {
        const Tensor& L = n.val;
        int nn = L.rows();
        auto idx = [nn](int i, int j) { return static_cast<size_t>(i) * nn + j; };
        // P = Phi(L^T * G)
        std::vector<double> P(static_cast<size_t>(nn) * nn, 0.0);
        for (int i = 0; i < nn; ++i)
            for (int j = 0; j <= i; ++j) {
                double acc = 0.0;
                for (int k = std::max(i, j); k < nn; ++k)
                    acc += L.data[idx(k, i)] * g[idx(k, j)];
                P[idx(i, j)] = (i == j) ? 0.5 * acc : acc;
            }
        // X = L^-T P  (solve L^T X = P column by column)
        std::vector<double> X(static_cast<size_t>(nn) * nn, 0.0);
        for (int c = 0; c < nn; ++c)
            for (int i = nn - 1; i >= 0; --i) {
                double acc = P[idx(i, c)];
                for (int k = i + 1; k < nn; ++k) acc -= L.data[idx(k, i)] * X[idx(k, c)];
                X[idx(i, c)] = acc / L.data[idx(i, i)];
            }
        // T = X L^-1  (solve T L = X row by row, i.e. L^T t_r = x_r)
        std::vector<double> T(static_cast<size_t>(nn) * nn, 0.0);
        for (int r = 0; r < nn; ++r)
            for (int i = nn - 1; i >= 0; --i) {
                double acc = X[idx(r, i)];
                for (int k = i + 1; k < nn; ++k) acc -= L.data[idx(k, i)] * T[idx(r, k)];
                T[idx(r, i)] = acc / L.data[idx(i, i)];
            }
        for (int i = 0; i < nn; ++i)
            for (int j = 0; j < nn; ++j)
                na.grad[idx(i, j)] += 0.5 * (T[idx(i, j)] + T[idx(j, i)]);
    }

    void backward_conv3d(const std::vector<double>& g, bool wa, bool wb, Node& na,
                         Node& nb) {
        const Tensor& X = na.val;
        const Tensor& K = nb.val;
        int ci = X.shape[0], d = X.shape[1], h = X.shape[2], w = X.shape[3];
        int co = K.shape[0];
        for (int oc = 0; oc < co; ++oc)
            for (int ic = 0; ic < ci; ++ic) {
                const double* kb = &K.data[(static_cast<size_t>(oc) * ci + ic) * 27];
                double* kg = wb ? &nb.grad[(static_cast<size_t>(oc) * ci + ic) * 27] : nullptr;
                for (int z = 0; z < d; ++z)
                    for (int y = 0; y < h; ++y)
                        for (int x = 0; x < w; ++x) {
                            double go = g[((static_cast<size_t>(oc) * d + z) * h + y) * w + x];
                            if (go == 0.0) continue;
                            for (int dz = -1; dz <= 1; ++dz) {
                                int zz = z + dz;
                                if (zz < 0 || zz >= d) continue;
                                for (int dy = -1; dy <= 1; ++dy) {
                                    int yy = y + dy;
                                    if (yy < 0 || yy >= h) continue;
                                    for (int dx = -1; dx <= 1; ++dx) {
                                        int xx = x + dx;
                                        if (xx < 0 || xx >= w) continue;
                                        size_t xi = ((static_cast<size_t>(ic) * d + zz) * h + yy) * w + xx;
                                        int ki = ((dz + 1) * 3 + dy + 1) * 3 + dx + 1;
                                        if (wa) na.grad[xi] += go * kb[ki];
                                        if (kg) kg[ki] += go * X.data[xi];
                                    }
                                }
                            }
                        }
            }
    }

    void backward_conv1d(const std::vector<double>& g, bool wa, bool wb, Node& na,
                         Node& nb) {
        const Tensor& S = na.val;
        const Tensor& K = nb.val;
        int w = S.shape[0], q = K.rows();
        for (int o = 0; o < q; ++o)
            for (int x = 0; x < w; ++x) {
                double go = g[static_cast<size_t>(o) * w + x];
                if (go == 0.0) continue;
                for (int t = -1; t <= 1; ++t) {
                    int xx = x + t;
                    if (xx < 0 || xx >= w) continue;
                    if (wa) na.grad[static_cast<size_t>(xx)] += go * K.at(o, t + 1);
                    if (wb)
                        nb.grad[static_cast<size_t>(o) * 3 + t + 1] +=
                            go * S.data[static_cast<size_t>(xx)];
                }
            }
    }
};

// ---- free-function sugar over Var ----

inline Var operator+(Var a, Var b) { return a.tp->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tp->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tp->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tp->div(a, b); }
inline Var operator*(double c, Var a) { return a.tp->scale(a, c); }
inline Var operator*(Var a, double c) { return a.tp->scale(a, c); }
inline Var operator+(Var a, double c) { return a.tp->add_const(a, c); }
inline Var operator-(Var a, double c) { return a.tp->add_const(a, -c); }

} // namespace rtnag
