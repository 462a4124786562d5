#pragma once

#include <memory>
#include <vector>

#include "rtnag/rng.hpp"
#include "rtnag/tape.hpp"
#include "rtnag/tensor.hpp"

namespace rtnag {

inline Var affine(Var w, Var x, Var b) { return w.tp->matmul(w, x) + b; }

inline Var softmax_vec(Var logits) {
    Tape& tp = *logits.tp;
    int n = tp.val(logits).numel();
    return tp.reshape(tp.softmax_rows(tp.reshape(logits, {1, n})), {n});
}

inline Var pick(Var v, int i) {
    return v.tp->gather(v, std::make_shared<const std::vector<int>>(std::vector<int>{i}));
}

// Channel-bias add for [C x D x H x W] maps.
inline Var add_channel_bias(Var x, Var b) {
    Tape& tp = *x.tp;
    const auto& s = tp.val(x).shape;
    int c = s[0];
    int vol = tp.val(x).numel() / c;
    return tp.reshape(tp.add_rowwise(tp.reshape(x, {c, vol}), b), s);
}

inline Tensor randn(std::vector<int> shape, double std, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, std);
    return t;
}

// (1/w) (X - xbar)(X - xbar)^T + ridge I over the rows of X, composed from
// tape primitives so it stays differentiable. The ridge keeps the result
// positive definite even when w < c.
inline Var covariance_rows(Var x, double ridge) {
    Tape& tp = *x.tp;
    const Tensor& t = tp.val(x);
    if (t.ndim() != 2 || t.cols() < 1)
        throw std::invalid_argument("covariance_rows: need [c x w], got " +
                                    Tensor::shape_str(t.shape));
    if (!(ridge > 0.0)) throw std::invalid_argument("covariance_rows: ridge must be > 0");
    int c = t.rows(), w = t.cols();
    Var mean = tp.matmul(x, tp.constant(Tensor::full({w}, 1.0 / w)));
    Var mean_mat = tp.matmul(tp.reshape(mean, {c, 1}), tp.constant(Tensor::full({1, w}, 1.0)));
    Var centered = x - mean_mat;
    Var cov = tp.scale(tp.matmul(centered, tp.transpose(centered)), 1.0 / w);
    Tensor ridge_eye = Tensor::identity(c);
    for (double& v : ridge_eye.data) v *= ridge;
    return cov + tp.constant(ridge_eye);
}

} // namespace rtnag
