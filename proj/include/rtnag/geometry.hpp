#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <vector>

#include "rtnag/tape.hpp"
#include "rtnag/tensor.hpp"

// Geometry of the Cholesky space: lower-triangular matrices with strictly
// positive diagonal, carrying the flat log-coordinate metric (entrywise log
// on the diagonal, identity on the strict-lower part). Points are stored as
// dense Q x Q tensors whose upper triangle is exactly zero; tangent
// coordinates travel packed as vectors of length P = Q(Q+1)/2.
namespace rtnag::chol {

struct TrilIndex {
    int q = 0;
    int p = 0;
    // flat (i*q+j) positions of the lower triangle, row-major packed order
    std::shared_ptr<const std::vector<int>> pack;
    // packed positions of the diagonal / strict-lower entries
    std::shared_ptr<const std::vector<int>> diag;
    std::shared_ptr<const std::vector<int>> strict;

    static const TrilIndex& get(int q) {
        static std::map<int, TrilIndex> cache;
        auto it = cache.find(q);
        if (it != cache.end()) return it->second;
        TrilIndex t;
        t.q = q;
        t.p = q * (q + 1) / 2;
        auto pk = std::make_shared<std::vector<int>>();
        auto dg = std::make_shared<std::vector<int>>();
        auto sl = std::make_shared<std::vector<int>>();
        int at = 0;
        for (int i = 0; i < q; ++i)
            for (int j = 0; j <= i; ++j, ++at) {
                pk->push_back(i * q + j);
                (i == j ? dg : sl)->push_back(at);
            }
        t.pack = pk;
        t.diag = dg;
        t.strict = sl;
        return cache.emplace(q, std::move(t)).first->second;
    }
};

inline void check_square(const Tensor& t, const char* who) {
    if (t.ndim() != 2 || t.rows() != t.cols())
        throw std::invalid_argument(std::string(who) + ": need square matrix, got " +
                                    Tensor::shape_str(t.shape));
}

// Valid point: lower-triangular with strictly positive diagonal.
inline bool is_valid_point(const Tensor& L) {
    if (L.ndim() != 2 || L.rows() != L.cols()) return false;
    int q = L.rows();
    for (int i = 0; i < q; ++i) {
        if (!(L.at(i, i) > 0.0)) return false;
        for (int j = i + 1; j < q; ++j)
            if (L.at(i, j) != 0.0) return false;
    }
    return true;
}

inline void require_point(const Tensor& L, const char* who) {
    check_square(L, who);
    int q = L.rows();
    for (int i = 0; i < q; ++i)
        if (!(L.at(i, i) > 0.0))
            throw std::domain_error(std::string(who) + ": invalid point, diagonal entry " +
                                    std::to_string(i) + " = " + std::to_string(L.at(i, i)));
}

// ---- tape versions (differentiable) ----

inline Var pack(Var L) {
    const Tensor& t = L.tp->val(L);
    check_square(t, "pack");
    return L.tp->gather(L, TrilIndex::get(t.rows()).pack);
}

inline Var unpack(Var v, int q) {
    const TrilIndex& ti = TrilIndex::get(q);
    if (v.tp->val(v).numel() != ti.p)
        throw std::invalid_argument("unpack: expected " + std::to_string(ti.p) +
                                    " packed entries, got " +
                                    std::to_string(v.tp->val(v).numel()));
    return v.tp->scatter(v, ti.pack, {q, q});
}

// Packed log coordinates: strict-lower copied, diagonal replaced by its log.
inline Var log_point_packed(Var L) {
    Tape& tp = *L.tp;
    const Tensor& t = tp.val(L);
    require_point(t, "chol_log");
    const TrilIndex& ti = TrilIndex::get(t.rows());
    Var v = pack(L);
    Var d = tp.log(tp.gather(v, ti.diag));
    Var sl = tp.gather(v, ti.strict);
    return tp.scatter(sl, ti.strict, {ti.p}) + tp.scatter(d, ti.diag, {ti.p});
}

// Inverse of log_point_packed; always lands on a valid point.
inline Var exp_tangent_packed(Var v, int q) {
    Tape& tp = *v.tp;
    const TrilIndex& ti = TrilIndex::get(q);
    if (tp.val(v).numel() != ti.p)
        throw std::invalid_argument("chol_exp: expected " + std::to_string(ti.p) +
                                    " packed entries, got " + std::to_string(tp.val(v).numel()));
    Var d = tp.exp(tp.gather(v, ti.diag));
    Var sl = tp.gather(v, ti.strict);
    return unpack(tp.scatter(sl, ti.strict, {ti.p}) + tp.scatter(d, ti.diag, {ti.p}), q);
}

inline Var log_point(Var L) {
    const Tensor& t = L.tp->val(L);
    check_square(t, "chol_log");
    return unpack(log_point_packed(L), t.rows());
}

inline Var exp_tangent(Var T) {
    const Tensor& t = T.tp->val(T);
    check_square(t, "chol_exp");
    return exp_tangent_packed(pack(T), t.rows());
}

// Group operation: strict-lower parts add, diagonals multiply.
inline Var group_op(Var a, Var b) {
    Tape& tp = *a.tp;
    const Tensor& ta = tp.val(a);
    const Tensor& tb = tp.val(b);
    check_square(ta, "group_op");
    if (!ta.same_shape(tb))
        throw std::invalid_argument("group_op: dim mismatch " + Tensor::shape_str(ta.shape) +
                                    " vs " + Tensor::shape_str(tb.shape));
    const TrilIndex& ti = TrilIndex::get(ta.rows());
    Var va = pack(a), vb = pack(b);
    Var sl = tp.gather(va, ti.strict) + tp.gather(vb, ti.strict);
    Var d = tp.mul(tp.gather(va, ti.diag), tp.gather(vb, ti.diag));
    return unpack(tp.scatter(sl, ti.strict, {ti.p}) + tp.scatter(d, ti.diag, {ti.p}), ta.rows());
}

// Weighted Frechet mean under the log-coordinate metric: softmax(logits)
// weights, arithmetic mean of strict-lower parts, geometric mean of
// diagonals.
inline Var wfm(const std::vector<Var>& points, Var logits) {
    if (points.empty()) throw std::invalid_argument("wfm: empty point list");
    Tape& tp = *points[0].tp;
    int m = static_cast<int>(points.size());
    if (tp.val(logits).numel() != m)
        throw std::invalid_argument("wfm: logit count " +
                                    std::to_string(tp.val(logits).numel()) + " != point count " +
                                    std::to_string(m));
    check_square(tp.val(points[0]), "wfm");
    const std::vector<int> shape0 = tp.val(points[0]).shape;
    int q = shape0[0];
    const TrilIndex& ti = TrilIndex::get(q);
    Var w = tp.reshape(tp.softmax_rows(tp.reshape(logits, {1, m})), {m});
    Var sl_mix{}, logd_mix{};
    for (int i = 0; i < m; ++i) {
        const Tensor& t = tp.val(points[i]);
        if (t.shape != shape0)
            throw std::invalid_argument("wfm: dim mismatch across points");
        require_point(t, "wfm");
        Var wi = tp.gather(w, std::make_shared<const std::vector<int>>(std::vector<int>{i}));
        Var v = pack(points[i]);
        Var sl = tp.mul_scalar(tp.gather(v, ti.strict), wi);
        Var ld = tp.mul_scalar(tp.log(tp.gather(v, ti.diag)), wi);
        sl_mix = i ? sl_mix + sl : sl;
        logd_mix = i ? logd_mix + ld : ld;
    }
    Var d = tp.exp(logd_mix);
    return unpack(tp.scatter(sl_mix, ti.strict, {ti.p}) + tp.scatter(d, ti.diag, {ti.p}), q);
}

// Frobenius norm of the log-coordinate difference; a true metric pulled back
// from flat space.
inline Var distance(Var a, Var b) {
    Tape& tp = *a.tp;
    Var d = log_point_packed(a) - log_point_packed(b);
    return tp.sqrt(tp.sum(d * d));
}

// ---- eager versions ----

inline Tensor log_point(const Tensor& L) {
    require_point(L, "chol_log");
    int q = L.rows();
    Tensor out = L;
    for (int i = 0; i < q; ++i) out.at(i, i) = std::log(L.at(i, i));
    return out;
}

inline Tensor exp_tangent(const Tensor& T) {
    check_square(T, "chol_exp");
    int q = T.rows();
    Tensor out = T;
    for (int i = 0; i < q; ++i) out.at(i, i) = std::exp(T.at(i, i));
    return out;
}

inline Tensor group_op(const Tensor& a, const Tensor& b) {
    check_square(a, "group_op");
    if (!a.same_shape(b))
        throw std::invalid_argument("group_op: dim mismatch " + Tensor::shape_str(a.shape) +
                                    " vs " + Tensor::shape_str(b.shape));
    int q = a.rows();
    Tensor out = a;
    for (int i = 0; i < q; ++i)
        for (int j = 0; j <= i; ++j)
            out.at(i, j) = (i == j) ? a.at(i, j) * b.at(i, j) : a.at(i, j) + b.at(i, j);
    return out;
}

inline Tensor wfm(const std::vector<Tensor>& points, const std::vector<double>& logits) {
    if (points.empty()) throw std::invalid_argument("wfm: empty point list");
    size_t m = points.size();
    if (logits.size() != m) throw std::invalid_argument("wfm: logit/point count mismatch");
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    std::vector<double> w(m);
    double s = 0.0;
    for (size_t i = 0; i < m; ++i) s += (w[i] = std::exp(logits[i] - mx));
    for (double& x : w) x /= s;
    int q = points[0].rows();
    Tensor out = Tensor::zeros({q, q});
    for (size_t k = 0; k < m; ++k) {
        require_point(points[k], "wfm");
        for (int i = 0; i < q; ++i)
            for (int j = 0; j <= i; ++j)
                out.at(i, j) += w[k] * (i == j ? std::log(points[k].at(i, j)) : points[k].at(i, j));
    }
    for (int i = 0; i < q; ++i) out.at(i, i) = std::exp(out.at(i, i));
    return out;
}

inline double distance(const Tensor& a, const Tensor& b) {
    require_point(a, "chol_distance");
    if (!a.same_shape(b))
        throw std::invalid_argument("chol_distance: dim mismatch " + Tensor::shape_str(a.shape) +
                                    " vs " + Tensor::shape_str(b.shape));
    require_point(b, "chol_distance");
    int q = a.rows();
    double acc = 0.0;
    for (int i = 0; i < q; ++i)
        for (int j = 0; j <= i; ++j) {
            double d = (i == j) ? std::log(a.at(i, j)) - std::log(b.at(i, j))
                                : a.at(i, j) - b.at(i, j);
            acc += d * d;
        }
    return std::sqrt(acc);
}

// Numerical safety net: zero the upper triangle, clamp the diagonal up to
// floor. Only used at explicit projection points, never inside geometry ops.
inline Tensor project(const Tensor& m, double floor = 1e-8) {
    check_square(m, "project_to_chol");
    if (!(floor > 0.0)) throw std::invalid_argument("project_to_chol: floor must be > 0");
    int q = m.rows();
    Tensor out = Tensor::zeros({q, q});
    for (int i = 0; i < q; ++i)
        for (int j = 0; j <= i; ++j)
            out.at(i, j) = (i == j) ? std::max(m.at(i, j), floor) : m.at(i, j);
    return out;
}

} // namespace rtnag::chol
