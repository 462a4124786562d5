#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rtnag/geometry.hpp"
#include "rtnag/nn.hpp"
#include "rtnag/tape.hpp"
#include "rtnag/tnode.hpp"

// Attention-gated recurrent update on the manifold. Query/key/value points
// come from linear maps in log coordinates; the attention-scored value is
// squashed to (0, 1) and decayed with the observation gap, then mixes the
// evolved state with a candidate built from weighted Frechet means.
namespace rtnag {

struct ArgruParams {
    Tensor wq, wk, wv;               // [P x P] maps on packed log coordinates
    Tensor wr_logits, wl_logits;     // wfm weight logits, [2] each
    Tensor br_log, bl_log;           // bias points, packed log coordinates [P]
    Tensor theta;                    // interval-decay rate, pre-softplus, [1]
    Tensor wz_logits, bz_log;        // plain-gate ablation parameters

    static ArgruParams init(int packed_dim, Rng& rng) {
        ArgruParams p;
        p.wq = randn({packed_dim, packed_dim}, 0.01, rng);
        p.wk = randn({packed_dim, packed_dim}, 0.01, rng);
        p.wv = randn({packed_dim, packed_dim}, 0.01, rng);
        p.wr_logits = Tensor::zeros({2});
        p.wl_logits = Tensor::zeros({2});
        p.br_log = Tensor::zeros({packed_dim}); // exp(0) = identity point
        p.bl_log = Tensor::zeros({packed_dim});
        p.theta = Tensor::full({1}, -2.25);     // softplus(-2.25) ~ 0.1, mild decay
        p.wz_logits = Tensor::zeros({2});
        p.bz_log = Tensor::zeros({packed_dim});
        return p;
    }
};

struct ArgruVars {
    Var wq, wk, wv;
    Var wr_logits, wl_logits;
    Var br_log, bl_log;
    Var theta;
    Var wz_logits, bz_log;
};

enum class GateMode { Attention, PlainWfm, None };

struct ArgruOptions {
    GateMode gate = GateMode::Attention;
    bool interval_scaling = true;
};

struct QkvPoints {
    Var q, k, v; // CholPoints, Q x Q
};

// q from the evolved state, k and v from the observation, all as
// exp(W log(.)) with the maps acting on packed coordinates.
inline QkvPoints qkv(Var h_evolved, Var e, const ArgruVars& p) {
    Tape& tp = *h_evolved.tp;
    const Tensor& th = tp.val(h_evolved);
    if (!th.same_shape(tp.val(e)))
        throw std::invalid_argument("qkv: dim mismatch " + Tensor::shape_str(th.shape) + " vs " +
                                    Tensor::shape_str(tp.val(e).shape));
    int q = th.rows();
    Var logh = chol::log_point_packed(h_evolved);
    Var loge = chol::log_point_packed(e);
    QkvPoints out;
    out.q = chol::exp_tangent_packed(tp.matmul(p.wq, logh), q);
    out.k = chol::exp_tangent_packed(tp.matmul(p.wk, loge), q);
    out.v = chol::exp_tangent_packed(tp.matmul(p.wv, loge), q);
    return out;
}

// Attention update gate, packed (0,1) entries over the lower triangle:
// sigmoid of the lower triangle of softmax(q k^T / sqrt(Q)) v, decayed by
// exp(-softplus(theta) dt) when interval scaling is on, floored at 1e-6.
inline Var attention_gate(const QkvPoints& pts, double dt, const ArgruVars& p,
                          const ArgruOptions& opt) {
    Tape& tp = *pts.q.tp;
    if (dt < 0.0) throw std::invalid_argument("attention_gate: dt must be >= 0");
    int q = tp.val(pts.q).rows();
    Var scores = tp.scale(tp.matmul(pts.q, tp.transpose(pts.k)), 1.0 / std::sqrt(q));
    Var sc = tp.softmax_rows(scores);
    Var z = tp.sigmoid(chol::pack(tp.matmul(sc, pts.v)));
    if (opt.interval_scaling) {
        Var decay = tp.exp(tp.scale(tp.softplus(p.theta), -dt));
        z = tp.mul_scalar(z, decay);
    }
    return tp.clamp_min(z, 1e-6);
}

// Plain wfm-sigmoid gate (ablation analogue of the unmodified recurrent
// unit): z = sigmoid(tril(wfm({e, h'}, W_z) (+) B_z)).
inline Var plain_gate(Var e, Var h_evolved, const ArgruVars& p, const ArgruOptions& opt,
                      double dt) {
    Tape& tp = *e.tp;
    Var m = chol::group_op(chol::wfm({e, h_evolved}, p.wz_logits),
                           chol::exp_tangent_packed(p.bz_log, tp.val(e).rows()));
    Var z = tp.sigmoid(chol::pack(m));
    if (opt.interval_scaling) {
        Var decay = tp.exp(tp.scale(tp.softplus(p.theta), -dt));
        z = tp.mul_scalar(z, decay);
    }
    return tp.clamp_min(z, 1e-6);
}

// Reset gate: sigmoid over the lower-triangular entries of
// wfm({e, h'}, W_r) (+) B_r. Entries land in (0,1), so the result is itself
// a valid point.
inline Var reset_gate(Var e, Var h_evolved, const ArgruVars& p) {
    Tape& tp = *e.tp;
    int q = tp.val(e).rows();
    Var m = chol::group_op(chol::wfm({e, h_evolved}, p.wr_logits),
                           chol::exp_tangent_packed(p.br_log, q));
    return chol::unpack(tp.sigmoid(chol::pack(m)), q);
}

// Candidate state: l = wfm({e, r (+) h'}, W_l) (+) B_l, then tanh on the
// strict-lower part and softplus on the diagonal, which keeps the candidate
// on the manifold.
inline Var candidate(Var e, Var reset, Var h_evolved, const ArgruVars& p) {
    Tape& tp = *e.tp;
    int q = tp.val(e).rows();
    const chol::TrilIndex& ti = chol::TrilIndex::get(q);
    Var l = chol::group_op(chol::wfm({e, chol::group_op(reset, h_evolved)}, p.wl_logits),
                           chol::exp_tangent_packed(p.bl_log, q));
    Var lp = chol::pack(l);
    Var sl = tp.gather(lp, ti.strict);
    Var dg = tp.gather(lp, ti.diag);
    Var cand = tp.scatter(tp.tanh(sl), ti.strict, {ti.p}) +
               tp.scatter(tp.softplus(dg), ti.diag, {ti.p});
    return chol::unpack(cand, q);
}

// Convex mix on the lower triangle: h = (1-z) h' + z hbar, elementwise in
// packed coordinates. z in (0,1) keeps the diagonal positive.
inline Var update(Var h_evolved, Var h_candidate, Var z_packed) {
    Tape& tp = *h_evolved.tp;
    int q = tp.val(h_evolved).rows();
    Var hp = chol::pack(h_evolved);
    Var hb = chol::pack(h_candidate);
    Var one_minus = tp.scale(z_packed, -1.0) + 1.0;
    return chol::unpack(tp.mul(one_minus, hp) + tp.mul(z_packed, hb), q);
}

// One observation step: TNODE evolution over [t_prev, t_cur], then the gated
// update against the observation e.
inline Var cell_step(Var h_prev, Var e, double t_prev, double t_cur, double age_norm,
                     const ArgruVars& ap, const TnodeVars& tp_params, const SolverConfig& solver,
                     const ArgruOptions& opt) {
    Tape& tp = *h_prev.tp;
    if (t_cur < t_prev)
        throw std::invalid_argument("cell_step: t_cur < t_prev");
    Var eps = time_coefficient(tp, age_norm, tp_params);
    Var h_ev = evolve(h_prev, t_prev, t_cur, eps, tp_params, solver);
    if (opt.gate == GateMode::None) return h_ev;
    double dt = t_cur - t_prev;
    Var z;
    if (opt.gate == GateMode::Attention) {
        QkvPoints pts = qkv(h_ev, e, ap);
        z = attention_gate(pts, dt, ap, opt);
    } else {
        z = plain_gate(e, h_ev, ap, opt, dt);
    }
    Var r = reset_gate(e, h_ev, ap);
    Var hbar = candidate(e, r, h_ev, ap);
    return update(h_ev, hbar, z);
}

struct SequenceInput {
    std::vector<double> times;     // strictly increasing, normalized units
    std::vector<Var> observations; // manifold points e_j, aligned with times
    std::vector<double> age_norms; // standardized age at each visit
};

struct SequenceOutput {
    std::vector<Var> hidden;  // per-visit updated states
    Var extrapolated;         // state evolved to target_time (no gate there)
};

// Alternating TNODE/ARGRU pass over one subject. The initial state is the
// identity, placed at the first visit (or at t_start when the sequence is
// empty), and the final evolution runs gate-free to target_time.
inline SequenceOutput run_sequence(Tape& tp, const SequenceInput& in, double target_time,
                                   double start_age_norm, int q, const ArgruVars& ap,
                                   const TnodeVars& tnp, const SolverConfig& solver,
                                   const ArgruOptions& opt, double t_start = 0.0) {
    if (in.times.size() != in.observations.size() || in.times.size() != in.age_norms.size())
        throw std::invalid_argument("run_sequence: ragged inputs");
    for (size_t i = 1; i < in.times.size(); ++i)
        if (in.times[i] <= in.times[i - 1])
            throw std::invalid_argument("run_sequence: visit times must strictly increase");
    double t_prev = in.times.empty() ? t_start : in.times.front();
    if (target_time < (in.times.empty() ? t_start : in.times.back()))
        throw std::invalid_argument("run_sequence: target_time precedes last visit");

    SequenceOutput out;
    Var h = tp.constant(Tensor::identity(q));
    double age_prev = in.age_norms.empty() ? start_age_norm : in.age_norms.front();
    for (size_t j = 0; j < in.times.size(); ++j) {
        h = cell_step(h, in.observations[j], t_prev, in.times[j], age_prev, ap, tnp, solver, opt);
        out.hidden.push_back(h);
        t_prev = in.times[j];
        age_prev = in.age_norms[j];
    }
    Var eps = time_coefficient(tp, age_prev, tnp);
    out.extrapolated = evolve(h, t_prev, target_time, eps, tnp, solver);
    return out;
}

} // namespace rtnag
