#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "rtnag/geometry.hpp"
#include "rtnag/nn.hpp"
#include "rtnag/tape.hpp"

// Back half of the manifold mapping: fuse imaging features with cognitive
// scores, lift the fused vector to Q channels with a 1D convolution, take the
// covariance across positions (ridge keeps it definite) and Cholesky-factor
// onto the manifold. The decoder reads log coordinates back out.
namespace rtnag {

struct RmmParams {
    // [Q x 3] conv kernels, one input channel. No bias: the covariance that
    // follows subtracts row means, so a per-channel bias could never act.
    Tensor lift_k;
    double ridge = 1e-4;

    static RmmParams init(int manifold_dim, Rng& rng) {
        if (manifold_dim < 2) throw std::invalid_argument("rmm: manifold dim must be >= 2");
        RmmParams p;
        p.lift_k = randn({manifold_dim, 3}, 1.0 / std::sqrt(3.0), rng);
        return p;
    }
};

struct RmmVars {
    Var lift_k;
    double ridge = 1e-4;
};

struct DecoderParams {
    Tensor cls_w, cls_b; // [C x P], [C]
    Tensor reg_w, reg_b; // [R x P], [R]

    static DecoderParams init(int packed_dim, int classes, int targets, Rng& rng) {
        DecoderParams p;
        double std = 1.0 / std::sqrt(static_cast<double>(packed_dim));
        p.cls_w = randn({classes, packed_dim}, std, rng);
        p.cls_b = Tensor::zeros({classes});
        p.reg_w = randn({targets, packed_dim}, std, rng);
        p.reg_b = Tensor::zeros({targets});
        return p;
    }
};

struct DecoderVars {
    Var cls_w, cls_b, reg_w, reg_b;
};

// Concatenate feature vector and score block; unobserved scores are replaced
// by the normalized-range midpoint 0.5 before fusion (losses still mask them).
inline Var fuse(Var features, const std::array<double, 3>& scores,
                const std::array<char, 3>& mask) {
    Tape& tp = *features.tp;
    std::vector<double> filled(3);
    for (int k = 0; k < 3; ++k) filled[static_cast<size_t>(k)] = mask[static_cast<size_t>(k)] ? scores[static_cast<size_t>(k)] : 0.5;
    return tp.concat({features, tp.constant(Tensor::from_vector(filled))});
}

// 1-channel signal of length W -> Q channels, kernel 3, stride 1, pad 1.
inline Var lift_channels(Var fused, const RmmVars& p) {
    return fused.tp->conv1d(fused, p.lift_k);
}

// Lifted signal -> manifold point E.
inline Var to_manifold(Var lifted, double ridge = 1e-4) {
    return lifted.tp->cholesky(covariance_rows(lifted, ridge));
}

struct DecodedOutput {
    Var class_probs; // [C], sums to 1
    Var scores;      // [R], sigmoid-bounded in (0, 1)
};

// Decode a hidden manifold point: linear heads over the packed log
// coordinates, softmax for the class probabilities, sigmoid for the scores.
inline DecodedOutput decode(Var h, const DecoderVars& p) {
    Tape& tp = *h.tp;
    Var logv = chol::log_point_packed(h);
    DecodedOutput out;
    out.class_probs = softmax_vec(affine(p.cls_w, logv, p.cls_b));
    out.scores = tp.sigmoid(affine(p.reg_w, logv, p.reg_b));
    return out;
}

// Flat decode for the euclidean ablation: reads the state vector directly.
inline DecodedOutput decode_flat(Var state, const DecoderVars& p) {
    Tape& tp = *state.tp;
    DecodedOutput out;
    out.class_probs = softmax_vec(affine(p.cls_w, state, p.cls_b));
    out.scores = tp.sigmoid(affine(p.reg_w, state, p.reg_b));
    return out;
}

} // namespace rtnag
