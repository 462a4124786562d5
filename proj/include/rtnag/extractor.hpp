#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "rtnag/nn.hpp"
#include "rtnag/tape.hpp"
#include "rtnag/tensor.hpp"

// Desk-scale 3D convolutional feature extractor with Gram-Schmidt channel
// attention. Three conv -> relu -> pool units take a single-channel volume to
// 32 channels at 1/8 resolution; channel novelty coefficients feed a two-layer
// attention net whose sigmoid weights rescale the maps before the FC heads.
namespace rtnag {

inline constexpr int kConvChannels[4] = {1, 8, 16, 32};

struct ExtractorParams {
    Tensor conv_k[3], conv_b[3];
    Tensor attn_w1, attn_b1, attn_w2, attn_b2;
    Tensor fc1_w, fc1_b; // flattened maps -> O features
    Tensor fc2_w, fc2_b; // auxiliary class head O -> C

    static ExtractorParams init(int volume_extent, int feature_dim, int classes, Rng& rng) {
        int v = volume_extent;
        if (v < 8 || (v & (v - 1)) != 0)
            throw std::invalid_argument("extractor: volume extent must be a power of two >= 8");
        ExtractorParams p;
        for (int u = 0; u < 3; ++u) {
            int cin = kConvChannels[u], cout = kConvChannels[u + 1];
            double std = std::sqrt(2.0 / (cin * 27.0));
            p.conv_k[u] = randn({cout, cin, 3, 3, 3}, std, rng);
            p.conv_b[u] = Tensor::zeros({cout});
        }
        int ch = kConvChannels[3];
        int flat = ch * (v / 8) * (v / 8) * (v / 8);
        p.attn_w1 = randn({ch / 2, ch}, 1.0 / std::sqrt(ch), rng);
        p.attn_b1 = Tensor::zeros({ch / 2});
        p.attn_w2 = randn({ch, ch / 2}, 1.0 / std::sqrt(ch / 2.0), rng);
        p.attn_b2 = Tensor::zeros({ch});
        p.fc1_w = randn({feature_dim, flat}, 1.0 / std::sqrt(flat), rng);
        p.fc1_b = Tensor::zeros({feature_dim});
        p.fc2_w = randn({classes, feature_dim}, 1.0 / std::sqrt(feature_dim), rng);
        p.fc2_b = Tensor::zeros({classes});
        return p;
    }
};

struct ExtractorVars {
    Var conv_k[3], conv_b[3];
    Var attn_w1, attn_b1, attn_w2, attn_b2;
    Var fc1_w, fc1_b, fc2_w, fc2_b;
};

// volume [V x V x V] -> channel maps [32 x (V/8)^3] (flattened spatially).
inline Var conv_pool_stack(Var volume, const ExtractorVars& p) {
    Tape& tp = *volume.tp;
    const Tensor& v = tp.val(volume);
    if (v.ndim() != 3 || v.shape[0] != v.shape[1] || v.shape[1] != v.shape[2])
        throw std::invalid_argument("conv_pool_stack: need cubic volume, got " +
                                    Tensor::shape_str(v.shape));
    int ext = v.shape[0];
    Var x = tp.reshape(volume, {1, ext, ext, ext});
    for (int u = 0; u < 3; ++u) {
        x = tp.conv3d(x, p.conv_k[u]);
        x = add_channel_bias(x, p.conv_b[u]);
        x = tp.relu(x);
        x = tp.maxpool3d(x);
    }
    int side = ext / 8;
    return tp.reshape(x, {kConvChannels[3], side * side * side});
}

// Novel-energy coefficient per channel: run modified Gram-Schmidt over the
// flattened channels in order and report ||residual||^2 / (||channel||^2 + d),
// so each coefficient lies in [0, 1].
inline Var gram_schmidt_coeffs(Var maps, double delta = 1e-12) {
    Tape& tp = *maps.tp;
    const Tensor& m = tp.val(maps);
    if (m.ndim() != 2 || m.rows() < 1)
        throw std::invalid_argument("gram_schmidt_coeffs: need [C x w] maps, got " +
                                    Tensor::shape_str(m.shape));
    int c = m.rows(), w = m.cols();
    auto row_idx = [&](int r) {
        auto v = std::make_shared<std::vector<int>>();
        v->reserve(static_cast<size_t>(w));
        for (int j = 0; j < w; ++j) v->push_back(r * w + j);
        return v;
    };
    auto dot = [&tp](Var a, Var b) { return tp.sum(a * b); };
    std::vector<Var> basis;      // residual vectors u_k
    std::vector<Var> basis_nrm2; // ||u_k||^2 + delta
    std::vector<Var> coeffs;
    for (int r = 0; r < c; ++r) {
        Var v = tp.gather(maps, row_idx(r));
        Var u = v;
        for (size_t k = 0; k < basis.size(); ++k) {
            Var proj = tp.div(dot(u, basis[k]), basis_nrm2[k]);
            u = u - tp.mul_scalar(basis[k], proj);
        }
        Var un2 = dot(u, u);
        Var vn2 = dot(v, v);
        coeffs.push_back(tp.div(un2, vn2 + delta));
        basis.push_back(u);
        basis_nrm2.push_back(un2 + delta);
    }
    return tp.concat(coeffs);
}

// Two-layer attention net: 32 -> 16 relu -> 32 sigmoid, weights in (0, 1).
inline Var channel_attention(Var coeffs, const ExtractorVars& p) {
    Tape& tp = *coeffs.tp;
    Var h = tp.relu(affine(p.attn_w1, coeffs, p.attn_b1));
    return tp.sigmoid(affine(p.attn_w2, h, p.attn_b2));
}

// Full front half: stack, attention reweighting, first FC head.
inline Var extract_features(Var volume, const ExtractorVars& p) {
    Tape& tp = *volume.tp;
    Var maps = conv_pool_stack(volume, p);
    Var weights = channel_attention(gram_schmidt_coeffs(maps), p);
    Var rew = tp.mul_rowwise(maps, weights);
    Var flat = tp.reshape(rew, {tp.val(rew).numel()});
    return affine(p.fc1_w, flat, p.fc1_b);
}

// Auxiliary class logits from the feature vector (second FC head).
inline Var aux_logits(Var features, const ExtractorVars& p) {
    return affine(p.fc2_w, features, p.fc2_b);
}

} // namespace rtnag
