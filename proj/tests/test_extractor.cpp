#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rtnag/extractor.hpp"
#include "rtnag/gradcheck.hpp"
#include "rtnag/objectives.hpp"

#include "oracles.hpp"

using namespace rtnag;

namespace {

ExtractorParams small_params(Rng& rng) { return ExtractorParams::init(8, 6, 3, rng); }

std::vector<Tensor> flatten_params(const ExtractorParams& p) {
    return {p.conv_k[0], p.conv_b[0], p.conv_k[1], p.conv_b[1], p.conv_k[2], p.conv_b[2],
            p.attn_w1,  p.attn_b1,  p.attn_w2,  p.attn_b2,  p.fc1_w,     p.fc1_b,
            p.fc2_w,    p.fc2_b};
}

ExtractorVars bind_vars(Tape& tp, const std::vector<Var>& v) {
    ExtractorVars e;
    e.conv_k[0] = v[0];
    e.conv_b[0] = v[1];
    e.conv_k[1] = v[2];
    e.conv_b[1] = v[3];
    e.conv_k[2] = v[4];
    e.conv_b[2] = v[5];
    e.attn_w1 = v[6];
    e.attn_b1 = v[7];
    e.attn_w2 = v[8];
    e.attn_b2 = v[9];
    e.fc1_w = v[10];
    e.fc1_b = v[11];
    e.fc2_w = v[12];
    e.fc2_b = v[13];
    return e;
}

Tensor blob_volume(int ext, double s) {
    Tensor v = Tensor::zeros({ext, ext, ext});
    double c0 = 0.5 * (ext - 1), sb = ext / 4.0, sc = ext / 6.0;
    size_t at = 0;
    for (int z = 0; z < ext; ++z)
        for (int y = 0; y < ext; ++y)
            for (int x = 0; x < ext; ++x, ++at) {
                double r2 = (z - c0) * (z - c0) + (y - c0) * (y - c0) + (x - c0) * (x - c0);
                double blob = std::exp(-r2 / (2.0 * sb * sb));
                v.data[at] = blob * (1.0 - 0.5 * s * std::exp(-r2 / (2.0 * sc * sc)));
            }
    return v;
}

} // namespace

TEST_CASE("conv pool stack shapes and zero case") {
    Rng rng(301);
    Tape tp;
    ExtractorParams p = small_params(rng);
    for (auto& k : p.conv_k)
        for (double& v : k.data) v = 0.0;
    std::vector<Var> vars;
    for (const Tensor& t : flatten_params(p)) vars.push_back(tp.leaf(t));
    ExtractorVars ev = bind_vars(tp, vars);
    // zero volume, zero kernels/biases -> zero maps
    Var maps = conv_pool_stack(tp.leaf(Tensor::zeros({8, 8, 8})), ev);
    REQUIRE(tp.val(maps).shape == std::vector<int>{32, 1});
    for (double v : tp.val(maps).data) REQUIRE(v == 0.0);

    // extent 16 input -> 32 channels at 2^3 voxels
    Rng rng2(302);
    ExtractorParams p16 = ExtractorParams::init(16, 8, 3, rng2);
    Tape tp2;
    std::vector<Var> vars2;
    for (const Tensor& t : flatten_params(p16)) vars2.push_back(tp2.leaf(t));
    Tensor vol = Tensor::zeros({16, 16, 16});
    for (double& v : vol.data) v = rng2.uniform(0.0, 1.0);
    Var maps2 = conv_pool_stack(tp2.leaf(vol), bind_vars(tp2, vars2));
    REQUIRE(tp2.val(maps2).shape == std::vector<int>{32, 8});
}

TEST_CASE("gram schmidt coefficients") {
    Tape tp;
    // mutually orthogonal channels -> all coefficients ~ 1
    Tensor ortho = Tensor::zeros({4, 8});
    ortho.at(0, 0) = 2.0;
    ortho.at(1, 3) = -1.5;
    ortho.at(2, 5) = 0.7;
    ortho.at(3, 7) = 3.1;
    Tensor e = tp.val(gram_schmidt_coeffs(tp.leaf(ortho)));
    for (double v : e.data) REQUIRE(v == Catch::Approx(1.0).epsilon(1e-9));

    // dependent channel -> ~0 novel energy
    Tensor dep = Tensor::zeros({2, 6});
    Rng rng(307);
    for (int j = 0; j < 6; ++j) {
        dep.at(0, j) = rng.uniform(-1, 1);
        dep.at(1, j) = -2.5 * dep.at(0, j);
    }
    Tensor e2 = tp.val(gram_schmidt_coeffs(tp.leaf(dep)));
    REQUIRE(e2.data[1] == Catch::Approx(0.0).margin(1e-9));

    // random maps: e_c equals 1 - R^2 of the least-squares fit on the
    // preceding channels (normal-equations oracle)
    for (int trial = 0; trial < 20; ++trial) {
        int c = 3 + rng.uniform_int(3), w = 6 + rng.uniform_int(5);
        Tensor m = Tensor::zeros({c, w});
        for (double& v : m.data) v = rng.uniform(-2.0, 2.0);
        Tensor coeffs = tp.val(gram_schmidt_coeffs(tp.leaf(m)));
        for (int r = 0; r < c; ++r) {
            std::vector<double> y(static_cast<size_t>(w));
            for (int j = 0; j < w; ++j) y[static_cast<size_t>(j)] = m.at(r, j);
            std::vector<double> xcols;
            for (int k = 0; k < r; ++k)
                for (int j = 0; j < w; ++j) xcols.push_back(m.at(k, j));
            double sse = oracle::least_squares_sse(xcols, w, r, y);
            double vn2 = 0.0;
            for (double v : y) vn2 += v * v;
            double want = sse / (vn2 + 1e-12);
            REQUIRE(coeffs.data[static_cast<size_t>(r)] == Catch::Approx(want).margin(1e-9));
        }
        tp.clear();
    }
}

TEST_CASE("channel attention") {
    Rng rng(311);
    Tape tp;
    ExtractorParams p = small_params(rng);
    for (double& v : p.attn_w1.data) v = 0.0;
    for (double& v : p.attn_w2.data) v = 0.0;
    std::vector<Var> vars;
    for (const Tensor& t : flatten_params(p)) vars.push_back(tp.leaf(t));
    ExtractorVars ev = bind_vars(tp, vars);
    Tensor coeffs = Tensor::zeros({32});
    for (double& v : coeffs.data) v = rng.uniform(0.0, 1.0);
    Tensor w = tp.val(channel_attention(tp.leaf(coeffs), ev));
    for (double v : w.data) REQUIRE(v == 0.5); // sigmoid(0)

    // bounds for random weights
    Rng rng2(313);
    ExtractorParams p2 = small_params(rng2);
    Tape tp2;
    std::vector<Var> vars2;
    for (const Tensor& t : flatten_params(p2)) vars2.push_back(tp2.leaf(t));
    Tensor w2 = tp2.val(channel_attention(tp2.leaf(coeffs), bind_vars(tp2, vars2)));
    for (double v : w2.data) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }

    // gradient through the attention net
    auto rep = gradient_check(
        [&](Tape& t, const std::vector<Var>& ps) {
            ExtractorVars e;
            e.attn_w1 = ps[0];
            e.attn_b1 = ps[1];
            e.attn_w2 = ps[2];
            e.attn_b2 = ps[3];
            return t.sum(channel_attention(ps[4], e));
        },
        {p2.attn_w1, p2.attn_b1, p2.attn_w2, p2.attn_b2, coeffs});
    REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("feature extraction and auxiliary head") {
    Rng rng(317);
    ExtractorParams p = small_params(rng);
    Tensor vol = blob_volume(8, 0.2);

    auto run = [&](const Tensor& v) {
        Tape tp;
        std::vector<Var> vars;
        for (const Tensor& t : flatten_params(p)) vars.push_back(tp.leaf(t));
        ExtractorVars ev = bind_vars(tp, vars);
        return tp.val(extract_features(tp.leaf(v), ev));
    };
    Tensor f1 = run(vol);
    Tensor f2 = run(vol);
    REQUIRE(f1.max_abs_diff(f2) == 0.0); // deterministic
    REQUIRE(f1.shape == std::vector<int>{6});

    // volumes differing only in the attenuated-region intensity
    Tensor fa = run(blob_volume(8, 0.1)), fb = run(blob_volume(8, 0.9));
    REQUIRE(fa.max_abs_diff(fb) > 1e-6);

    // zero features, zero head -> uniform class probabilities
    Tape tp;
    ExtractorParams pz = p;
    for (double& v : pz.fc2_w.data) v = 0.0;
    std::vector<Var> vars;
    for (const Tensor& t : flatten_params(pz)) vars.push_back(tp.leaf(t));
    ExtractorVars ev = bind_vars(tp, vars);
    Var logits = aux_logits(tp.leaf(Tensor::zeros({6})), ev);
    REQUIRE(tp.val(logits).shape == std::vector<int>{3});
    Tensor probs = tp.val(softmax_vec(logits));
    for (double v : probs.data) REQUIRE(v == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

    // gradient of the auxiliary CE w.r.t. the head
    auto rep = gradient_check(
        [&](Tape& t, const std::vector<Var>& ps) {
            ExtractorVars e;
            e.fc2_w = ps[0];
            e.fc2_b = ps[1];
            return cross_entropy(softmax_vec(aux_logits(ps[2], e)), 1);
        },
        {p.fc2_w, p.fc2_b, f1});
    REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("full extractor end-to-end gradient") {
    Rng rng(331);
    ExtractorParams p = small_params(rng);
    Tensor vol = blob_volume(8, 0.4);
    GradCheckOptions opt;
    opt.max_coords_per_param = 24; // sampled; every tensor still participates
    auto rep = gradient_check_opt(
        [&](Tape& tp, const std::vector<Var>& ps) {
            ExtractorVars ev = bind_vars(tp, ps);
            Var f = extract_features(tp.leaf(vol), ev);
            Var ce = cross_entropy(softmax_vec(aux_logits(f, ev)), 2);
            return ce + tp.sum(f * f) * 0.1;
        },
        flatten_params(p), opt);
    INFO("worst " << rep.worst_param << "/" << rep.worst_coord << " analytic " << rep.analytic
                  << " numeric " << rep.numeric);
    REQUIRE(rep.max_rel_err < 1e-4);
}
