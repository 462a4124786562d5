#pragma once

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtnag/argru.hpp"
#include "rtnag/cohort.hpp"
#include "rtnag/extractor.hpp"
#include "rtnag/rmm.hpp"
#include "rtnag/tnode.hpp"

// Assembly of the full predictor: per-visit encoding onto the manifold (or
// its flat ablation), the alternating TNODE/ARGRU recurrence, decoding, and
// the parameter registry that training and persistence share.
namespace rtnag {

enum class GeometryMode { Manifold, Euclidean };
enum class InputMode { Rmm, Flat };
enum class TimeMode { TimeAware, Plain }; // Plain: conventional NODE, eps = 1

struct ModelConfig {
    int manifold_dim = 8;  // Q
    int feature_dim = 32;  // O (must match the cohort payload in vector mode)
    int ode_hidden = 64;
    int volume_extent = 0; // 0 = vector payloads
    GeometryMode geometry = GeometryMode::Manifold;
    InputMode input = InputMode::Rmm;
    TimeMode time = TimeMode::TimeAware;
    GateMode gate = GateMode::Attention;
    bool interval_scaling = true;
    bool aux_ce = true; // train the auxiliary class head jointly
    double ridge = 1e-4;
    SolverConfig solver;

    int packed_dim() const { return manifold_dim * (manifold_dim + 1) / 2; }
    int fused_dim() const { return feature_dim + kScores; }

    void validate() const {
        if (manifold_dim < 2) throw std::invalid_argument("model: manifold_dim must be >= 2");
        if (feature_dim < 1) throw std::invalid_argument("model: feature_dim must be >= 1");
        if (ode_hidden < 1) throw std::invalid_argument("model: ode_hidden must be >= 1");
        if (geometry == GeometryMode::Euclidean && input != InputMode::Flat)
            throw std::invalid_argument("model: euclidean geometry requires the flat encoder");
        if (fused_dim() < 3) throw std::invalid_argument("model: fused dim too small");
        solver.validate();
    }

    ArgruOptions argru_options() const {
        ArgruOptions o;
        o.gate = gate;
        o.interval_scaling = interval_scaling;
        return o;
    }
};

// Age standardization constants; the recurrence's time axis is
// (age_years - mean) / std.
struct TimeNormalization {
    double age_mean = 70.0;
    double age_std = 10.0;

    double normalize(double age_years) const { return (age_years - age_mean) / age_std; }

    static TimeNormalization fit(const std::vector<const SubjectSequence*>& subjects) {
        double sum = 0.0, sum2 = 0.0;
        long long n = 0;
        for (const auto* s : subjects)
            for (const auto& v : s->visits) {
                sum += v.age;
                sum2 += v.age * v.age;
                ++n;
            }
        TimeNormalization t;
        if (n == 0) return t;
        t.age_mean = sum / n;
        double var = sum2 / n - t.age_mean * t.age_mean;
        t.age_std = var > 1e-12 ? std::sqrt(var) : 1.0;
        return t;
    }
};

struct ModelParams {
    ModelConfig config;
    TimeNormalization time_norm;
    ExtractorParams extractor; // volume mode only
    Tensor aux_w, aux_b;       // vector-mode auxiliary head over payload features
    RmmParams rmm;
    Tensor flat_w, flat_b;     // flat encoder [P x (O+K)], [P]
    TnodeParams tnode;
    ArgruParams argru;
    DecoderParams decoder;

    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        ModelParams m;
        m.config = cfg;
        Rng rng = Rng::fork(seed, 0x6d6f64656c);
        int p = cfg.packed_dim();
        if (cfg.volume_extent > 0)
            m.extractor = ExtractorParams::init(cfg.volume_extent, cfg.feature_dim, kClasses, rng);
        m.aux_w = randn({kClasses, cfg.feature_dim}, 1.0 / std::sqrt(cfg.feature_dim), rng);
        m.aux_b = Tensor::zeros({kClasses});
        m.rmm = RmmParams::init(cfg.manifold_dim, rng);
        m.rmm.ridge = cfg.ridge;
        m.flat_w = randn({p, cfg.fused_dim()}, 1.0 / std::sqrt(cfg.fused_dim()), rng);
        m.flat_b = Tensor::zeros({p});
        m.tnode = TnodeParams::init(p, cfg.ode_hidden, rng);
        m.argru = ArgruParams::init(p, rng);
        m.decoder = DecoderParams::init(p, kClasses, kScores, rng);
        return m;
    }
};

struct ParamRef {
    std::string name;
    Tensor* tensor;
};

// The trainable set for the active configuration, in a fixed order. Unused
// parameter blocks stay out so optimizer state, checkpoints and gradient
// checks cover exactly the live model.
inline std::vector<ParamRef> trainable_params(ModelParams& m) {
    const ModelConfig& c = m.config;
    std::vector<ParamRef> out;
    auto add = [&out](const char* n, Tensor& t) { out.push_back({n, &t}); };
    if (c.input == InputMode::Rmm) {
        if (c.volume_extent > 0) {
            ExtractorParams& e = m.extractor;
            add("extractor.conv1_k", e.conv_k[0]);
            add("extractor.conv1_b", e.conv_b[0]);
            add("extractor.conv2_k", e.conv_k[1]);
            add("extractor.conv2_b", e.conv_b[1]);
            add("extractor.conv3_k", e.conv_k[2]);
            add("extractor.conv3_b", e.conv_b[2]);
            add("extractor.attn_w1", e.attn_w1);
            add("extractor.attn_b1", e.attn_b1);
            add("extractor.attn_w2", e.attn_w2);
            add("extractor.attn_b2", e.attn_b2);
            add("extractor.fc1_w", e.fc1_w);
            add("extractor.fc1_b", e.fc1_b);
            if (c.aux_ce) {
                add("extractor.fc2_w", e.fc2_w);
                add("extractor.fc2_b", e.fc2_b);
            }
        } else if (c.aux_ce) {
            add("aux.w", m.aux_w);
            add("aux.b", m.aux_b);
        }
        add("rmm.lift_k", m.rmm.lift_k);
    } else {
        add("flat.w", m.flat_w);
        add("flat.b", m.flat_b);
    }
    add("tnode.field_w1", m.tnode.field_w1);
    add("tnode.field_b1", m.tnode.field_b1);
    add("tnode.field_w2", m.tnode.field_w2);
    add("tnode.field_b2", m.tnode.field_b2);
    if (c.time == TimeMode::TimeAware) {
        add("tnode.enc_w", m.tnode.enc_w);
        add("tnode.enc_b", m.tnode.enc_b);
    }
    if (c.gate != GateMode::None) {
        if (c.gate == GateMode::Attention) {
            add("argru.wq", m.argru.wq);
            add("argru.wk", m.argru.wk);
            add("argru.wv", m.argru.wv);
        } else {
            add("argru.wz_logits", m.argru.wz_logits);
            add("argru.bz_log", m.argru.bz_log);
        }
        add("argru.wr_logits", m.argru.wr_logits);
        add("argru.wl_logits", m.argru.wl_logits);
        add("argru.br_log", m.argru.br_log);
        add("argru.bl_log", m.argru.bl_log);
        if (c.interval_scaling) add("argru.theta", m.argru.theta);
    }
    add("decoder.cls_w", m.decoder.cls_w);
    add("decoder.cls_b", m.decoder.cls_b);
    add("decoder.reg_w", m.decoder.reg_w);
    add("decoder.reg_b", m.decoder.reg_b);
    return out;
}

// Tape-bound view of the live parameters. The Var handles mirror
// trainable_params order; unused blocks hold invalid Vars.
struct ModelVars {
    ExtractorVars extractor;
    Var aux_w, aux_b;
    RmmVars rmm;
    Var flat_w, flat_b;
    TnodeVars tnode;
    ArgruVars argru;
    DecoderVars decoder;
    std::vector<Var> ordered; // same order as trainable_params
};

// Assemble the Var view from an ordered list matching trainable_params.
inline ModelVars assemble_model_vars(Tape& tp, const ModelConfig& c, std::vector<Var> ordered,
                                     double ridge) {
    ModelVars v;
    v.rmm.ridge = ridge;
    v.ordered = std::move(ordered);
    std::vector<Var>& ord = v.ordered;
    size_t i = 0;
    auto next = [&]() { return ord.at(i++); };
    if (c.input == InputMode::Rmm) {
        if (c.volume_extent > 0) {
            for (int u = 0; u < 3; ++u) {
                v.extractor.conv_k[u] = next();
                v.extractor.conv_b[u] = next();
            }
            v.extractor.attn_w1 = next();
            v.extractor.attn_b1 = next();
            v.extractor.attn_w2 = next();
            v.extractor.attn_b2 = next();
            v.extractor.fc1_w = next();
            v.extractor.fc1_b = next();
            if (c.aux_ce) {
                v.extractor.fc2_w = next();
                v.extractor.fc2_b = next();
            }
        } else if (c.aux_ce) {
            v.aux_w = next();
            v.aux_b = next();
        }
        v.rmm.lift_k = next();
    } else {
        v.flat_w = next();
        v.flat_b = next();
    }
    v.tnode.field_w1 = next();
    v.tnode.field_b1 = next();
    v.tnode.field_w2 = next();
    v.tnode.field_b2 = next();
    if (c.time == TimeMode::TimeAware) {
        v.tnode.enc_w = next();
        v.tnode.enc_b = next();
    } else {
        // conventional NODE: the encoder is fixed so that eps = softplus(b)=1
        double b = std::log(std::exp(1.0) - 1.0);
        v.tnode.enc_w = tp.constant(Tensor::zeros({1}));
        v.tnode.enc_b = tp.constant(Tensor::full({1}, b));
    }
    if (c.gate != GateMode::None) {
        if (c.gate == GateMode::Attention) {
            v.argru.wq = next();
            v.argru.wk = next();
            v.argru.wv = next();
        } else {
            v.argru.wz_logits = next();
            v.argru.bz_log = next();
        }
        v.argru.wr_logits = next();
        v.argru.wl_logits = next();
        v.argru.br_log = next();
        v.argru.bl_log = next();
        v.argru.theta = c.interval_scaling ? next() : tp.constant(Tensor::zeros({1}));
    }
    v.decoder.cls_w = next();
    v.decoder.cls_b = next();
    v.decoder.reg_w = next();
    v.decoder.reg_b = next();
    if (i != ord.size()) throw std::logic_error("bind_model: registry order out of sync");
    return v;
}

inline ModelVars bind_model(Tape& tp, ModelParams& m, bool requires_grad) {
    std::vector<Var> ord;
    for (const ParamRef& r : trainable_params(m)) ord.push_back(tp.leaf(*r.tensor, requires_grad));
    return assemble_model_vars(tp, m.config, std::move(ord), m.rmm.ridge);
}

// ---- forward pass ----

struct SubjectForward {
    std::vector<DecodedOutput> per_visit; // aligned with the fed visits
    DecodedOutput target;                 // forecast at the target time
    std::vector<Var> aux_probs;           // per fed visit; empty when aux off
};

namespace model_detail {

inline Var aux_head(const ModelVars& v, const ModelConfig& cfg, Var features) {
    if (cfg.volume_extent > 0) return softmax_vec(aux_logits(features, v.extractor));
    return softmax_vec(affine(v.aux_w, features, v.aux_b));
}

// Flat analogue of the manifold cell: log/exp dropped, wfm -> softmax-weighted
// arithmetic mean, group op -> +, candidate -> tanh.
inline Var flat_wfm(Tape& tp, Var a, Var b, Var logits) {
    Var w = tp.reshape(tp.softmax_rows(tp.reshape(logits, {1, 2})), {2});
    return tp.mul_scalar(a, pick(w, 0)) + tp.mul_scalar(b, pick(w, 1));
}

inline Var flat_cell_step(Tape& tp, Var h_prev, Var e, double t_prev, double t_cur,
                          double age_norm, const ModelVars& v, const ModelConfig& cfg) {
    Var eps = time_coefficient(tp, age_norm, v.tnode);
    Var h_ev = evolve_flat(h_prev, t_prev, t_cur, eps, v.tnode, cfg.solver);
    if (cfg.gate == GateMode::None) return h_ev;
    double dt = t_cur - t_prev;
    int p = cfg.packed_dim();
    Var z{};
    if (cfg.gate == GateMode::Attention) {
        Var q = tp.matmul(v.argru.wq, h_ev);
        Var k = tp.matmul(v.argru.wk, e);
        Var val = tp.matmul(v.argru.wv, e);
        Var scores = tp.scale(tp.matmul(tp.reshape(q, {p, 1}), tp.reshape(k, {1, p})),
                              1.0 / std::sqrt(p));
        z = tp.sigmoid(tp.matmul(tp.softmax_rows(scores), val));
    } else {
        z = tp.sigmoid(flat_wfm(tp, e, h_ev, v.argru.wz_logits) + v.argru.bz_log);
    }
    if (cfg.interval_scaling) {
        Var decay = tp.exp(tp.scale(tp.softplus(v.argru.theta), -dt));
        z = tp.mul_scalar(z, decay);
    }
    z = tp.clamp_min(z, 1e-6);
    Var r = tp.sigmoid(flat_wfm(tp, e, h_ev, v.argru.wr_logits) + v.argru.br_log);
    Var l = flat_wfm(tp, e, r + h_ev, v.argru.wl_logits) + v.argru.bl_log;
    Var hbar = tp.tanh(l);
    Var one_minus = tp.scale(z, -1.0) + 1.0;
    return tp.mul(one_minus, h_ev) + tp.mul(z, hbar);
}

} // namespace model_detail

// Run one subject: feed `visits`, supervise per visit, and forecast at
// `target_age_years` (normalized internally).
inline SubjectForward forward_subject(Tape& tp, const ModelVars& v, const ModelConfig& cfg,
                                      const TimeNormalization& tn,
                                      const std::vector<const VisitRecord*>& visits,
                                      double target_age_years) {
    if (visits.empty()) throw std::invalid_argument("forward_subject: no input visits");
    SubjectForward out;
    double target_t = tn.normalize(target_age_years);

    std::vector<Var> encoded;
    std::vector<double> times, ages;
    for (const VisitRecord* visit : visits) {
        Var features{};
        if (cfg.volume_extent > 0) {
            int ext = cfg.volume_extent;
            features = extract_features(tp.constant(Tensor({ext, ext, ext}, visit->payload)),
                                        v.extractor);
        } else {
            if (static_cast<int>(visit->payload.size()) != cfg.feature_dim)
                throw std::invalid_argument("forward: payload length " +
                                            std::to_string(visit->payload.size()) +
                                            " != feature_dim " + std::to_string(cfg.feature_dim));
            features = tp.constant(Tensor::from_vector(visit->payload));
        }
        if (cfg.aux_ce && cfg.input == InputMode::Rmm)
            out.aux_probs.push_back(model_detail::aux_head(v, cfg, features));
        Var fused = fuse(features, visit->scores, visit->score_mask);
        Var e{};
        if (cfg.input == InputMode::Rmm) {
            e = to_manifold(lift_channels(fused, v.rmm), v.rmm.ridge);
        } else {
            Var t = affine(v.flat_w, fused, v.flat_b);
            e = cfg.geometry == GeometryMode::Manifold
                    ? chol::exp_tangent_packed(t, cfg.manifold_dim)
                    : t;
        }
        encoded.push_back(e);
        times.push_back(tn.normalize(visit->age));
        ages.push_back(tn.normalize(visit->age));
    }

    auto decode_state = [&](Var h) {
        return cfg.geometry == GeometryMode::Manifold ? decode(h, v.decoder)
                                                      : decode_flat(h, v.decoder);
    };

    if (cfg.geometry == GeometryMode::Manifold) {
        SequenceInput in;
        in.times = times;
        in.observations = encoded;
        in.age_norms = ages;
        auto seq = run_sequence(tp, in, target_t, ages.front(), cfg.manifold_dim, v.argru,
                                v.tnode, cfg.solver, cfg.argru_options());
        for (Var h : seq.hidden) out.per_visit.push_back(decode_state(h));
        out.target = decode_state(seq.extrapolated);
    } else {
        Var h = tp.constant(Tensor::zeros({cfg.packed_dim()}));
        double t_prev = times.front(), age_prev = ages.front();
        for (size_t j = 0; j < encoded.size(); ++j) {
            h = model_detail::flat_cell_step(tp, h, encoded[j], t_prev, times[j], age_prev, v,
                                             cfg);
            out.per_visit.push_back(decode_state(h));
            t_prev = times[j];
            age_prev = ages[j];
        }
        Var eps = time_coefficient(tp, age_prev, v.tnode);
        h = evolve_flat(h, t_prev, target_t, eps, v.tnode, cfg.solver);
        out.target = decode_state(h);
    }
    return out;
}

// ---- persistence: flat f64 binary with a shape header ----

inline void save_params(ModelParams& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_params: cannot open " + path);
    auto refs = trainable_params(m);
    const char magic[8] = {'R', 'T', 'N', 'A', 'G', 'P', 'R', '1'};
    f.write(magic, 8);
    auto w32 = [&](std::uint32_t x) { f.write(reinterpret_cast<const char*>(&x), 4); };
    auto w64 = [&](double x) { f.write(reinterpret_cast<const char*>(&x), 8); };
    w32(static_cast<std::uint32_t>(refs.size()));
    w64(m.time_norm.age_mean);
    w64(m.time_norm.age_std);
    for (const ParamRef& r : refs) {
        w32(static_cast<std::uint32_t>(r.name.size()));
        f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        w32(static_cast<std::uint32_t>(r.tensor->shape.size()));
        for (int d : r.tensor->shape) w32(static_cast<std::uint32_t>(d));
        for (double x : r.tensor->data) w64(x);
    }
    if (!f) throw std::runtime_error("save_params: write failed for " + path);
}

// Loads into a ModelParams initialized with the same configuration; names
// and shapes must match the live registry.
inline void load_params(ModelParams& m, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_params: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "RTNAGPR1", 8) != 0)
        throw std::runtime_error("load_params: bad magic in " + path);
    auto r32 = [&]() {
        std::uint32_t x = 0;
        f.read(reinterpret_cast<char*>(&x), 4);
        return x;
    };
    auto r64 = [&]() {
        double x = 0;
        f.read(reinterpret_cast<char*>(&x), 8);
        return x;
    };
    std::uint32_t count = r32();
    m.time_norm.age_mean = r64();
    m.time_norm.age_std = r64();
    auto refs = trainable_params(m);
    if (count != refs.size())
        throw std::runtime_error("load_params: file has " + std::to_string(count) +
                                 " tensors, model expects " + std::to_string(refs.size()));
    for (ParamRef& r : refs) {
        std::uint32_t nlen = r32();
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        if (name != r.name)
            throw std::runtime_error("load_params: tensor '" + name + "' where '" + r.name +
                                     "' expected (config mismatch)");
        std::uint32_t nd = r32();
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < nd; ++d) shape.push_back(static_cast<int>(r32()));
        if (shape != r.tensor->shape)
            throw std::runtime_error("load_params: shape mismatch for '" + name + "'");
        for (double& x : r.tensor->data) x = r64();
    }
    if (!f) throw std::runtime_error("load_params: truncated file " + path);
}

} // namespace rtnag
