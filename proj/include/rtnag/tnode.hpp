#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "rtnag/geometry.hpp"
#include "rtnag/nn.hpp"
#include "rtnag/tape.hpp"

// Time-aware neural ODE on the manifold. Integration runs in packed log
// coordinates where the space is flat, so the exponential map restores a
// valid point no matter what the field does. The learnable coefficient
// epsilon, produced from age by the time encoder, scales the field inside
// the integrand.
namespace rtnag {

enum class OdeMethod { Euler, Rk4 };

inline OdeMethod ode_method_from_string(const std::string& s) {
    if (s == "euler") return OdeMethod::Euler;
    if (s == "rk4") return OdeMethod::Rk4;
    throw std::invalid_argument("solver method must be 'euler' or 'rk4', got '" + s + "'");
}

struct SolverConfig {
    OdeMethod method = OdeMethod::Rk4;
    double h_max = 0.25; // max step, normalized time units

    void validate() const {
        if (!(h_max > 0.0)) throw std::invalid_argument("solver: h_max must be > 0");
    }
};

struct TnodeParams {
    Tensor field_w1, field_b1; // [hidden x (P+1)], [hidden]
    Tensor field_w2, field_b2; // [P x hidden], [P]
    Tensor enc_w, enc_b;       // time encoder affine, scalars

    static TnodeParams init(int packed_dim, int hidden, Rng& rng) {
        TnodeParams p;
        p.field_w1 = randn({hidden, packed_dim + 1}, 1.0 / std::sqrt(packed_dim + 1.0), rng);
        p.field_b1 = Tensor::zeros({hidden});
        p.field_w2 = randn({packed_dim, hidden}, 0.01, rng);
        p.field_b2 = Tensor::zeros({packed_dim});
        p.enc_w = Tensor::zeros({1});
        // softplus(enc_b) = 1: the rate coefficient starts neutral
        p.enc_b = Tensor::full({1}, std::log(std::exp(1.0) - 1.0));
        return p;
    }
};

struct TnodeVars {
    Var field_w1, field_b1, field_w2, field_b2;
    Var enc_w, enc_b;
};

// epsilon = softplus(w * age_norm + b) > 0.
inline Var time_coefficient(Tape& tp, double age_norm, const TnodeVars& p) {
    if (!std::isfinite(age_norm))
        throw std::invalid_argument("time_coefficient: age must be finite");
    return tp.softplus(tp.scale(p.enc_w, age_norm) + p.enc_b);
}

// Field value in packed log coordinates: epsilon * MLP([y; t]).
inline Var vector_field(Tape& tp, double t, Var y, Var eps, const TnodeVars& p) {
    Var z = tp.concat({y, tp.constant_scalar(t)});
    Var h = tp.tanh(affine(p.field_w1, z, p.field_b1));
    return tp.mul_scalar(affine(p.field_w2, h, p.field_b2), eps);
}

// Fixed-step explicit integration of dy/dt = field(t, y) over [t0, t1] with
// n = max(1, ceil((t1 - t0) / h_max)) steps. The field is any callable
// (double t, Var y) -> Var, so the solver is testable against scalar ODEs.
template <class Field>
Var integrate(Tape& tp, Var y0, double t0, double t1, const SolverConfig& cfg, Field&& field) {
    cfg.validate();
    if (t1 < t0)
        throw std::invalid_argument("integrate: t1 " + std::to_string(t1) + " < t0 " +
                                    std::to_string(t0));
    if (t1 == t0) return y0;
    int n = std::max(1, static_cast<int>(std::ceil((t1 - t0) / cfg.h_max)));
    double h = (t1 - t0) / n;
    Var y = y0;
    for (int i = 0; i < n; ++i) {
        double t = t0 + i * h;
        if (cfg.method == OdeMethod::Euler) {
            y = y + tp.scale(field(t, y), h);
        } else {
            Var k1 = field(t, y);
            Var k2 = field(t + 0.5 * h, y + tp.scale(k1, 0.5 * h));
            Var k3 = field(t + 0.5 * h, y + tp.scale(k2, 0.5 * h));
            Var k4 = field(t + h, y + tp.scale(k3, h));
            y = y + tp.scale(k1 + tp.scale(k2, 2.0) + tp.scale(k3, 2.0) + k4, h / 6.0);
        }
    }
    return y;
}

// Evolve a manifold point from t0 to t1. t1 == t0 returns the input
// unchanged (the identical tape node).
inline Var evolve(Var h_prev, double t0, double t1, Var eps, const TnodeVars& p,
                  const SolverConfig& cfg) {
    Tape& tp = *h_prev.tp;
    if (t1 < t0)
        throw std::invalid_argument("evolve: visits are time-ordered, got t1 " +
                                    std::to_string(t1) + " < t0 " + std::to_string(t0));
    if (t1 == t0) return h_prev;
    int q = tp.val(h_prev).rows();
    Var y0 = chol::log_point_packed(h_prev);
    Var y1 = integrate(tp, y0, t0, t1, cfg,
                       [&](double t, Var y) { return vector_field(tp, t, y, eps, p); });
    return chol::exp_tangent_packed(y1, q);
}

// Flat-space evolution for the euclidean ablation: the state itself is the
// integration variable.
inline Var evolve_flat(Var state, double t0, double t1, Var eps, const TnodeVars& p,
                       const SolverConfig& cfg) {
    Tape& tp = *state.tp;
    if (t1 < t0)
        throw std::invalid_argument("evolve: visits are time-ordered, got t1 " +
                                    std::to_string(t1) + " < t0 " + std::to_string(t0));
    if (t1 == t0) return state;
    return integrate(tp, state, t0, t1, cfg,
                     [&](double t, Var y) { return vector_field(tp, t, y, eps, p); });
}

} // namespace rtnag
