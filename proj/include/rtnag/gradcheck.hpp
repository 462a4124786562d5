#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "rtnag/rng.hpp"
#include "rtnag/tape.hpp"
#include "rtnag/tensor.hpp"

namespace rtnag {

struct GradCheckReport {
    double max_rel_err = 0.0;
    long long coords = 0;
    int worst_param = -1;
    int worst_coord = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckOptions {
    double h = 1e-5;
    // 0 checks every coordinate; otherwise a deterministic random subset of
    // this size per parameter (large tensors get expensive at 2 evals/coord)
    int max_coords_per_param = 0;
    std::uint64_t sample_seed = 12345;
};

// Central-difference check of the tape's reverse pass. The numeric side uses
// forward evaluations only, so it stays independent of every backward rule.
// Relative error denominator is max(|analytic|, |numeric|, 1e-12).
template <class BuildFn>
GradCheckReport gradient_check_opt(BuildFn&& build, const std::vector<Tensor>& params,
                                   const GradCheckOptions& opt) {
    const double h = opt.h;
    if (!(h > 0.0)) throw std::invalid_argument("gradient_check: h must be > 0");

    auto eval = [&](const std::vector<Tensor>& ps, bool with_grad,
                    std::vector<Tensor>* grads) -> double {
        Tape tp;
        std::vector<Var> vars;
        vars.reserve(ps.size());
        for (const Tensor& p : ps) vars.push_back(tp.leaf(p, with_grad));
        Var loss = build(tp, vars);
        double v = tp.val(loss).data.at(0);
        if (with_grad) {
            tp.backward(loss);
            grads->clear();
            for (Var p : vars) grads->push_back(tp.grad(p));
        }
        return v;
    };

    std::vector<Tensor> grads;
    eval(params, true, &grads);

    GradCheckReport rep;
    std::vector<Tensor> work = params;
    Rng sampler(opt.sample_seed);
    for (size_t p = 0; p < params.size(); ++p) {
        std::vector<int> coords;
        int n = params[p].numel();
        if (opt.max_coords_per_param <= 0 || n <= opt.max_coords_per_param) {
            coords.resize(static_cast<size_t>(n));
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            for (int k = 0; k < opt.max_coords_per_param; ++k)
                coords.push_back(sampler.uniform_int(n));
        }
        for (int c : coords) {
            double saved = work[p].data[static_cast<size_t>(c)];
            work[p].data[static_cast<size_t>(c)] = saved + h;
            double up = eval(work, false, nullptr);
            work[p].data[static_cast<size_t>(c)] = saved - h;
            double dn = eval(work, false, nullptr);
            work[p].data[static_cast<size_t>(c)] = saved;
            double num = (up - dn) / (2.0 * h);
            double ana = grads[p].data[static_cast<size_t>(c)];
            double denom = std::max({std::fabs(ana), std::fabs(num), 1e-12});
            double rel = std::fabs(ana - num) / denom;
            ++rep.coords;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = static_cast<int>(p);
                rep.worst_coord = c;
                rep.analytic = ana;
                rep.numeric = num;
            }
        }
    }
    return rep;
}

template <class BuildFn>
GradCheckReport gradient_check(BuildFn&& build, const std::vector<Tensor>& params,
                               double h = 1e-5) {
    GradCheckOptions opt;
    opt.h = h;
    return gradient_check_opt(std::forward<BuildFn>(build), params, opt);
}

} // namespace rtnag
