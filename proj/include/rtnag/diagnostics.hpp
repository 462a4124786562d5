#pragma once

#include <vector>

#include "rtnag/gradcheck.hpp"
#include "rtnag/train.hpp"

namespace rtnag {

// Finite-difference check of the full training objective against the tape's
// reverse pass, over every live parameter tensor. Used by the gradcheck CLI
// command and the acceptance gate.
// `at` optionally supplies the parameter point (e.g. after a few training
// steps, where every live gradient is well above the finite-difference noise
// floor); by default the check runs at the seeded initialization.
inline GradCheckReport full_model_gradient_check(const ExperimentConfig& cfg,
                                                 const std::vector<const SubjectSequence*>& subjects,
                                                 double h = 1e-4,
                                                 const ModelParams* at = nullptr) {
    cfg.validate();
    ModelParams proto = at ? *at : ModelParams::init(cfg.model, cfg.seed);
    if (!at) proto.time_norm = TimeNormalization::fit(subjects);
    LossConfig lc = train_detail::make_loss_config(cfg, subjects);

    std::vector<Tensor> init;
    for (const ParamRef& r : trainable_params(proto)) init.push_back(*r.tensor);

    auto build = [&](Tape& tp, const std::vector<Var>& ps) {
        ModelVars mv = assemble_model_vars(tp, cfg.model, ps, cfg.model.ridge);
        std::vector<VisitSupervision> sites;
        for (const SubjectSequence* s : subjects) {
            std::vector<const VisitRecord*> fed;
            for (size_t j = 0; j + 1 < s->visits.size(); ++j) fed.push_back(&s->visits[j]);
            const VisitRecord& target = s->visits.back();
            SubjectForward fwd =
                forward_subject(tp, mv, cfg.model, proto.time_norm, fed, target.age);
            train_detail::collect_sites(fwd, fed, target, cfg.final_only, sites);
        }
        return total_loss(tp, sites, lc);
    };
    return gradient_check(build, init, h);
}

// Desk-scale fixture for the gradient suite: two subjects, three visits each.
inline std::vector<SubjectSequence> gradcheck_fixture(int feature_dim, std::uint64_t seed) {
    CohortConfig cc;
    cc.n_subjects = 10;
    cc.feature_dim = feature_dim;
    cc.seed = seed;
    Cohort cohort = generate_cohort(cc);
    std::vector<SubjectSequence> out;
    for (int i = 0; i < 2; ++i) {
        SubjectSequence s = cohort.subjects[static_cast<size_t>(i)];
        s.visits.resize(3);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace rtnag
