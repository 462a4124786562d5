#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtnag/tape.hpp"
#include "rtnag/tensor.hpp"

namespace rtnag {

struct LossConfig {
    std::vector<double> alpha; // per-class weights, > 0
    double gamma = 2.0;        // focal exponent, >= 0
    double lambda_reg = 1.0;   // weight of the masked MSE term
    double lambda_ce = 1.0;    // weight of the auxiliary CE term

    static LossConfig uniform(int classes) {
        LossConfig c;
        c.alpha.assign(static_cast<size_t>(classes), 1.0);
        return c;
    }

    void validate() const {
        for (double a : alpha)
            if (!(a > 0.0)) throw std::invalid_argument("loss config: alpha entries must be > 0");
        if (gamma < 0.0) throw std::invalid_argument("loss config: gamma must be >= 0");
        if (lambda_reg < 0.0 || lambda_ce < 0.0)
            throw std::invalid_argument("loss config: lambda weights must be >= 0");
    }

    // Inverse class frequency normalized to mean 1; classes absent from the
    // fold fall back to weight 1.
    static LossConfig inverse_frequency(const std::vector<int>& labels, int classes) {
        LossConfig c = uniform(classes);
        std::vector<int> count(static_cast<size_t>(classes), 0);
        for (int l : labels) count.at(static_cast<size_t>(l))++;
        double mean_inv = 0.0;
        int present = 0;
        for (int k = 0; k < classes; ++k)
            if (count[k] > 0) {
                mean_inv += 1.0 / count[k];
                ++present;
            }
        if (present == 0) return c;
        mean_inv /= present;
        for (int k = 0; k < classes; ++k)
            c.alpha[static_cast<size_t>(k)] = count[k] > 0 ? (1.0 / count[k]) / mean_inv : 1.0;
        return c;
    }
};

namespace detail {
inline void check_probs(const Tensor& p, int label) {
    if (p.ndim() != 1)
        throw std::invalid_argument("loss: probabilities must be 1-D, got " +
                                    Tensor::shape_str(p.shape));
    if (label < 0 || label >= p.numel())
        throw std::invalid_argument("loss: label " + std::to_string(label) +
                                    " outside [0, " + std::to_string(p.numel()) + ")");
    double s = std::accumulate(p.data.begin(), p.data.end(), 0.0);
    if (std::fabs(s - 1.0) > 1e-9)
        throw std::invalid_argument("loss: probabilities sum to " + std::to_string(s));
}
} // namespace detail

// -log p_label, with probabilities clamped to >= 1e-12 before the log.
inline Var cross_entropy(Var probs, int label) {
    Tape& tp = *probs.tp;
    detail::check_probs(tp.val(probs), label);
    Var p = tp.gather(tp.clamp_min(probs, 1e-12),
                      std::make_shared<const std::vector<int>>(std::vector<int>{label}));
    return tp.scale(tp.log(p), -1.0);
}

// -alpha_label (1 - p_label)^gamma log p_label. gamma = 0, alpha = 1 reduces
// exactly to cross_entropy.
inline Var focal_loss(Var probs, int label, const LossConfig& cfg) {
    Tape& tp = *probs.tp;
    const Tensor& pv = tp.val(probs);
    detail::check_probs(pv, label);
    if (static_cast<int>(cfg.alpha.size()) <= label)
        throw std::invalid_argument("focal_loss: alpha has " + std::to_string(cfg.alpha.size()) +
                                    " entries, label is " + std::to_string(label));
    Var p = tp.gather(tp.clamp_min(probs, 1e-12),
                      std::make_shared<const std::vector<int>>(std::vector<int>{label}));
    Var ce = tp.scale(tp.log(p), -1.0);
    if (cfg.gamma == 0.0) return tp.scale(ce, cfg.alpha[static_cast<size_t>(label)]);
    // (1-p)^gamma as exp(gamma log(1-p)), floored to keep the log defined
    Var onem = tp.clamp_min(tp.scale(p, -1.0) + 1.0, 1e-12);
    Var mod = tp.exp(tp.scale(tp.log(onem), cfg.gamma));
    return tp.scale(tp.mul(mod, ce), cfg.alpha[static_cast<size_t>(label)]);
}

// Squared error summed over masked cells, divided by the count of set bits.
// pred is on the tape; target and mask are plain tensors.
inline Var masked_mse(Var pred, const Tensor& target, const Tensor& mask) {
    Tape& tp = *pred.tp;
    const Tensor& pv = tp.val(pred);
    if (!pv.same_shape(target) || !pv.same_shape(mask))
        throw std::invalid_argument("masked_mse: shape mismatch, pred " +
                                    Tensor::shape_str(pv.shape) + " target " +
                                    Tensor::shape_str(target.shape) + " mask " +
                                    Tensor::shape_str(mask.shape));
    double count = std::accumulate(mask.data.begin(), mask.data.end(), 0.0);
    if (count <= 0.0) throw std::invalid_argument("masked_mse: no valid observations");
    Var diff = tp.mul(pred - tp.constant(target), tp.constant(mask));
    return tp.scale(tp.sum(diff * diff), 1.0 / count);
}

// One supervised prediction site (a fed visit or the held-out final visit).
struct VisitSupervision {
    Var class_probs;  // [C]
    int label = 0;
    bool label_observed = false;
    Var scores;       // [R]
    std::array<double, 3> score_target{};
    std::array<char, 3> score_mask{};
    Var aux_probs;    // [C]; invalid when the auxiliary head is off
};

// Combined objective over a batch of supervised sites: mean focal loss over
// the label-observed sites, lambda_reg times the masked MSE over all score
// cells, lambda_ce times the mean auxiliary cross-entropy. Terms with no
// eligible sites contribute zero.
inline Var total_loss(Tape& tp, const std::vector<VisitSupervision>& sites,
                      const LossConfig& cfg) {
    cfg.validate();
    if (sites.empty()) throw std::invalid_argument("total_loss: no supervised sites");
    Var focal_sum{}, aux_sum{};
    int n_focal = 0, n_aux = 0;
    std::vector<Var> score_preds;
    int rdim = 0;
    double mask_count = 0.0;
    std::vector<double> targets, masks;
    for (const VisitSupervision& s : sites) {
        if (s.label_observed) {
            Var f = focal_loss(s.class_probs, s.label, cfg);
            focal_sum = n_focal ? focal_sum + f : f;
            ++n_focal;
            if (s.aux_probs.valid()) {
                Var a = cross_entropy(s.aux_probs, s.label);
                aux_sum = n_aux ? aux_sum + a : a;
                ++n_aux;
            }
        }
        if (s.scores.valid()) {
            rdim = tp.val(s.scores).numel();
            score_preds.push_back(s.scores);
            for (int k = 0; k < rdim; ++k) {
                targets.push_back(s.score_target[static_cast<size_t>(k)]);
                double m = s.score_mask[static_cast<size_t>(k)] ? 1.0 : 0.0;
                masks.push_back(m);
                mask_count += m;
            }
        }
    }
    Var loss = tp.constant_scalar(0.0);
    if (n_focal > 0) loss = loss + tp.scale(focal_sum, 1.0 / n_focal);
    if (cfg.lambda_reg > 0.0 && mask_count > 0.0) {
        int t = static_cast<int>(score_preds.size());
        Var pred = tp.reshape(tp.concat(score_preds), {t, rdim});
        Var mse = masked_mse(pred, Tensor({t, rdim}, targets), Tensor({t, rdim}, masks));
        loss = loss + tp.scale(mse, cfg.lambda_reg);
    }
    if (cfg.lambda_ce > 0.0 && n_aux > 0) loss = loss + tp.scale(aux_sum, cfg.lambda_ce / n_aux);
    return loss;
}

// ---- evaluation metrics (off-tape) ----

// One-vs-rest AUC from average ranks; tied pairs contribute 1/2. Equivalent
// to the pairwise concordance count.
inline double binary_auc(const std::vector<double>& score, const std::vector<char>& positive) {
    size_t n = score.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return score[static_cast<size_t>(a)] < score[static_cast<size_t>(b)]; });
    double rank_pos = 0.0;
    long long n_pos = 0, n_neg = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && score[static_cast<size_t>(order[j])] == score[static_cast<size_t>(order[i])]) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j)); // 1-based
        for (size_t k = i; k < j; ++k)
            if (positive[static_cast<size_t>(order[k])]) rank_pos += avg_rank;
        i = j;
    }
    for (char c : positive) (c ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auc: needs both positives and negatives");
    double u = rank_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Macro average of one-vs-rest AUCs over the classes present in labels.
inline double mauc(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("mauc: score/label count mismatch");
    int classes = scores.empty() ? 0 : static_cast<int>(scores[0].size());
    std::vector<char> present(static_cast<size_t>(classes), 0);
    for (int l : labels) present.at(static_cast<size_t>(l)) = 1;
    int distinct = std::accumulate(present.begin(), present.end(), 0);
    if (distinct < 2) throw std::invalid_argument("mauc: undefined metric, single-class input");
    double acc = 0.0;
    int used = 0;
    for (int c = 0; c < classes; ++c) {
        if (!present[static_cast<size_t>(c)]) continue;
        std::vector<double> s(labels.size());
        std::vector<char> pos(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) {
            s[i] = scores[i].at(static_cast<size_t>(c));
            pos[i] = labels[i] == c;
        }
        acc += binary_auc(s, pos);
        ++used;
    }
    return acc / used;
}

struct PrfReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Macro-averaged precision / recall / F1 over classes present in labels,
// with the 0/0 -> 0 convention.
inline PrfReport precision_recall_f1(const std::vector<int>& preds, const std::vector<int>& labels,
                                     int classes) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("prf: pred/label count mismatch");
    std::vector<long long> tp(static_cast<size_t>(classes), 0), fp(static_cast<size_t>(classes), 0),
        fn(static_cast<size_t>(classes), 0);
    std::vector<char> present(static_cast<size_t>(classes), 0);
    for (size_t i = 0; i < preds.size(); ++i) {
        int p = preds[i], l = labels[i];
        if (l < 0 || l >= classes || p < 0 || p >= classes)
            throw std::invalid_argument("prf: class id outside [0, " + std::to_string(classes) + ")");
        present[static_cast<size_t>(l)] = 1;
        if (p == l) tp[static_cast<size_t>(l)]++;
        else {
            fp[static_cast<size_t>(p)]++;
            fn[static_cast<size_t>(l)]++;
        }
    }
    PrfReport r;
    int used = 0;
    for (int c = 0; c < classes; ++c) {
        if (!present[static_cast<size_t>(c)]) continue;
        double prec = (tp[c] + fp[c]) > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
        double rec = (tp[c] + fn[c]) > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
        double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        r.precision += prec;
        r.recall += rec;
        r.f1 += f1;
        ++used;
    }
    if (used == 0) throw std::invalid_argument("prf: no labels");
    r.precision /= used;
    r.recall /= used;
    r.f1 /= used;
    return r;
}

// Mean |(p-t)/t| over masked cells; targets below 1e-6 in magnitude are
// excluded (division guard).
inline double mape(const std::vector<double>& pred, const std::vector<double>& target,
                   const std::vector<char>& mask) {
    if (pred.size() != target.size() || pred.size() != mask.size())
        throw std::invalid_argument("mape: length mismatch");
    double acc = 0.0;
    long long n = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i] || std::fabs(target[i]) < 1e-6) continue;
        acc += std::fabs((pred[i] - target[i]) / target[i]);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("mape: undefined metric, no included cells");
    return acc / n;
}

// R^2 = 1 - SSE/SST with SST about the masked-target mean.
inline double r2(const std::vector<double>& pred, const std::vector<double>& target,
                 const std::vector<char>& mask) {
    if (pred.size() != target.size() || pred.size() != mask.size())
        throw std::invalid_argument("r2: length mismatch");
    double mean = 0.0;
    long long n = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (mask[i]) {
            mean += target[i];
            ++n;
        }
    if (n == 0) throw std::invalid_argument("r2: undefined metric, no masked cells");
    mean /= n;
    double sse = 0.0, sst = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        sse += (pred[i] - target[i]) * (pred[i] - target[i]);
        sst += (target[i] - mean) * (target[i] - mean);
    }
    if (sst == 0.0) return sse == 0.0 ? 1.0 : 0.0;
    return 1.0 - sse / sst;
}

} // namespace rtnag
