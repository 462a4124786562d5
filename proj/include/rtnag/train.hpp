#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rtnag/model.hpp"
#include "rtnag/objectives.hpp"

// Training loop, cross-validation, the paper-shaped sweeps, and CSV
// reporting. Everything here is a deterministic function of (config, seed,
// dataset); wall-clock time is the one measured, non-derived column.
namespace rtnag {

struct ExperimentConfig {
    ModelConfig model;
    double lr = 0.001;
    int epochs = 100;
    int batch_size = 16;
    int folds = 5;
    std::uint64_t seed = 1;
    double gamma = 2.0;
    double lambda_reg = 1.0;
    double lambda_ce = 1.0;
    bool alpha_inverse_freq = true; // else uniform class weights
    bool final_only = false;        // supervise only the held-out final visit

    void validate() const {
        if (!(lr >= 0.0)) throw std::invalid_argument("experiment: lr must be >= 0");
        if (epochs < 0) throw std::invalid_argument("experiment: epochs must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("experiment: batch_size must be >= 1");
        if (folds < 2) throw std::invalid_argument("experiment: folds must be >= 2");
        model.validate();
    }
};

class Adam {
public:
    Adam(double lr, size_t n_params) : lr_(lr), m_(n_params), v_(n_params) {}

    void step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads) {
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i].tensor;
            const Tensor& g = grads[i];
            auto& m = m_[i];
            auto& v = v_[i];
            if (m.empty()) {
                m.assign(p.data.size(), 0.0);
                v.assign(p.data.size(), 0.0);
            }
            for (size_t j = 0; j < p.data.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g.data[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g.data[j] * g.data[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                p.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainResult {
    ModelParams params;
    std::vector<double> loss_curve; // mean batch loss per epoch
};

namespace train_detail {

// Supervision sites for one subject: each fed visit (nowcast) unless
// final_only, plus the held-out final visit (forecast).
inline void collect_sites(const SubjectForward& fwd,
                          const std::vector<const VisitRecord*>& fed, const VisitRecord& target,
                          bool final_only, std::vector<VisitSupervision>& sites) {
    if (!final_only) {
        for (size_t j = 0; j < fed.size(); ++j) {
            VisitSupervision s;
            s.class_probs = fwd.per_visit[j].class_probs;
            s.label = fed[j]->label;
            s.label_observed = fed[j]->label_mask != 0;
            s.scores = fwd.per_visit[j].scores;
            s.score_target = fed[j]->scores;
            s.score_mask = fed[j]->score_mask;
            if (!fwd.aux_probs.empty()) s.aux_probs = fwd.aux_probs[j];
            sites.push_back(s);
        }
    }
    VisitSupervision s;
    s.class_probs = fwd.target.class_probs;
    s.label = target.label;
    s.label_observed = target.label_mask != 0;
    s.scores = fwd.target.scores;
    s.score_target = target.scores;
    s.score_mask = target.score_mask;
    sites.push_back(s);
}

inline LossConfig make_loss_config(const ExperimentConfig& cfg,
                                   const std::vector<const SubjectSequence*>& subjects) {
    std::vector<int> labels;
    for (const auto* s : subjects)
        for (const auto& v : s->visits)
            if (v.label_mask) labels.push_back(v.label);
    LossConfig lc = cfg.alpha_inverse_freq && !labels.empty()
                        ? LossConfig::inverse_frequency(labels, kClasses)
                        : LossConfig::uniform(kClasses);
    lc.gamma = cfg.gamma;
    lc.lambda_reg = cfg.lambda_reg;
    lc.lambda_ce = cfg.lambda_ce;
    return lc;
}

} // namespace train_detail

// Adam on the combined objective; deterministic given (config, seed, data).
inline TrainResult train(const ExperimentConfig& cfg,
                         const std::vector<const SubjectSequence*>& subjects) {
    cfg.validate();
    if (subjects.empty()) throw std::invalid_argument("train: empty split");
    for (const auto* s : subjects)
        if (s->visits.size() < 2)
            throw std::invalid_argument("train: subject " + std::to_string(s->subject_id) +
                                        " has fewer than 2 visits");

    TrainResult res;
    res.params = ModelParams::init(cfg.model, cfg.seed);
    res.params.time_norm = TimeNormalization::fit(subjects);
    LossConfig lc = train_detail::make_loss_config(cfg, subjects);

    auto refs = trainable_params(res.params);
    Adam opt(cfg.lr, refs.size());
    std::vector<int> order(subjects.size());
    std::iota(order.begin(), order.end(), 0);

    Tape tp;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle = Rng::fork(cfg.seed, 0xE000000 + static_cast<std::uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(shuffle.uniform_int(static_cast<int>(i)))]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            tp.clear();
            ModelVars mv = bind_model(tp, res.params, true);
            std::vector<VisitSupervision> sites;
            size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            for (size_t k = start; k < stop; ++k) {
                const SubjectSequence* s = subjects[static_cast<size_t>(order[k])];
                std::vector<const VisitRecord*> fed;
                for (size_t j = 0; j + 1 < s->visits.size(); ++j) fed.push_back(&s->visits[j]);
                const VisitRecord& target = s->visits.back();
                SubjectForward fwd = forward_subject(tp, mv, cfg.model, res.params.time_norm,
                                                     fed, target.age);
                train_detail::collect_sites(fwd, fed, target, cfg.final_only, sites);
            }
            Var loss = total_loss(tp, sites, lc);
            double lv = tp.val(loss).data[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("train: loss diverged (non-finite) at epoch " +
                                         std::to_string(epoch));
            tp.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(refs.size());
            for (size_t gi = 0; gi < refs.size(); ++gi) grads.push_back(tp.grad(mv.ordered[gi]));
            opt.step(refs, grads);
            epoch_loss += lv;
            ++batches;
        }
        res.loss_curve.push_back(batches ? epoch_loss / batches : 0.0);
    }
    return res;
}

// ---- evaluation ----

struct EvalItem {
    std::vector<const VisitRecord*> fed;
    const VisitRecord* target = nullptr;
};

// Standard task: feed all visits but the last, forecast the last.
inline std::vector<EvalItem> standard_items(const std::vector<const SubjectSequence*>& subjects) {
    std::vector<EvalItem> items;
    for (const auto* s : subjects) {
        if (s->visits.size() < 2) continue;
        EvalItem it;
        for (size_t j = 0; j + 1 < s->visits.size(); ++j) it.fed.push_back(&s->visits[j]);
        it.target = &s->visits.back();
        items.push_back(std::move(it));
    }
    return items;
}

// Horizon task: feed visits within `horizon_months` of baseline, forecast the
// next retained visit beyond it. Subjects without such a pair are skipped.
inline std::vector<EvalItem> horizon_items(const std::vector<const SubjectSequence*>& subjects,
                                           int horizon_months) {
    std::vector<EvalItem> items;
    for (const auto* s : subjects) {
        double base = s->visits.front().month;
        EvalItem it;
        for (const auto& v : s->visits) {
            if (v.month - base <= horizon_months) it.fed.push_back(&v);
            else if (it.target == nullptr) it.target = &v;
        }
        if (!it.fed.empty() && it.target != nullptr) items.push_back(std::move(it));
    }
    return items;
}

struct EvalResult {
    double mauc = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    std::array<double, kScores> mape{}, r2{};
    int n_items = 0;
    int n_labeled = 0;
};

inline EvalResult evaluate(ModelParams& params, const std::vector<EvalItem>& items) {
    const ModelConfig& cfg = params.config;
    std::vector<std::vector<double>> probs;
    std::vector<int> preds, labels;
    std::array<std::vector<double>, kScores> sp, st;
    std::array<std::vector<char>, kScores> sm;
    EvalResult res;
    Tape tp;
    for (const EvalItem& it : items) {
        tp.clear();
        ModelVars mv = bind_model(tp, params, false);
        SubjectForward fwd =
            forward_subject(tp, mv, cfg, params.time_norm, it.fed, it.target->age);
        const Tensor& p = tp.val(fwd.target.class_probs);
        const Tensor& s = tp.val(fwd.target.scores);
        ++res.n_items;
        if (it.target->label_mask) {
            probs.push_back(p.data);
            int am = 0;
            for (int c = 1; c < kClasses; ++c)
                if (p.data[static_cast<size_t>(c)] > p.data[static_cast<size_t>(am)]) am = c;
            preds.push_back(am);
            labels.push_back(it.target->label);
            ++res.n_labeled;
        }
        for (int k = 0; k < kScores; ++k) {
            sp[static_cast<size_t>(k)].push_back(s.data[static_cast<size_t>(k)]);
            st[static_cast<size_t>(k)].push_back(it.target->scores[static_cast<size_t>(k)]);
            sm[static_cast<size_t>(k)].push_back(it.target->score_mask[static_cast<size_t>(k)]);
        }
    }
    if (labels.empty()) throw std::runtime_error("evaluate: no labeled targets");
    res.mauc = mauc(probs, labels);
    PrfReport prf = precision_recall_f1(preds, labels, kClasses);
    res.precision = prf.precision;
    res.recall = prf.recall;
    res.f1 = prf.f1;
    for (int k = 0; k < kScores; ++k) {
        res.mape[static_cast<size_t>(k)] = mape(sp[static_cast<size_t>(k)], st[static_cast<size_t>(k)], sm[static_cast<size_t>(k)]);
        res.r2[static_cast<size_t>(k)] = r2(sp[static_cast<size_t>(k)], st[static_cast<size_t>(k)], sm[static_cast<size_t>(k)]);
    }
    return res;
}

// ---- folds ----

// Deterministic subject-level partition; the remainder goes to the last fold.
inline std::vector<std::vector<int>> make_folds(int n_subjects, int folds, std::uint64_t seed) {
    if (folds < 2 || folds > n_subjects)
        throw std::invalid_argument("make_folds: need 2 <= folds <= subjects");
    std::vector<int> order(static_cast<size_t>(n_subjects));
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::fork(seed, 0xF01D5);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
    std::vector<std::vector<int>> out(static_cast<size_t>(folds));
    int per = n_subjects / folds;
    int at = 0;
    for (int f = 0; f < folds; ++f) {
        int take = (f == folds - 1) ? n_subjects - at : per;
        for (int k = 0; k < take; ++k) out[static_cast<size_t>(f)].push_back(order[static_cast<size_t>(at++)]);
    }
    // split hygiene: exact partition, no leakage
    std::vector<char> seen(static_cast<size_t>(n_subjects), 0);
    for (const auto& f : out)
        for (int i : f) {
            if (seen[static_cast<size_t>(i)]) throw std::logic_error("make_folds: subject leaked across folds");
            seen[static_cast<size_t>(i)] = 1;
        }
    for (char c : seen)
        if (!c) throw std::logic_error("make_folds: subject missing from partition");
    return out;
}

// ---- reporting ----

struct MetricRow {
    std::string experiment;
    std::string case_name;
    int fold = 0;
    double mauc = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    std::array<double, kScores> mape{}, r2{};
    double wall_s = 0.0;
};

struct LossCurve {
    std::string tag; // file stem
    std::vector<double> values;
};

struct RunReport {
    std::vector<MetricRow> rows;
    std::vector<LossCurve> curves;
    std::vector<std::string> notes;
    std::uint64_t dataset_hash = 0;
};

inline MetricRow make_row(const std::string& experiment, const std::string& case_name, int fold,
                          const EvalResult& ev, double wall_s) {
    MetricRow r;
    r.experiment = experiment;
    r.case_name = case_name;
    r.fold = fold;
    r.mauc = ev.mauc;
    r.precision = ev.precision;
    r.recall = ev.recall;
    r.f1 = ev.f1;
    r.mape = ev.mape;
    r.r2 = ev.r2;
    r.wall_s = wall_s;
    return r;
}

inline constexpr const char* kMetricsHeader =
    "experiment,case,fold,mauc,precision,recall,f1,mape_mmse,mape_adas11,mape_adas13,"
    "r2_mmse,r2_adas11,r2_adas13,wall_s";

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("report: cannot open " + path);
    f << kMetricsHeader << "\n";
    for (const MetricRow& r : rows) {
        f << r.experiment << ',' << r.case_name << ',' << r.fold;
        for (double v : {r.mauc, r.precision, r.recall, r.f1, r.mape[0], r.mape[1], r.mape[2],
                         r.r2[0], r.r2[1], r.r2[2]})
            f << ',' << format_metric(v);
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", r.wall_s);
        f << ',' << buf << "\n";
    }
    if (!f) throw std::runtime_error("report: write failed for " + path);
}

inline void write_loss_curve_csv(const LossCurve& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("report: cannot open " + path);
    f << "epoch,loss\n";
    for (size_t i = 0; i < c.values.size(); ++i)
        f << i << ',' << format_metric(c.values[i]) << "\n";
}

// Mean mAUC over the rows of one (experiment, case) group.
inline double group_mean_mauc(const RunReport& rep, const std::string& experiment,
                              const std::string& case_name) {
    double sum = 0.0;
    int n = 0;
    for (const MetricRow& r : rep.rows)
        if (r.experiment == experiment && r.case_name == case_name) {
            sum += r.mauc;
            ++n;
        }
    if (n == 0) throw std::invalid_argument("report: no rows for " + experiment + "/" + case_name);
    return sum / n;
}

// mean +/- std summary per (experiment, case), recomputable from the rows.
inline std::string summary_text(const RunReport& rep) {
    std::ostringstream os;
    std::vector<std::string> keys;
    for (const MetricRow& r : rep.rows) {
        std::string k = r.experiment + "/" + r.case_name;
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    os << "dataset_hash=" << std::hex << rep.dataset_hash << std::dec << "\n";
    for (const std::string& k : keys) {
        auto stat = [&](auto pick) {
            double sum = 0.0, sum2 = 0.0;
            int n = 0;
            for (const MetricRow& r : rep.rows)
                if (r.experiment + "/" + r.case_name == k) {
                    double v = pick(r);
                    sum += v;
                    sum2 += v * v;
                    ++n;
                }
            double mean = sum / n;
            double var = std::max(0.0, sum2 / n - mean * mean);
            std::ostringstream s;
            s << format_metric(mean) << " +/- " << format_metric(std::sqrt(var));
            return s.str();
        };
        os << k << ": mauc " << stat([](const MetricRow& r) { return r.mauc; }) << ", f1 "
           << stat([](const MetricRow& r) { return r.f1; }) << ", mape_mean "
           << stat([](const MetricRow& r) { return (r.mape[0] + r.mape[1] + r.mape[2]) / 3.0; })
           << "\n";
    }
    for (const std::string& n : rep.notes) os << "note: " << n << "\n";
    return os.str();
}

inline std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("hash: cannot open " + path);
    std::uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!f) break;
    }
    return h;
}

// ---- experiment drivers ----

namespace train_detail {

inline std::vector<const SubjectSequence*> all_subjects(const Cohort& c) {
    std::vector<const SubjectSequence*> out;
    for (const auto& s : c.subjects) out.push_back(&s);
    return out;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace train_detail

// Per-fold train/eval; rows aggregate into the report.
inline RunReport crossvalidate(const ExperimentConfig& cfg, const Cohort& cohort,
                               const std::string& experiment = "cv",
                               const std::string& case_name = "full") {
    cfg.validate();
    auto subjects = train_detail::all_subjects(cohort);
    auto folds = make_folds(static_cast<int>(subjects.size()), cfg.folds, cfg.seed);
    RunReport rep;
    for (int f = 0; f < cfg.folds; ++f) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<char> in_test(subjects.size(), 0);
        for (int i : folds[static_cast<size_t>(f)]) in_test[static_cast<size_t>(i)] = 1;
        std::vector<const SubjectSequence*> train_split, test_split;
        for (size_t i = 0; i < subjects.size(); ++i)
            (in_test[i] ? test_split : train_split).push_back(subjects[i]);
        ExperimentConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed + static_cast<std::uint64_t>(f);
        TrainResult tr = train(fold_cfg, train_split);
        EvalResult ev = evaluate(tr.params, standard_items(test_split));
        rep.rows.push_back(make_row(experiment, case_name, f, ev,
                                    train_detail::seconds_since(t0)));
        LossCurve curve;
        curve.tag = experiment + "_" + case_name + "_fold" + std::to_string(f);
        curve.values = tr.loss_curve;
        rep.curves.push_back(std::move(curve));
    }
    return rep;
}

inline std::string missing_rate_tag(double rate) {
    std::ostringstream tag;
    tag << "m" << rate;
    return tag.str();
}

// Missing-rate sweep: inject additional missingness, retrain, report per
// rate. A note records whether mean mAUC stays monotone non-increasing
// within the 0.02 tolerance.
inline RunReport sweep_missing(const ExperimentConfig& cfg, const Cohort& cohort,
                               const std::vector<double>& rates = {0.0, 0.1, 0.3, 0.5}) {
    RunReport rep;
    int idx = 0;
    for (double rate : rates) {
        Cohort injected = inject_missingness(
            cohort, rate, cfg.seed ^ (0xA11CE000ULL + static_cast<std::uint64_t>(idx)));
        RunReport sub = crossvalidate(cfg, injected, "sweep-missing", missing_rate_tag(rate));
        for (auto& r : sub.rows) rep.rows.push_back(std::move(r));
        for (auto& c : sub.curves) rep.curves.push_back(std::move(c));
        ++idx;
    }
    bool monotone = true;
    double prev = 2.0;
    for (double rate : rates) {
        double mean = group_mean_mauc(rep, "sweep-missing", missing_rate_tag(rate));
        if (mean > prev + 0.02) monotone = false;
        prev = mean;
    }
    rep.notes.push_back(std::string("mauc_monotone_within_0.02=") + (monotone ? "yes" : "no"));
    return rep;
}

// Horizon sweep: train per fold on full sequences, evaluate each horizon on
// the held-out fold.
inline RunReport sweep_horizon(const ExperimentConfig& cfg, const Cohort& cohort,
                               const std::vector<int>& years = {1, 2, 3, 4, 5}) {
    cfg.validate();
    auto subjects = train_detail::all_subjects(cohort);
    auto folds = make_folds(static_cast<int>(subjects.size()), cfg.folds, cfg.seed);
    RunReport rep;
    for (int f = 0; f < cfg.folds; ++f) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<char> in_test(subjects.size(), 0);
        for (int i : folds[static_cast<size_t>(f)]) in_test[static_cast<size_t>(i)] = 1;
        std::vector<const SubjectSequence*> train_split, test_split;
        for (size_t i = 0; i < subjects.size(); ++i)
            (in_test[i] ? test_split : train_split).push_back(subjects[i]);
        ExperimentConfig fold_cfg = cfg;
        fold_cfg.seed = cfg.seed + static_cast<std::uint64_t>(f);
        TrainResult tr = train(fold_cfg, train_split);
        double train_wall = train_detail::seconds_since(t0);
        for (int y : years) {
            auto items = horizon_items(test_split, 12 * y);
            std::string tag = "y" + std::to_string(y);
            if (items.empty()) {
                rep.notes.push_back("horizon " + tag + " fold " + std::to_string(f) +
                                    " skipped: no eligible subjects");
                continue;
            }
            try {
                EvalResult ev = evaluate(tr.params, items);
                MetricRow row = make_row("sweep-horizon", tag, f, ev, train_wall);
                rep.rows.push_back(row);
                rep.notes.push_back("horizon " + tag + " fold " + std::to_string(f) +
                                    " eligible=" + std::to_string(items.size()));
            } catch (const std::exception& e) {
                rep.notes.push_back("horizon " + tag + " fold " + std::to_string(f) +
                                    " skipped: " + e.what());
            }
        }
        LossCurve curve;
        curve.tag = "sweep-horizon_fold" + std::to_string(f);
        curve.values = tr.loss_curve;
        rep.curves.push_back(std::move(curve));
    }
    return rep;
}

// Ablation case table. Every case runs on identical folds and fold seeds.
inline ExperimentConfig ablation_config(const ExperimentConfig& base, const std::string& name) {
    ExperimentConfig cfg = base;
    if (name == "full") {
    } else if (name == "no-rmm-vector-input") {
        cfg.model.input = InputMode::Flat;
    } else if (name == "plain-node") {
        cfg.model.time = TimeMode::Plain;
    } else if (name == "no-argru") {
        cfg.model.gate = GateMode::None;
    } else if (name == "plain-gate") {
        cfg.model.gate = GateMode::PlainWfm;
        cfg.model.interval_scaling = false;
    } else if (name == "euclidean") {
        cfg.model.geometry = GeometryMode::Euclidean;
        cfg.model.input = InputMode::Flat;
    } else {
        throw std::invalid_argument("ablate: unknown case '" + name + "'");
    }
    return cfg;
}

inline RunReport ablate(const ExperimentConfig& cfg, const Cohort& cohort,
                        const std::vector<std::string>& cases = {
                            "no-rmm-vector-input", "plain-node", "no-argru", "plain-gate",
                            "full", "euclidean"}) {
    RunReport rep;
    for (const std::string& name : cases) {
        RunReport sub = crossvalidate(ablation_config(cfg, name), cohort, "ablate", name);
        for (auto& r : sub.rows) rep.rows.push_back(std::move(r));
        for (auto& c : sub.curves) rep.curves.push_back(std::move(c));
    }
    return rep;
}

// Writes the metrics CSV, per-run loss curves, and the summary text file.
inline void write_report(const RunReport& rep, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_metrics_csv(rep.rows, out_dir + "/metrics.csv");
    for (const LossCurve& c : rep.curves)
        write_loss_curve_csv(c, out_dir + "/loss_" + c.tag + ".csv");
    std::ofstream f(out_dir + "/summary.txt", std::ios::binary);
    f << summary_text(rep);
}

} // namespace rtnag
