#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "rtnag/rng.hpp"

// Synthetic longitudinal cohort generator. One latent sigmoid progression per
// subject drives labels, cognitive scores and payloads over an irregular
// visit grid with escalating attrition, standing in for the clinical data
// this pipeline is shaped around.
namespace rtnag {

enum DiagnosisLabel : int { kCN = 0, kMCI = 1, kAD = 2 };
inline constexpr int kClasses = 3;
inline constexpr int kScores = 3; // MMSE, ADAS11, ADAS13 (normalized)

struct CohortConfig {
    int n_subjects = 200;
    std::vector<int> visit_months = {0, 6, 12, 18, 24, 36, 48, 54, 60};
    double visit_drop = 0.17;  // drop probability at baseline; grows with month
    double score_noise = 0.02; // std of the additive score noise
    double score_miss = 0.10;  // per-score mask dropout at retained visits
    double label_miss = 0.05;  // label mask dropout
    int volume_extent = 0;     // 0 = vector payload mode
    int feature_dim = 32;      // payload length O in vector mode
    std::uint64_t seed = 1;

    bool vector_mode() const { return volume_extent == 0; }
    int payload_len() const {
        return vector_mode() ? feature_dim : volume_extent * volume_extent * volume_extent;
    }

    void validate() const {
        if (n_subjects < 10) throw std::invalid_argument("cohort: n_subjects must be >= 10");
        auto prob = [](double p, const char* who) {
            if (p < 0.0 || p >= 1.0)
                throw std::invalid_argument(std::string("cohort: ") + who + " must be in [0, 1)");
        };
        prob(visit_drop, "visit_drop");
        prob(score_miss, "score_miss");
        prob(label_miss, "label_miss");
        if (score_noise < 0.0) throw std::invalid_argument("cohort: score_noise must be >= 0");
        if (visit_months.size() < 3) throw std::invalid_argument("cohort: visit grid too short");
        for (size_t i = 1; i < visit_months.size(); ++i)
            if (visit_months[i] <= visit_months[i - 1])
                throw std::invalid_argument("cohort: visit grid must be strictly increasing");
        if (volume_extent != 0) {
            int v = volume_extent;
            if (v < 8 || (v & (v - 1)) != 0)
                throw std::invalid_argument("cohort: volume extent must be a power of two >= 8");
        }
        if (feature_dim < 1) throw std::invalid_argument("cohort: feature_dim must be >= 1");
    }
};

struct VisitRecord {
    int subject_id = 0;
    double month = 0.0;
    double age = 0.0; // years
    std::vector<double> payload;
    std::array<double, kScores> scores{};
    std::array<char, kScores> score_mask{};
    int label = kCN;
    char label_mask = 1;
};

struct SubjectSequence {
    int subject_id = 0;
    double baseline_age = 0.0; // derived: first visit age minus month/12
    std::vector<VisitRecord> visits;
};

struct Cohort {
    int volume_extent = 0;
    int feature_dim = 32;
    std::vector<SubjectSequence> subjects;

    bool vector_mode() const { return volume_extent == 0; }
    long long total_visits() const {
        long long n = 0;
        for (const auto& s : subjects) n += static_cast<long long>(s.visits.size());
        return n;
    }
};

namespace cohort_detail {

inline constexpr std::uint64_t kPayloadMapSalt = 0x70617961; // payload map stream
inline constexpr std::uint64_t kShiftSalt = 0x73686966;      // shifted-cohort stream

inline double clip01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Attrition grows with follow-up month; the base rate applies at baseline.
// With the default 0.17 base this lands near the 39% five-year total the
// generator is calibrated to.
inline double drop_prob(double base, int month) {
    return std::min(base * (1.0 + month / 20.0), 0.95);
}

// The vector payload is zero-mean; the disease stage is carried entirely by
// its second-order structure: overall energy grows with s (slope 1 + b_i in
// log variance per coordinate) and the lag-1 correlation between adjacent
// coordinates sweeps monotonically with s. Both are statistics a covariance
// reader extracts directly, while a plain linear readout of the payload sees
// nothing (the mean is zero everywhere).
inline constexpr double kEnergySlope = 1.5;
inline constexpr double kCorrSwing = 1.1;

inline std::vector<double> make_payload_map(std::uint64_t seed, int dim, std::uint64_t salt) {
    Rng rng = Rng::fork(seed, salt);
    std::vector<double> a(static_cast<size_t>(dim));
    for (double& v : a) v = rng.normal(0.0, 0.5);
    return a;
}

// Latent disease stage s(t) = sigmoid(intercept + slope * t), t in years
// since baseline. The cohort mixes stable subjects (near-flat trajectories
// anchored in one stage band) with progressors (steady decline), which keeps
// the baseline mix MCI-heavy while leaving all three stages represented at
// late visits.
struct LatentTrajectory {
    double intercept = 0.0;
    double slope = 0.0;
};

inline double latent_progression(const LatentTrajectory& tr, double years) {
    return 1.0 / (1.0 + std::exp(-(tr.intercept + tr.slope * years)));
}

inline int label_of(double s) { return s < 1.0 / 3.0 ? kCN : (s < 2.0 / 3.0 ? kMCI : kAD); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct SubjectDraw {
    LatentTrajectory traj;
    double baseline_age = 0.0;
    std::vector<int> kept_months;
};

inline LatentTrajectory draw_trajectory(Rng& rng, double rho_lo, double rho_hi) {
    LatentTrajectory tr;
    if (rng.uniform() < 0.45) {
        // stable subject: pick a stage band, drift at most mildly
        double u = rng.uniform();
        double s0 = u < 0.22   ? rng.uniform(0.08, 0.30)
                    : u < 0.82 ? rng.uniform(0.36, 0.63)
                               : rng.uniform(0.70, 0.92);
        tr.intercept = logit(s0);
        tr.slope = rng.uniform(0.0, 0.1);
    } else {
        // progressor: mostly CN/MCI at baseline, declining over follow-up
        tr.slope = rng.uniform(rho_lo, rho_hi);
        tr.intercept = rng.uniform(-2.4, 0.7);
    }
    return tr;
}

} // namespace cohort_detail

struct GeneratorShift {
    double rho_lo = 0.4, rho_hi = 1.5; // progressor slope range
    double noise_scale = 1.0;
    std::uint64_t payload_salt = cohort_detail::kPayloadMapSalt;
};

inline Cohort generate_cohort_impl(const CohortConfig& cfg, const GeneratorShift& shift) {
    cfg.validate();
    using namespace cohort_detail;
    Cohort out;
    out.volume_extent = cfg.volume_extent;
    out.feature_dim = cfg.feature_dim;
    const std::vector<double> pmap =
        cfg.vector_mode() ? make_payload_map(cfg.seed, cfg.feature_dim, shift.payload_salt)
                          : std::vector<double>{};
    const double noise = cfg.score_noise * shift.noise_scale;

    for (int id = 0; id < cfg.n_subjects; ++id) {
        // spec'd sub-seed scheme: seed xor subject id; retries continue the stream
        Rng rng(cfg.seed ^ static_cast<std::uint64_t>(id));
        SubjectDraw d;
        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000)
                throw std::runtime_error("cohort: subject " + std::to_string(id) +
                                         " failed to retain 3 visits after 1000 draws");
            d.traj = draw_trajectory(rng, shift.rho_lo, shift.rho_hi);
            // quantized to 1/256 year so that age = baseline + month/12 is
            // exact in doubles for the half-year visit grid
            d.baseline_age = std::floor(rng.uniform(55.0, 85.0) * 256.0) / 256.0;
            d.kept_months.clear();
            for (int m : cfg.visit_months)
                if (!rng.bernoulli(drop_prob(cfg.visit_drop, m))) d.kept_months.push_back(m);
            if (static_cast<int>(d.kept_months.size()) >= 3) break;
        }

        SubjectSequence seq;
        seq.subject_id = id;
        for (int m : d.kept_months) {
            VisitRecord v;
            v.subject_id = id;
            v.month = m;
            v.age = d.baseline_age + m / 12.0;
            double years = m / 12.0;
            double s = latent_progression(d.traj, years);
            v.label = label_of(s);
            v.label_mask = rng.bernoulli(cfg.label_miss) ? 0 : 1;
            double base[kScores] = {1.0 - 0.6 * s, 0.1 + 0.7 * s, 0.15 + 0.7 * s};
            for (int k = 0; k < kScores; ++k) {
                v.scores[static_cast<size_t>(k)] = clip01(base[k] + rng.normal(0.0, noise));
                v.score_mask[static_cast<size_t>(k)] = rng.bernoulli(cfg.score_miss) ? 0 : 1;
            }
            if (cfg.vector_mode()) {
                v.payload.resize(static_cast<size_t>(cfg.feature_dim));
                double corr = kCorrSwing * (s - 0.5);
                double mix = std::sqrt(1.0 - corr * corr);
                double prev = rng.normal();
                for (int r = 0; r < cfg.feature_dim; ++r) {
                    double xi = rng.normal();
                    double u = mix * xi + corr * prev;
                    prev = xi;
                    double logv = (kEnergySlope + pmap[static_cast<size_t>(r)]) * (s - 0.5);
                    v.payload[static_cast<size_t>(r)] =
                        std::exp(0.5 * logv) * u + rng.normal(0.0, noise);
                }
            } else {
                int ext = cfg.volume_extent;
                double c0 = 0.5 * (ext - 1);
                double sb = ext / 4.0, sc = ext / 6.0;
                v.payload.resize(static_cast<size_t>(ext) * ext * ext);
                size_t at = 0;
                for (int z = 0; z < ext; ++z)
                    for (int y = 0; y < ext; ++y)
                        for (int x = 0; x < ext; ++x, ++at) {
                            double r2 = (z - c0) * (z - c0) + (y - c0) * (y - c0) +
                                        (x - c0) * (x - c0);
                            double blob = std::exp(-r2 / (2.0 * sb * sb));
                            double atten = 1.0 - 0.5 * s * std::exp(-r2 / (2.0 * sc * sc));
                            v.payload[at] = clip01(blob * atten + rng.normal(0.0, noise));
                        }
            }
            seq.visits.push_back(std::move(v));
        }
        seq.baseline_age = seq.visits.front().age - seq.visits.front().month / 12.0;
        out.subjects.push_back(std::move(seq));
    }
    return out;
}

inline Cohort generate_cohort(const CohortConfig& cfg) {
    return generate_cohort_impl(cfg, GeneratorShift{});
}

// Evaluation-only cohort from the same generative family with shifted
// dynamics: faster progression, noisier scores, a different payload map.
inline Cohort shifted_cohort(const CohortConfig& cfg) {
    GeneratorShift s;
    s.rho_lo = 0.5;
    s.rho_hi = 2.0;
    s.noise_scale = 1.5;
    s.payload_salt = cohort_detail::kShiftSalt;
    return generate_cohort_impl(cfg, s);
}

// Drops each retained non-baseline visit independently with probability
// extra_rate. The first visit is always kept; a subject falling below three
// visits keeps its earliest three.
inline Cohort inject_missingness(const Cohort& in, double extra_rate, std::uint64_t seed) {
    if (extra_rate < 0.0 || extra_rate >= 1.0)
        throw std::invalid_argument("inject_missingness: rate must be in [0, 1)");
    Cohort out;
    out.volume_extent = in.volume_extent;
    out.feature_dim = in.feature_dim;
    for (const SubjectSequence& s : in.subjects) {
        Rng rng = Rng::fork(seed, static_cast<std::uint64_t>(s.subject_id));
        SubjectSequence ns;
        ns.subject_id = s.subject_id;
        ns.baseline_age = s.baseline_age;
        for (size_t i = 0; i < s.visits.size(); ++i) {
            bool drop = i > 0 && extra_rate > 0.0 && rng.bernoulli(extra_rate);
            if (!drop) ns.visits.push_back(s.visits[i]);
        }
        if (ns.visits.size() < 3) {
            ns.visits.assign(s.visits.begin(),
                             s.visits.begin() + std::min<size_t>(3, s.visits.size()));
        }
        out.subjects.push_back(std::move(ns));
    }
    return out;
}

// ---- dataset file format ----
//
// JSON lines. The first line is a schema header; every following line is one
// visit, ordered by (subject id, month):
//   {"schema":"rtnag-dataset","version":1,...}
//   {"subject_id":0,"month":6.0,"age":63.5,"label":1,"label_mask":1,
//    "scores":[...],"score_mask":[...],"payload_kind":"vector","payload":[...]}

inline constexpr int kDatasetVersion = 1;

inline void write_dataset(const Cohort& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
    nlohmann::json head;
    head["schema"] = "rtnag-dataset";
    head["version"] = kDatasetVersion;
    head["n_subjects"] = c.subjects.size();
    head["volume_extent"] = c.volume_extent;
    head["feature_dim"] = c.feature_dim;
    f << head.dump() << "\n";
    for (const SubjectSequence& s : c.subjects)
        for (const VisitRecord& v : s.visits) {
            nlohmann::json j;
            j["subject_id"] = v.subject_id;
            j["month"] = v.month;
            j["age"] = v.age;
            j["label"] = v.label;
            j["label_mask"] = static_cast<int>(v.label_mask);
            j["scores"] = v.scores;
            j["score_mask"] = std::array<int, kScores>{v.score_mask[0], v.score_mask[1],
                                                       v.score_mask[2]};
            j["payload_kind"] = c.vector_mode() ? "vector" : "volume";
            j["payload"] = v.payload;
            f << j.dump() << "\n";
        }
    if (!f) throw std::runtime_error("write_dataset: write failed for " + path);
}

namespace cohort_detail {
inline const nlohmann::json& need(const nlohmann::json& j, const char* key, long long line) {
    auto it = j.find(key);
    if (it == j.end())
        throw std::runtime_error("read_dataset: line " + std::to_string(line) +
                                 ": missing required key '" + key + "'");
    return *it;
}
} // namespace cohort_detail

inline Cohort read_dataset(const std::string& path) {
    using cohort_detail::need;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_dataset: cannot open " + path);
    std::string line;
    long long lineno = 0;
    if (!std::getline(f, line)) throw std::runtime_error("read_dataset: empty file " + path);
    ++lineno;
    nlohmann::json head;
    try {
        head = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
        throw std::runtime_error("read_dataset: line 1: malformed header: " + std::string(e.what()));
    }
    if (need(head, "schema", 1) != "rtnag-dataset")
        throw std::runtime_error("read_dataset: not an rtnag dataset file");
    if (need(head, "version", 1).get<int>() != kDatasetVersion)
        throw std::runtime_error("read_dataset: schema version " +
                                 need(head, "version", 1).dump() + " != supported " +
                                 std::to_string(kDatasetVersion));
    Cohort out;
    out.volume_extent = need(head, "volume_extent", 1).get<int>();
    out.feature_dim = need(head, "feature_dim", 1).get<int>();

    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("read_dataset: line " + std::to_string(lineno) +
                                     ": malformed record: " + std::string(e.what()));
        }
        VisitRecord v;
        v.subject_id = need(j, "subject_id", lineno).get<int>();
        v.month = need(j, "month", lineno).get<double>();
        v.age = need(j, "age", lineno).get<double>();
        v.label = need(j, "label", lineno).get<int>();
        if (v.label < 0 || v.label >= kClasses)
            throw std::runtime_error("read_dataset: line " + std::to_string(lineno) +
                                     ": label out of range");
        v.label_mask = static_cast<char>(need(j, "label_mask", lineno).get<int>());
        auto sc = need(j, "scores", lineno);
        auto sm = need(j, "score_mask", lineno);
        if (sc.size() != kScores || sm.size() != kScores)
            throw std::runtime_error("read_dataset: line " + std::to_string(lineno) +
                                     ": scores/score_mask must have 3 entries");
        for (int k = 0; k < kScores; ++k) {
            v.scores[static_cast<size_t>(k)] = sc[static_cast<size_t>(k)].get<double>();
            v.score_mask[static_cast<size_t>(k)] =
                static_cast<char>(sm[static_cast<size_t>(k)].get<int>());
        }
        std::string kind = need(j, "payload_kind", lineno).get<std::string>();
        if (kind != (out.vector_mode() ? "vector" : "volume"))
            throw std::runtime_error("read_dataset: line " + std::to_string(lineno) +
                                     ": payload kind '" + kind + "' conflicts with header");
        v.payload = need(j, "payload", lineno).get<std::vector<double>>();
        int want = out.vector_mode() ? out.feature_dim
                                     : out.volume_extent * out.volume_extent * out.volume_extent;
        if (static_cast<int>(v.payload.size()) != want)
            throw std::runtime_error("read_dataset: line " + std::to_string(lineno) +
                                     ": payload length " + std::to_string(v.payload.size()) +
                                     " != expected " + std::to_string(want));
        if (out.subjects.empty() || out.subjects.back().subject_id != v.subject_id) {
            SubjectSequence s;
            s.subject_id = v.subject_id;
            out.subjects.push_back(std::move(s));
        }
        SubjectSequence& s = out.subjects.back();
        if (!s.visits.empty() && v.month <= s.visits.back().month)
            throw std::runtime_error("read_dataset: line " + std::to_string(lineno) +
                                     ": months not strictly increasing for subject " +
                                     std::to_string(v.subject_id));
        s.visits.push_back(std::move(v));
    }
    for (SubjectSequence& s : out.subjects)
        s.baseline_age = s.visits.front().age - s.visits.front().month / 12.0;
    return out;
}

} // namespace rtnag
