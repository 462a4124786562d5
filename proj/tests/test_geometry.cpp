#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rtnag/geometry.hpp"
#include "rtnag/gradcheck.hpp"
#include "rtnag/rng.hpp"

using namespace rtnag;

namespace {

Tensor random_point(int q, Rng& rng, double dlo = 0.1, double dhi = 10.0) {
    Tensor t = Tensor::zeros({q, q});
    for (int i = 0; i < q; ++i)
        for (int j = 0; j <= i; ++j)
            t.at(i, j) = (i == j) ? rng.uniform(dlo, dhi) : rng.uniform(-2.0, 2.0);
    return t;
}

Tensor eager_via_tape(Var v) { return v.tp->val(v); }

} // namespace

TEST_CASE("chol_log and chol_exp") {
    Tape tp;
    Tensor eye = Tensor::identity(3);
    REQUIRE(chol::log_point(eye).max_abs_diff(Tensor::zeros({3, 3})) == 0.0);

    Tensor de = Tensor::zeros({2, 2});
    de.at(0, 0) = de.at(1, 1) = std::exp(1.0);
    Tensor ld = chol::log_point(de);
    REQUIRE(ld.at(0, 0) == Catch::Approx(1.0).epsilon(1e-14));
    REQUIRE(ld.at(1, 1) == Catch::Approx(1.0).epsilon(1e-14));

    Tensor t = Tensor::zeros({2, 2});
    t.at(1, 0) = 3.0;
    Tensor p = chol::exp_tangent(t);
    REQUIRE(p.at(1, 0) == 3.0);
    REQUIRE(p.at(0, 0) == 1.0);
    REQUIRE(p.at(1, 1) == 1.0);
    REQUIRE(chol::exp_tangent(Tensor::zeros({4, 4})).max_abs_diff(Tensor::identity(4)) == 0.0);

    Tensor invalid = Tensor::identity(2);
    invalid.at(1, 1) = 0.0;
    REQUIRE_THROWS_WITH(chol::log_point(invalid), Catch::Matchers::ContainsSubstring("invalid point"));

    // inverse pairs over wide diagonal range, scale-aware 1e-12
    Rng rng(101);
    for (int trial = 0; trial < 1000; ++trial) {
        int q = 2 + rng.uniform_int(5);
        Tensor l = random_point(q, rng, 1e-3, 1e3);
        Tensor round = chol::exp_tangent(chol::log_point(l));
        for (int i = 0; i < l.numel(); ++i)
            REQUIRE(std::fabs(round.at(i) - l.at(i)) <=
                    1e-12 * std::max(1.0, std::fabs(l.at(i))));
        Tensor tan = chol::log_point(l); // arbitrary tangent round trip
        Tensor round2 = chol::log_point(chol::exp_tangent(tan));
        for (int i = 0; i < tan.numel(); ++i)
            REQUIRE(std::fabs(round2.at(i) - tan.at(i)) <=
                    1e-12 * std::max(1.0, std::fabs(tan.at(i))));
    }

    // tape versions agree with the eager path bitwise
    Rng rng2(103);
    Tensor l = random_point(4, rng2);
    Var lv = tp.leaf(l);
    REQUIRE(eager_via_tape(chol::log_point(lv)).max_abs_diff(chol::log_point(l)) == 0.0);
    REQUIRE(eager_via_tape(chol::exp_tangent(tp.leaf(chol::log_point(l))))
                .max_abs_diff(chol::exp_tangent(chol::log_point(l))) == 0.0);
}

TEST_CASE("group operation") {
    Rng rng(107);
    Tensor l = random_point(3, rng);
    REQUIRE(chol::group_op(l, Tensor::identity(3)).max_abs_diff(l) == 0.0);

    for (int trial = 0; trial < 1000; ++trial) {
        int q = 2 + rng.uniform_int(4);
        Tensor a = random_point(q, rng), b = random_point(q, rng), c = random_point(q, rng);
        REQUIRE(chol::group_op(a, b).max_abs_diff(chol::group_op(b, a)) == 0.0);
        Tensor ab_c = chol::group_op(chol::group_op(a, b), c);
        Tensor a_bc = chol::group_op(a, chol::group_op(b, c));
        REQUIRE(ab_c.max_abs_diff(a_bc) <= 1e-12 * std::max(1.0, ab_c.max_abs_diff(Tensor::zeros({q, q}))));
    }

    Tensor a({2, 2}, {2.0, 0.0, 1.0, 3.0});
    Tensor b({2, 2}, {4.0, 0.0, 2.0, 5.0});
    Tensor g = chol::group_op(a, b);
    REQUIRE(g.at(1, 0) == 3.0);
    REQUIRE(g.at(0, 0) == 8.0);
    REQUIRE(g.at(1, 1) == 15.0);

    REQUIRE_THROWS_AS(chol::group_op(a, Tensor::identity(3)), std::invalid_argument);
}

TEST_CASE("weighted Frechet mean") {
    Rng rng(109);
    Tensor l = random_point(4, rng);
    Tensor same = chol::wfm({l, l}, {0.3, -1.2});
    REQUIRE(same.max_abs_diff(l) <= 1e-12);

    Tensor d14 = Tensor::identity(2), d41 = Tensor::identity(2);
    d14.at(0, 0) = 1.0;
    d14.at(1, 1) = 4.0;
    d41.at(0, 0) = 4.0;
    d41.at(1, 1) = 1.0;
    Tensor mid = chol::wfm({d14, d41}, {0.0, 0.0});
    REQUIRE(mid.at(0, 0) == Catch::Approx(2.0).epsilon(1e-13));
    REQUIRE(mid.at(1, 1) == Catch::Approx(2.0).epsilon(1e-13));

    REQUIRE_THROWS_AS(chol::wfm(std::vector<Tensor>{}, std::vector<double>{}),
                      std::invalid_argument);

    for (int trial = 0; trial < 1000; ++trial) {
        int q = 2 + rng.uniform_int(4);
        int m = 2 + rng.uniform_int(3);
        std::vector<Tensor> pts;
        std::vector<double> logits;
        for (int k = 0; k < m; ++k) {
            pts.push_back(random_point(q, rng));
            logits.push_back(rng.uniform(-2.0, 2.0));
        }
        Tensor direct = chol::wfm(pts, logits);

        // log-domain oracle: exp of the softmax-weighted mean of log images
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        std::vector<double> w;
        double s = 0.0;
        for (double v : logits) {
            w.push_back(std::exp(v - mx));
            s += w.back();
        }
        for (double& v : w) v /= s;
        Tensor acc = Tensor::zeros({q, q});
        for (int k = 0; k < m; ++k) {
            Tensor lg = chol::log_point(pts[static_cast<size_t>(k)]);
            for (int i = 0; i < lg.numel(); ++i) acc.at(i) += w[static_cast<size_t>(k)] * lg.at(i);
        }
        Tensor via_log = chol::exp_tangent(acc);
        REQUIRE(direct.max_abs_diff(via_log) <= 1e-12);

        // mean lies inside the inputs' entrywise hull (geometric for diag)
        for (int i = 0; i < q; ++i)
            for (int j = 0; j <= i; ++j) {
                double lo = pts[0].at(i, j), hi = pts[0].at(i, j);
                for (int k = 1; k < m; ++k) {
                    lo = std::min(lo, pts[static_cast<size_t>(k)].at(i, j));
                    hi = std::max(hi, pts[static_cast<size_t>(k)].at(i, j));
                }
                REQUIRE(direct.at(i, j) >= lo - 1e-9);
                REQUIRE(direct.at(i, j) <= hi + 1e-9);
            }
    }
}

TEST_CASE("projection to the manifold") {
    Rng rng(113);
    Tensor l = random_point(4, rng);
    REQUIRE(chol::project(l).max_abs_diff(l) == 0.0);

    Tensor z = Tensor::zeros({3, 3});
    Tensor pz = chol::project(z);
    for (int i = 0; i < 3; ++i) REQUIRE(pz.at(i, i) == 1e-8);

    Tensor full = Tensor::zeros({4, 4});
    for (double& v : full.data) v = rng.uniform(-2.0, 2.0);
    Tensor pf = chol::project(full);
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) REQUIRE(pf.at(i, j) == 0.0);
    REQUIRE(chol::is_valid_point(pf));
}

TEST_CASE("distance is a metric") {
    Rng rng(127);
    Tensor l = random_point(5, rng);
    REQUIRE(chol::distance(l, l) == 0.0);

    Tensor de = Tensor::identity(2);
    de.at(0, 0) = de.at(1, 1) = std::exp(1.0);
    REQUIRE(chol::distance(Tensor::identity(2), de) ==
            Catch::Approx(std::sqrt(2.0)).epsilon(1e-13));

    for (int trial = 0; trial < 1000; ++trial) {
        int q = 2 + rng.uniform_int(4);
        Tensor a = random_point(q, rng), b = random_point(q, rng), c = random_point(q, rng);
        double ab = chol::distance(a, b), ba = chol::distance(b, a);
        REQUIRE(ab == ba);
        REQUIRE(chol::distance(a, c) <= ab + chol::distance(b, c) + 1e-12);
    }
}

TEST_CASE("closure under geometry ops") {
    Rng rng(131);
    for (int trial = 0; trial < 10000; ++trial) {
        int q = 2 + rng.uniform_int(6);
        Tensor a = random_point(q, rng, 1e-3, 1e3);
        Tensor b = random_point(q, rng, 1e-3, 1e3);
        REQUIRE(chol::is_valid_point(chol::group_op(a, b)));
        REQUIRE(chol::is_valid_point(chol::wfm({a, b}, {rng.uniform(-3, 3), rng.uniform(-3, 3)})));
        REQUIRE(chol::is_valid_point(chol::exp_tangent(chol::log_point(a))));
    }
}

TEST_CASE("geometry ops differentiate") {
    Rng rng(137);
    auto packed_log = [&](const Tensor& p) {
        const auto& ti = chol::TrilIndex::get(p.rows());
        Tensor lg = chol::log_point(p);
        Tensor out = Tensor::zeros({ti.p});
        for (int i = 0; i < ti.p; ++i) out.at(i) = lg.at((*ti.pack)[static_cast<size_t>(i)]);
        return out;
    };
    Tensor a = random_point(3, rng, 0.3, 3.0);
    Tensor b = random_point(3, rng, 0.3, 3.0);
    // parameters are packed log coordinates, so they stay unconstrained
    auto rep = gradient_check(
        [&](Tape& tp, const std::vector<Var>& ps) {
            Var pa = chol::exp_tangent_packed(ps[0], 3);
            Var pb = chol::exp_tangent_packed(ps[1], 3);
            Var m = chol::wfm({chol::group_op(pa, pb), pa}, ps[2]);
            return chol::distance(m, pb);
        },
        {packed_log(a), packed_log(b), Tensor({2}, {0.4, -0.2})});
    REQUIRE(rep.max_rel_err < 1e-6);
}
