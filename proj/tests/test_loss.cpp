#include <cmath>
#include <numbers>

#include <doctest.h>

#include "pilrecon/loss.hpp"
#include "pilrecon/rng.hpp"
#include "support.hpp"

using namespace pilrecon;

namespace {

struct Instance {
    GridSpec spec;
    FilamentMask filaments;
    ReferencePointSet refs;
    Poles poles;
};

Instance random_instance(int h, int w, std::uint64_t seed, int nrefs) {
    Instance in;
    in.spec = GridSpec::for_map(h, w);
    in.filaments = FilamentMask(h, w, 0);
    Rng rng(seed, 5);
    for (auto& v : in.filaments.data()) {
        v = rng.uniform() < 0.25 ? 1 : 0;
    }
    for (int k = 0; k < nrefs; ++k) {
        const int r = static_cast<int>(rng.uniform_int(0, static_cast<std::uint64_t>(h - 1)));
        const int c = static_cast<int>(rng.uniform_int(0, static_cast<std::uint64_t>(w - 1)));
        bool dup = false;
        for (const auto& p : in.refs.points) {
            dup |= p.row == r && p.col == c;
        }
        if (!dup) {
            in.refs.points.push_back({r, c, rng.uniform() < 0.5 ? 1 : -1});
        }
    }
    in.poles = Poles{rng.uniform() < 0.5 ? 1 : -1, rng.uniform() < 0.5 ? 1 : -1};
    return in;
}

Eigen::VectorXd random_f(std::size_t n, std::uint64_t seed, double amp = 0.95) {
    Rng rng(seed, 6);
    Eigen::VectorXd f(static_cast<Eigen::Index>(n));
    for (auto& v : f) {
        // stay clear of the |f| kink so finite differences never straddle it
        do {
            v = rng.uniform(-amp, amp);
        } while (std::abs(v) < 1e-3);
    }
    return f;
}

// Terms straight from their definitions, with optional per-pixel weights.
LossBreakdown oracle(const Eigen::VectorXd& f, const Instance& in, const LossWeights& lw, bool cos_lat) {
    const int h = in.spec.height;
    const int w = in.spec.width;
    double all_w = 0, all_f = 0, fil_w = 0, fil_f2 = 0, rest_w = 0, rest_abs = 0, band_w = 0, band_sq = 0;
    for (int r = 0; r < h; ++r) {
        const double lat = 90.0 * (1.0 - (2.0 * r + 1.0) / h);
        const double wt = cos_lat ? std::cos(lat * std::numbers::pi / 180.0) : 1.0;
        for (int c = 0; c < w; ++c) {
            const double v = f[r * w + c];
            all_w += wt;
            all_f += wt * v;
            if (in.filaments.at(r, c)) {
                fil_w += wt;
                fil_f2 += wt * v * v;
            } else {
                rest_w += wt;
                rest_abs += wt * std::abs(v);
            }
            if (lat > 80.0) {
                band_w += wt;
                band_sq += wt * (v - in.poles.north) * (v - in.poles.north);
            } else if (lat < -80.0) {
                band_w += wt;
                band_sq += wt * (v - in.poles.south) * (v - in.poles.south);
            }
        }
    }
    LossBreakdown b;
    b.t1 = std::abs(all_f) / all_w;
    b.t2 = fil_w > 0 ? fil_f2 / fil_w : 0.0;
    b.t3 = rest_w > 0 ? rest_abs / rest_w : 0.0;
    b.t4 = band_w > 0 ? band_sq / (4.0 * band_w) : 0.0;
    double ref = 0.0;
    for (const auto& p : in.refs.points) {
        const double d = f[p.row * w + p.col] - p.polarity;
        ref += d * d;
    }
    b.tref = in.refs.points.empty() ? 0.0 : ref / static_cast<double>(in.refs.points.size());
    b.total = lw.neutrality * b.t1 + lw.filament * b.t2 - lw.bipolarity * b.t3 + lw.pole * b.t4 +
              lw.reference * b.tref;
    return b;
}

LossWeights only(int term) {
    LossWeights w{0, 0, 0, 0, 0, 0};
    switch (term) {
        case 1: w.neutrality = 1; break;
        case 2: w.filament = 1; break;
        case 3: w.bipolarity = 1; break;
        case 4: w.pole = 1; break;
        case 5: w.gradient_norm = 1; break;
        default: w.reference = 1; break;
    }
    return w;
}

double total_of(const Eigen::VectorXd& f, const PixelPartition& p, const LossWeights& w) {
    return evaluate_loss(f, p, w).breakdown.total;
}

}  // namespace

TEST_SUITE("loss") {

TEST_CASE("f = 0 costs only the pole term") {
    const Instance in = random_instance(18, 36, 1, 0);
    const PixelPartition p = make_partition(in.filaments, in.spec, {}, Poles{1, -1});
    const auto r = evaluate_loss(Eigen::VectorXd::Zero(18 * 36), p, LossWeights{});
    CHECK(r.breakdown.t1 == 0.0);
    CHECK(r.breakdown.t2 == 0.0);
    CHECK(r.breakdown.t3 == 0.0);
    CHECK(r.breakdown.t4 == 0.25);
    CHECK(r.breakdown.total == 0.25);
    // |f| and |sum f| contribute no subgradient at zero
    for (std::size_t i = 0; i < p.non_filament.indices.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(p.non_filament.indices[i]);
        const bool band = k < 36 || k >= 17 * 36;
        if (!band) {
            REQUIRE(r.df[k] == 0.0);
        }
    }
}

TEST_CASE("f = +1 closed form") {
    const Instance in = random_instance(18, 36, 2, 0);
    REQUIRE(count_nonzero(in.filaments) > 0);
    const PixelPartition p = make_partition(in.filaments, in.spec, {}, Poles{1, -1});
    const auto b = evaluate_loss(Eigen::VectorXd::Ones(18 * 36), p, LossWeights{}).breakdown;
    CHECK(b.t1 == 1.0);
    CHECK(b.t2 == 1.0);
    CHECK(b.t3 == 1.0);
    CHECK(b.t4 == 0.5);
    CHECK(b.total == 1.5);
}

TEST_CASE("terms agree with their definitions") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (bool cos_lat : {false, true}) {
            const Instance in = random_instance(20, 40, seed, 6);
            const PixelPartition p = make_partition(in.filaments, in.spec, in.refs, in.poles, cos_lat);
            const Eigen::VectorXd f = random_f(800, seed);
            const LossWeights lw{0.7, 1.3, 0.9, 2.0, 0.0, 1.1};
            const auto got = evaluate_loss(f, p, lw).breakdown;
            const auto want = oracle(f, in, lw, cos_lat);
            CHECK(got.t1 == doctest::Approx(want.t1).epsilon(1e-12));
            CHECK(got.t2 == doctest::Approx(want.t2).epsilon(1e-12));
            CHECK(got.t3 == doctest::Approx(want.t3).epsilon(1e-12));
            CHECK(got.t4 == doctest::Approx(want.t4).epsilon(1e-12));
            CHECK(got.tref == doctest::Approx(want.tref).epsilon(1e-12));
            CHECK(got.total == doctest::Approx(want.total).epsilon(1e-12));
        }
    }
}

TEST_CASE("normalized terms stay in range") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Instance in = random_instance(16, 32, seed, 5);
        const PixelPartition p = make_partition(in.filaments, in.spec, in.refs, in.poles, seed % 2 == 0);
        const double amp = seed % 3 == 0 ? 1.0 : 0.5;
        Eigen::VectorXd f = random_f(512, seed, amp);
        if (seed % 5 == 0) {
            f = Eigen::VectorXd::Constant(512, seed % 10 == 0 ? 1.0 : -1.0);
        }
        const auto b = evaluate_loss(f, p, LossWeights{}).breakdown;
        for (double t : {b.t1, b.t2, b.t3, b.t4}) {
            CHECK(t >= 0.0);
            CHECK(t <= 1.0);
        }
        CHECK(b.tref >= 0.0);
        CHECK(b.tref <= 4.0);
        CHECK(b.finite());
    }
}

TEST_CASE("sign symmetry without the pole term and references") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Instance in = random_instance(16, 32, seed, 0);
        const PixelPartition p = make_partition(in.filaments, in.spec, {}, in.poles);
        LossWeights lw;
        lw.pole = 0.0;
        const Eigen::VectorXd f = random_f(512, seed);
        const auto a = evaluate_loss(f, p, lw).breakdown;
        const auto b = evaluate_loss(-f, p, lw).breakdown;
        CHECK(a.t1 == b.t1);
        CHECK(a.t2 == b.t2);
        CHECK(a.t3 == b.t3);
        CHECK(a.total == b.total);
    }
}

TEST_CASE("derivative matches finite differences term by term") {
    // 8x8 instances, every pixel, every term on its own and all together
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Instance in = random_instance(8, 8, seed, 4);
        in.spec.gap_px = 0;
        for (bool cos_lat : {false, true}) {
            const PixelPartition p = make_partition(in.filaments, in.spec, in.refs, in.poles, cos_lat);
            const Eigen::VectorXd f = random_f(64, 100 + seed, 0.9);
            for (int term : {0, 1, 2, 3, 4, 6}) {
                const LossWeights lw = term == 0 ? LossWeights{1.0, 0.8, 1.2, 0.6, 0.0, 1.4} : only(term);
                const Eigen::VectorXd df = evaluate_loss(f, p, lw).df;
                double worst = 0.0;
                for (Eigen::Index i = 0; i < 64; ++i) {
                    // piecewise quadratic, so central differences are exact away from kinks
                    const double h = 1e-4;
                    Eigen::VectorXd up = f;
                    Eigen::VectorXd dn = f;
                    up[i] += h;
                    dn[i] -= h;
                    const double numeric = (total_of(up, p, lw) - total_of(dn, p, lw)) / (2 * h);
                    if (df[i] == 0.0) {
                        REQUIRE(std::abs(numeric) < 1e-9);
                        continue;
                    }
                    worst = std::max(worst, testing::fd_rel(df[i], numeric));
                }
                CAPTURE(term);
                CAPTURE(cos_lat);
                CHECK(worst < 1e-8);
            }
        }
    }
}

TEST_CASE("gradient-norm term and its derivative") {
    const Instance in = random_instance(8, 8, 3, 0);
    const PixelPartition p = make_partition(in.filaments, in.spec, {}, in.poles);
    const auto nf = static_cast<Eigen::Index>(p.filament.indices.size());
    REQUIRE(nf > 0);
    Rng rng(4);
    Points g(3, nf);
    for (Eigen::Index j = 0; j < nf; ++j) {
        for (int d = 0; d < 3; ++d) {
            g(d, j) = rng.uniform(-2, 2);
        }
    }
    const Eigen::VectorXd f = random_f(64, 9);
    LossWeights lw = only(5);
    lw.gradient_norm = 0.5;
    const auto r = evaluate_loss(f, p, lw, &g);
    CHECK(r.breakdown.t5 == doctest::Approx(g.colwise().squaredNorm().sum() / static_cast<double>(nf)));
    // the term is maximized, so it enters the total with a minus sign
    CHECK(r.breakdown.total == doctest::Approx(-0.5 * r.breakdown.t5));
    CHECK(r.df.isZero());
    REQUIRE(r.dgrad.cols() == nf);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < nf; ++j) {
        for (int d = 0; d < 3; ++d) {
            Points up = g;
            Points dn = g;
            up(d, j) += 1e-4;
            dn(d, j) -= 1e-4;
            const double numeric =
                (evaluate_loss(f, p, lw, &up).breakdown.total - evaluate_loss(f, p, lw, &dn).breakdown.total) / 2e-4;
            worst = std::max(worst, testing::fd_rel(r.dgrad(d, j), numeric));
        }
    }
    CHECK(worst < 1e-8);
    CHECK_THROWS_AS(evaluate_loss(f, p, lw), SizeError);
}

TEST_CASE("perfect separation reaches the floor") {
    // north half +1, south half -1, filaments on the two middle rows
    const int h = 20;
    const int w = 40;
    const GridSpec spec = GridSpec::for_map(h, w);
    FilamentMask fil(h, w, 0);
    Eigen::VectorXd f(h * w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const bool line = r == 9 || r == 10;
            fil.at(r, c) = line ? 1 : 0;
            f[r * w + c] = line ? 0.0 : (r < 9 ? 1.0 : -1.0);
        }
    }
    ReferencePointSet refs;
    refs.points = {{2, 5, 1}, {17, 30, -1}};
    const PixelPartition p = make_partition(fil, spec, refs, Poles{1, -1});
    const auto b = evaluate_loss(f, p, LossWeights{}).breakdown;
    CHECK(b.t1 == 0.0);
    CHECK(b.t2 == 0.0);
    CHECK(b.t3 == 1.0);
    CHECK(b.t4 == 0.0);
    CHECK(b.tref == 0.0);
    CHECK(b.total == -1.0);
}

TEST_CASE("empty strata") {
    const GridSpec spec = GridSpec::for_map(8, 16);
    const PixelPartition p = make_partition(FilamentMask(8, 16, 0), spec, {}, Poles{});
    const auto r = evaluate_loss(Eigen::VectorXd::Constant(128, 0.5), p, LossWeights{});
    CHECK(r.breakdown.t2 == 0.0);
    CHECK(r.breakdown.t5 == 0.0);
    CHECK(r.breakdown.tref == 0.0);
    CHECK(r.breakdown.finite());
    LossWeights lw;
    lw.gradient_norm = 1.0;
    Points none(3, 0);
    CHECK(evaluate_loss(Eigen::VectorXd::Zero(128), p, lw, &none).breakdown.t5 == 0.0);
}

TEST_CASE("reference term") {
    const GridSpec spec = GridSpec::for_map(4, 8);
    ReferencePointSet refs;
    refs.points = {{0, 0, 1}, {3, 7, -1}};
    const PixelPartition p = make_partition(FilamentMask(4, 8, 0), spec, refs, Poles{});
    Eigen::VectorXd f = Eigen::VectorXd::Zero(32);
    f[0] = 0.5;
    f[31] = 0.5;
    const auto r = evaluate_loss(f, p, only(6));
    CHECK(r.breakdown.tref == doctest::Approx((0.25 + 2.25) / 2));
    CHECK(r.df[0] == doctest::Approx(2 * (0.5 - 1) / 2));
    CHECK(r.df[31] == doctest::Approx(2 * (0.5 + 1) / 2));
}

TEST_CASE("domain checks") {
    const GridSpec spec = GridSpec::for_map(4, 8);
    const PixelPartition p = make_partition(FilamentMask(4, 8, 0), spec, {}, Poles{});
    Eigen::VectorXd f = Eigen::VectorXd::Zero(32);
    f[3] = 1.0000001;
    CHECK_THROWS_AS(evaluate_loss(f, p, LossWeights{}), DomainError);
    f[3] = std::nan("");
    CHECK_THROWS_AS(evaluate_loss(f, p, LossWeights{}), DomainError);
    LossWeights bad;
    bad.pole = -1;
    CHECK_THROWS_AS(evaluate_loss(Eigen::VectorXd::Zero(32), p, bad), DomainError);
    CHECK_THROWS_AS(make_partition(FilamentMask(4, 8, 0), spec, {}, Poles{0, 1}), DomainError);
    CHECK_THROWS_AS(make_partition(FilamentMask(4, 4, 0), spec, {}, Poles{}), SizeError);
}

}
