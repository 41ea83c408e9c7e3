// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "pilrecon/loss.hpp"
#include "pilrecon/metrics.hpp"
#include "pilrecon/net.hpp"
#include "pilrecon/pipeline.hpp"
#include "pilrecon/raster_io.hpp"
#include "support.hpp"

using namespace pilrecon;
namespace fs = std::filesystem;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
    Verdict verdict;
    std::string detail;
};

std::size_t worker_count() {
    if (const char* env = std::getenv("PILRECON_JOBS")) {
        return std::max(1, std::atoi(env));
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(detail)}; }

// ---- 1

Outcome architecture() {
    const std::size_t n = param_count({3, 6, 12, 24, 12, 6, 3, 1});
    // 18+6, 72+12, 288+24, 288+12, 72+6, 18+3, 3+1
    const std::size_t by_hand = 24 + 84 + 312 + 300 + 78 + 21 + 4;
    return verdict(n == 823 && by_hand == 823 && init_params(MlpSpec::standard(), 0).flat().size() == 823,
                   "param_count = " + std::to_string(n));
}

// ---- 2

Points random_points(int n, std::uint64_t seed) {
    Rng rng(seed, 99);
    Points p(3, n);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) {
            p(d, i) = rng.uniform(-1.2, 1.2);
        }
    }
    return p;
}

MlpParams random_params(std::uint64_t seed) {
    MlpParams p = init_params(MlpSpec::standard(), seed);
    Rng rng(seed, 7);
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        for (Eigen::Index j = 0; j < p.bias(l).size(); ++j) {
            p.bias(l)[j] = rng.uniform(-0.3, 0.3);
        }
    }
    return p;
}

Outcome gradients() {
    double worst_param = 0.0;
    double worst_spatial = 0.0;
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
        const MlpParams params = random_params(inst);
        const auto& sizes = params.spec().layer_sizes;
        const std::vector<long double> theta(params.flat().data(), params.flat().data() + params.flat().size());
        const Points pts = random_points(2, 50 + inst);
        Eigen::VectorXd up(2);
        up << 1.0, -0.6;
        const MlpParams g = backward(params, pts, up);
        auto at = [&](const std::vector<long double>& th) {
            long double s = 0.0L;
            for (Eigen::Index j = 0; j < pts.cols(); ++j) {
                s += up[j] * testing::reference_mlp(sizes, th, {pts(0, j), pts(1, j), pts(2, j)});
            }
            return s;
        };
        for (Eigen::Index i = 0; i < params.flat().size(); ++i) {
            const long double numeric = testing::richardson_ld([&](long double h) {
                auto th = theta;
                th[static_cast<std::size_t>(i)] += h;
                return at(th);
            });
            worst_param = std::max(worst_param, testing::fd_rel(g.flat()[i], static_cast<double>(numeric)));
        }
        const Points sg = spatial_gradient(params, pts);
        for (Eigen::Index j = 0; j < pts.cols(); ++j) {
            for (int d = 0; d < 3; ++d) {
                const long double numeric = testing::richardson_ld([&](long double h) {
                    std::array<long double, 3> p{pts(0, j), pts(1, j), pts(2, j)};
                    p[static_cast<std::size_t>(d)] += h;
                    return testing::reference_mlp(sizes, theta, p);
                });
                worst_spatial = std::max(worst_spatial, testing::fd_rel(sg(d, j), static_cast<double>(numeric)));
            }
        }
    }
    return verdict(worst_param < 1e-6 && worst_spatial < 1e-6,
                   "max rel err param " + fmt(worst_param, 3) + ", spatial " + fmt(worst_spatial, 3));
}

// ---- 3

Outcome loss_laws() {
    bool ok = true;
    std::string why;
    auto fail = [&](const std::string& what) {
        if (ok) {
            why = what;
        }
        ok = false;
    };
    double worst_fd = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed, 1);
        const GridSpec spec = GridSpec::for_map(8, 8);
        FilamentMask fil(8, 8, 0);
        for (auto& v : fil.data()) {
            v = rng.uniform() < 0.3 ? 1 : 0;
        }
        const Poles poles{1, -1};
        const PixelPartition plain = make_partition(fil, spec, {}, poles);
        ReferencePointSet refs;
        refs.points = {{1, 1, 1}, {6, 5, -1}};
        const PixelPartition with_refs = make_partition(fil, spec, refs, poles);
        Eigen::VectorXd f(64);
        for (auto& v : f) {
            do {
                v = rng.uniform(-0.95, 0.95);
            } while (std::abs(v) < 1e-3);
        }
        const LossBreakdown b = evaluate_loss(f, with_refs, LossWeights{}).breakdown;
        for (double t : {b.t1, b.t2, b.t3, b.t4}) {
            if (!(t >= 0.0 && t <= 1.0)) {
                fail("term outside [0, 1]");
            }
        }
        LossWeights no_pole;
        no_pole.pole = 0.0;
        if (evaluate_loss(f, plain, no_pole).breakdown.total != evaluate_loss(-f, plain, no_pole).breakdown.total) {
            fail("total(f) != total(-f)");
        }
        const LossWeights lw{1.0, 0.7, 1.3, 0.9, 0.0, 1.2};
        const Eigen::VectorXd df = evaluate_loss(f, with_refs, lw).df;
        for (Eigen::Index i = 0; i < 64; ++i) {
            // the loss is piecewise quadratic, so the central difference is exact off the kinks
            const double h = 1e-4;
            Eigen::VectorXd a = f;
            Eigen::VectorXd c = f;
            a[i] += h;
            c[i] -= h;
            const double numeric = (evaluate_loss(a, with_refs, lw).breakdown.total -
                                    evaluate_loss(c, with_refs, lw).breakdown.total) /
                                   (2 * h);
            worst_fd = std::max(worst_fd, testing::fd_rel(df[i], numeric));
        }
    }
    if (worst_fd >= 1e-8) {
        fail("dL/df rel err " + fmt(worst_fd, 3));
    }
    const GridSpec spec = GridSpec::for_map(64, 128);
    const PixelPartition p = make_partition(FilamentMask(64, 128, 0), spec, {}, Poles{1, -1});
    const double zero_total = evaluate_loss(Eigen::VectorXd::Zero(64 * 128), p, LossWeights{}).breakdown.total;
    if (zero_total != 0.25) {
        fail("f = 0 total " + fmt(zero_total, 17));
    }
    return verdict(ok, ok ? "f=0 total 0.25, max dL/df rel err " + fmt(worst_fd, 3) : why);
}

// ---- 4, 5, 6

struct RunSpec {
    std::uint64_t seed;
    int grid_step;
    std::size_t members;
};

ReconstructOutcome reconstruct_synthetic(const fs::path& root, const RunSpec& r) {
    const fs::path world = root / ("world_" + std::to_string(r.seed));
    if (!fs::exists(world / "filaments.pgm")) {
        SynthSpec s;
        s.height = 64;
        s.width = 128;
        s.harmonics = 3;
        s.fragment_fraction = 0.6;
        s.seed = r.seed;
        write_synthetic(s, world);
    }
    ReconstructOptions o;
    o.map_id = "seed" + std::to_string(r.seed);
    o.filaments = world / "filaments.pgm";
    o.target = world / "target.pgm";
    o.pil = world / "pil.pgm";
    o.grid_step = r.grid_step;
    o.members = r.members;
    o.both_strategies = true;
    o.train.iterations = 3000;
    // mini-batches keep the full run within the CPU budget on a single core
    o.train.batch_size = 1024;
    o.jobs = worker_count();
    o.outdir = root / ("run_" + std::to_string(r.seed) + "_" + std::to_string(r.grid_step) + "_" +
                       std::to_string(r.members));
    return run_reconstruct(o);
}

constexpr std::uint64_t kSeeds[5] = {1, 2, 3, 4, 5};

Outcome oracle_recovery(const fs::path& root) {
    int good = 0;
    std::string errs;
    for (std::uint64_t seed : kSeeds) {
        const double e = reconstruct_synthetic(root, {seed, 8, 4}).error->e_total;
        good += e <= 0.05 ? 1 : 0;
        errs += (errs.empty() ? "" : " ") + fmt(e, 3);
    }
    return verdict(good >= 4, std::to_string(good) + "/5 seeds with e_total <= 0.05 (" + errs + ")");
}

struct Degradation {
    double step8 = 0;
    double step32 = 0;
    double none = 0;
    double mean_strategy = 0;
    double majority_strategy = 0;
};

Degradation degradation_runs(const fs::path& root) {
    Degradation d;
    int strategy_runs = 0;
    for (std::uint64_t seed : kSeeds) {
        for (int step : {8, 32, 0}) {
            const ReconstructOutcome out = reconstruct_synthetic(root, {seed, step, 8});
            const double e = out.error->e_total;
            (step == 8 ? d.step8 : step == 32 ? d.step32 : d.none) += e / 5.0;
            d.mean_strategy += e;
            d.majority_strategy += out.alternate_error->e_total;
            ++strategy_runs;
        }
    }
    d.mean_strategy /= strategy_runs;
    d.majority_strategy /= strategy_runs;
    return d;
}

Outcome ordering(const Degradation& d) {
    const bool ok = d.step32 - d.step8 > 0.02 && d.none - d.step32 > 0.02;
    return verdict(ok, "mean e_total step 8 " + fmt(d.step8, 3) + " < step 32 " + fmt(d.step32, 3) +
                           " < none " + fmt(d.none, 3));
}

Outcome aggregation(const Degradation& d) {
    return verdict(d.mean_strategy <= d.majority_strategy,
                   "mean strategy " + fmt(d.mean_strategy, 3) + " vs majority " + fmt(d.majority_strategy, 3));
}

// ---- 7

Outcome determinism(const fs::path& root) {
    SynthSpec s;
    s.seed = 77;
    write_synthetic(s, root / "det_world");
    ReconstructOptions o;
    o.filaments = root / "det_world" / "filaments.pgm";
    o.target = root / "det_world" / "target.pgm";
    o.grid_step = 16;
    o.members = 4;
    o.train.iterations = 500;
    o.train.batch_size = 1024;
    o.jobs = worker_count();
    o.outdir = root / "det_0";
    run_reconstruct(o);
    const RunManifest m = RunManifest::parse(read_file(root / "det_0" / "manifest"));
    std::size_t compared = 0;
    for (int k = 1; k <= 2; ++k) {
        const fs::path dir = root / ("det_" + std::to_string(k));
        ReconstructOptions again = options_from_manifest(m, dir);
        again.jobs = k;  // scheduling must not matter
        run_reconstruct(again);
        for (const auto& name : m.outputs()) {
            if (read_file(root / "det_0" / name) != read_file(dir / name)) {
                return verdict(false, name + " differs on replay " + std::to_string(k));
            }
            ++compared;
        }
    }
    return verdict(compared > 0, std::to_string(compared) + " output files bit-identical over 2 replays");
}

// ---- 8

Outcome grid_count() {
    const GridSpec spec = GridSpec::for_map(256, 512);
    const PolarityMap target(256, 512, 1);
    const std::size_t n = reference_grid(spec, 64, target).size();
    return verdict(n == 32, "step 64 on 256x512 gives " + std::to_string(n) + " points");
}

// ---- 9

Outcome paper_data() {
    const char* dir = std::getenv("PILRECON_MCINTOSH_DIR");
    if (dir == nullptr || !fs::exists(fs::path(dir) / "cr1355_filaments.pgm") ||
        !fs::exists(fs::path(dir) / "cr1355_target.pgm")) {
        return {Verdict::Skip, "set PILRECON_MCINTOSH_DIR to a directory with cr1355_filaments.pgm and cr1355_target.pgm"};
    }
    testing::TempDir out("acceptance_cr1355");
    ReconstructOptions o;
    o.map_id = "cr1355";
    o.filaments = fs::path(dir) / "cr1355_filaments.pgm";
    o.target = fs::path(dir) / "cr1355_target.pgm";
    o.grid_step = 32;
    o.members = 16;
    o.train.iterations = 30000;
    o.jobs = worker_count();
    o.outdir = out.path();
    const double e = run_reconstruct(o).error->e_total;
    return verdict(e >= 0.05 && e <= 0.20, "CR 1355 e_total " + fmt(e, 3));
}

// ---- 10

Outcome statistics() {
    bool ok = true;
    const std::vector<double> x{1, 2, 3};
    ok &= *pearson(x, std::vector<double>{2, 4, 6}) == 1.0;
    ok &= *pearson(x, std::vector<double>{3, 2, 1}) == -1.0;
    // dx = (-1, 0, 1), dy = (-1, 1, 0): r = 1 / sqrt(2 * 2)
    ok &= *pearson(x, std::vector<double>{1, 3, 2}) == 0.5;
    // ratio / error style series: dx = (-0.1, 0, 0.1), dy = (0.05, -0.05, 0): r = -0.5
    const double fig = *pearson(std::vector<double>{0.5, 0.6, 0.7}, std::vector<double>{0.3, 0.2, 0.25});
    ok &= std::abs(fig + 0.5) < 1e-12;
    ok &= !pearson(x, std::vector<double>{4, 4, 4}).has_value();

    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SynthSpec s;
        s.seed = seed;
        s.fragment_fraction = 0.6;
        const SynthWorld w = generate(s);
        worst = std::max(worst, std::abs(*pixel_counts(w.filaments, w.pil).ratio - 0.6));
    }
    ok &= worst <= 0.05;
    return verdict(ok, "pearson fixtures exact, max |ratio - rho| " + fmt(worst, 3));
}

}  // namespace

int main() {
    testing::TempDir root("acceptance");
    int failures = 0;
    auto report = [&](int n, const std::string& name, const std::function<Outcome()>& body) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {Verdict::Fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
        failures += o.verdict == Verdict::Fail ? 1 : 0;
        std::cout << tag << " " << n << " " << name << ": " << o.detail << " [" << fmt(secs, 3) << " s]"
                  << std::endl;
    };
    report(1, "architecture", architecture);
    report(2, "gradients", gradients);
    report(3, "loss laws", loss_laws);
    report(4, "oracle recovery", [&] { return oracle_recovery(root.path()); });
    std::optional<Degradation> deg;
    report(5, "degradation ordering", [&] {
        deg = degradation_runs(root.path());
        return ordering(*deg);
    });
    report(6, "aggregation", [&] {
        return deg ? aggregation(*deg) : Outcome{Verdict::Fail, "criterion 5 runs did not complete"};
    });
    report(7, "determinism", [&] { return determinism(root.path()); });
    report(8, "reference grid count", grid_count);
    report(9, "paper data", paper_data);
    report(10, "statistics", statistics);
    return failures == 0 ? 0 : 1;
}
