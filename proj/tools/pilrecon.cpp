#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pilrecon/ensemble.hpp"
#include "pilrecon/errors.hpp"
#include "pilrecon/pipeline.hpp"
#include "pilrecon/raster_io.hpp"
#ifdef PILRECON_WITH_SERVICE
#include "pilrecon/service.hpp"
#endif

namespace fs = std::filesystem;
using namespace pilrecon;

namespace {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kIo = 3,
    kNumeric = 4,
    kBatchFailures = 5,
};

std::size_t default_jobs() {
    if (const char* env = std::getenv("PILRECON_JOBS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) {
                return static_cast<std::size_t>(v);
            }
        } catch (const std::exception&) {
        }
        std::cerr << "warning: ignoring invalid PILRECON_JOBS='" << env << "'\n";
    }
    return 1;
}

struct ReconstructFlags {
    ReconstructOptions options;
    std::string poles = "auto";
    std::string strategy = "mean";
    std::string latitude_mode = "equal-angle";
    std::string embedding = "cylinder";
    int gap_px = -1;
    int plateau_window = 0;
    double plateau_tolerance = 1e-4;
    std::string preset = "paper";
    bool history_every_step = false;
};

// Flags shared by `reconstruct` and `batch`.
void add_training_flags(CLI::App* cmd, ReconstructFlags& f) {
    auto& o = f.options;
    cmd->add_option("--grid-step", o.grid_step, "Reference grid step in pixels; 0 = no reference points")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--poles", f.poles, "'auto' (from target) or two signs 'N,S', e.g. '1,-1'");
    cmd->add_option("--members,-m", o.members, "Ensemble size")->check(CLI::PositiveNumber);
    cmd->add_option("--base-seed", o.base_seed, "Base seed; member k uses base_seed xor k");
    cmd->add_option("--preset", f.preset, "Training preset: paper (30000 full-batch steps) or interactive")
        ->check(CLI::IsMember({"paper", "interactive"}));
    cmd->add_option("--iterations", o.train.iterations, "Adam steps per member")->check(CLI::NonNegativeNumber);
    cmd->add_option("--lr", o.train.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--weight-decay", o.train.weight_decay, "L2 weight decay")->check(CLI::NonNegativeNumber);
    cmd->add_flag("--decoupled-decay", o.train.decoupled_weight_decay, "Apply weight decay directly to the weights");
    cmd->add_option("--batch-size", o.train.batch_size, "Pixels per stratified mini-batch; 0 = full batch");
    cmd->add_option("--record-every", o.train.record_every, "Loss-history stride")->check(CLI::PositiveNumber);
    cmd->add_option("--plateau-window", f.plateau_window, "Stop when the loss improves by less than --plateau-tol over this many steps; 0 = off")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--plateau-tol", f.plateau_tolerance, "Relative improvement threshold for --plateau-window");
    cmd->add_flag("--cos-latitude", o.train.cos_latitude_weighting, "Weight pixels by cos(latitude)");
    cmd->add_option("--strategy", f.strategy, "Aggregation: mean, majority, or both")
        ->check(CLI::IsMember({"mean", "majority", "both"}));
    cmd->add_option("--downsample", o.downsample, "Integer block-pooling factor applied to the inputs")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--gap", f.gap_px, "Cylinder seam gap in pixels (default width/64)");
    cmd->add_option("--latitude-mode", f.latitude_mode)->check(CLI::IsMember({"equal-angle", "sine-latitude"}));
    cmd->add_option("--embedding", f.embedding)->check(CLI::IsMember({"cylinder", "sphere", "plane"}));
    cmd->add_option("--z-half-height", o.z_half_height)->check(CLI::PositiveNumber);
    cmd->add_option("--w-neutrality", o.weights.neutrality)->check(CLI::NonNegativeNumber);
    cmd->add_option("--w-filament", o.weights.filament)->check(CLI::NonNegativeNumber);
    cmd->add_option("--w-bipolarity", o.weights.bipolarity)->check(CLI::NonNegativeNumber);
    cmd->add_option("--w-pole", o.weights.pole)->check(CLI::NonNegativeNumber);
    cmd->add_option("--w-gradient", o.weights.gradient_norm)->check(CLI::NonNegativeNumber);
    cmd->add_option("--w-reference", o.weights.reference)->check(CLI::NonNegativeNumber);
    cmd->add_option("--warm-start", o.warm_start_dir, "Directory with member_XXX.params to initialise from")
        ->check(CLI::ExistingDirectory);
    cmd->add_option("--jobs,-j", o.jobs, "Members trained concurrently (default $PILRECON_JOBS or 1)")
        ->check(CLI::PositiveNumber);
}

void finalize_flags(ReconstructFlags& f, const CLI::App* cmd) {
    auto& o = f.options;
    if (f.preset == "interactive") {
        const TrainConfig preset = TrainConfig::interactive();
        if (cmd->count("--iterations") == 0) {
            o.train.iterations = preset.iterations;
        }
        if (cmd->count("--batch-size") == 0) {
            o.train.batch_size = preset.batch_size;
        }
        if (cmd->count("--plateau-window") == 0) {
            o.train.plateau = preset.plateau;
        }
    }
    if (f.plateau_window > 0) {
        o.train.plateau = PlateauStop{f.plateau_window, f.plateau_tolerance};
    }
    if (f.poles != "auto") {
        const auto comma = f.poles.find(',');
        try {
            if (comma == std::string::npos) {
                throw std::invalid_argument("missing comma");
            }
            Poles p{std::stoi(f.poles.substr(0, comma)), std::stoi(f.poles.substr(comma + 1))};
            if ((p.north != 1 && p.north != -1) || (p.south != 1 && p.south != -1)) {
                throw std::invalid_argument("signs must be 1 or -1");
            }
            o.poles = p;
        } catch (const std::exception&) {
            throw CLI::ValidationError("--poles", "expected 'auto' or 'N,S' with N,S in {1,-1}");
        }
    }
    o.both_strategies = f.strategy == "both";
    o.strategy = f.strategy == "majority" ? Strategy::BinarizeThenMajority : Strategy::MeanThenBinarize;
    o.latitude_mode = parse_latitude_mode(f.latitude_mode);
    o.embedding = parse_embedding(f.embedding);
    if (f.gap_px >= 0) {
        o.gap_px = f.gap_px;
    }
}

void print_report(const ReconstructOutcome& r, const ReconstructOptions& o) {
    std::cout << kReportHeader << "\n"
              << format_report_row(o.map_id, r.error, r.counts) << "\n";
    if (r.alternate_error) {
        std::cout << "# " << (o.strategy == Strategy::MeanThenBinarize ? "majority" : "mean")
                  << " strategy: e_total " << r.alternate_error->e_total << " e_band "
                  << r.alternate_error->e_band << "\n";
    }
    std::cout << "# outputs in " << o.outdir.string() << " (config hash "
              << r.manifest.config_hash() << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Polarity-map reconstruction from filament maps with coordinate-MLP ensembles"};
    app.require_subcommand(1);

    // synth
    SynthSpec synth;
    fs::path synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic target, PIL and filament map");
    synth_cmd->add_option("--height", synth.height)->check(CLI::Range(2, 1 << 15));
    synth_cmd->add_option("--width", synth.width)->check(CLI::Range(2, 1 << 15));
    synth_cmd->add_option("--harmonics", synth.harmonics)->check(CLI::Range(1, 1000));
    synth_cmd->add_option("--max-wavenumber", synth.max_wavenumber)->check(CLI::Range(1, 1000));
    synth_cmd->add_option("--rho", synth.fragment_fraction, "Fraction of PIL pixels covered by filaments")
        ->check(CLI::Range(0.0, 1.0));
    synth_cmd->add_option("--seed", synth.seed);
    synth_cmd->add_option("--mean-run", synth.mean_run_length)->check(CLI::Range(1.0, 1e9));
    bool no_caps = false;
    synth_cmd->add_flag("--no-polar-caps", no_caps, "Leave the pole bands mixed-polarity");
    synth_cmd->add_option("--out,-o", synth_out, "Output directory")->required();

    // reconstruct
    ReconstructFlags rec;
    rec.options.jobs = default_jobs();
    auto* rec_cmd = app.add_subcommand("reconstruct", "Train an ensemble on one filament map");
    rec_cmd->add_option("--filaments,-f", rec.options.filaments)->required()->check(CLI::ExistingFile);
    rec_cmd->add_option("--target,-t", rec.options.target)->check(CLI::ExistingFile);
    rec_cmd->add_option("--pil", rec.options.pil, "PIL mask for pixel counts (default: derived from target)")
        ->check(CLI::ExistingFile);
    rec_cmd->add_option("--refs", rec.options.refs_file, "Reference points file 'row col polarity'")
        ->check(CLI::ExistingFile);
    rec_cmd->add_option("--map-id", rec.options.map_id);
    rec_cmd->add_option("--out,-o", rec.options.outdir, "Ensemble output directory")->required();
    add_training_flags(rec_cmd, rec);

    // batch
    ReconstructFlags bat;
    bat.options.jobs = default_jobs();
    fs::path list_file;
    fs::path batch_out;
    bool warm_chain = false;
    auto* batch_cmd = app.add_subcommand("batch", "Reconstruct every map of a list file");
    batch_cmd->add_option("--list", list_file, "Lines 'map_id filaments [target [pil]]'")
        ->required()
        ->check(CLI::ExistingFile);
    batch_cmd->add_option("--out,-o", batch_out)->required();
    batch_cmd->add_flag("--warm-chain", warm_chain, "Initialise each map from the previous map's members");
    add_training_flags(batch_cmd, bat);

    // replay
    fs::path manifest_path;
    fs::path replay_out;
    std::size_t replay_jobs = default_jobs();
    auto* replay_cmd = app.add_subcommand("replay", "Re-run a reconstruction from its manifest");
    replay_cmd->add_option("manifest", manifest_path)->required()->check(CLI::ExistingFile);
    replay_cmd->add_option("--out,-o", replay_out)->required();
    replay_cmd->add_option("--jobs,-j", replay_jobs)->check(CLI::PositiveNumber);

#ifdef PILRECON_WITH_SERVICE
    ServiceConfig svc;
    auto* serve_cmd = app.add_subcommand("serve", "Run the interactive HTTP session service");
    serve_cmd->add_option("--bind", svc.bind, "Bind address");
    serve_cmd->add_option("--port", svc.port)->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--workers", svc.workers, "Concurrent reconstruction jobs")->check(CLI::PositiveNumber);
    serve_cmd->add_option("--max-pixels", svc.max_pixels, "Largest accepted upload");
    serve_cmd->add_option("--cors-origin", svc.cors_origin, "Access-Control-Allow-Origin value");
    serve_cmd->add_option("--snapshot-dir", svc.snapshot_dir, "Write session snapshots here on mutation");
#endif

    try {
        app.parse(argc, argv);
        if (*synth_cmd) {
            synth.polar_caps = !no_caps;
            const SynthWorld w = write_synthetic(synth, synth_out);
            std::cout << "wrote " << (synth_out / "target.pgm").string() << ", "
                      << (synth_out / "pil.pgm").string() << ", "
                      << (synth_out / "filaments.pgm").string() << " (pil " << count_nonzero(w.pil)
                      << " px, filaments " << count_nonzero(w.filaments) << " px)\n";
            return kOk;
        }
        if (*rec_cmd) {
            finalize_flags(rec, rec_cmd);
            const auto r = run_reconstruct(rec.options);
            print_report(r, rec.options);
            return kOk;
        }
        if (*batch_cmd) {
            finalize_flags(bat, batch_cmd);
            const auto r = run_batch(list_file, bat.options, warm_chain, batch_out);
            std::cout << r.summary;
            return r.failures ? kBatchFailures : kOk;
        }
        if (*replay_cmd) {
            const RunManifest m = RunManifest::parse(read_file(manifest_path));
            ReconstructOptions o = options_from_manifest(m, replay_out);
            o.jobs = replay_jobs;
            const auto r = run_reconstruct(o);
            print_report(r, o);
            return kOk;
        }
#ifdef PILRECON_WITH_SERVICE
        if (*serve_cmd) {
            return run_service(svc);
        }
#endif
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    } catch (const MemberError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.numeric() ? kNumeric : kFailure;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumeric;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const SizeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kOk;
}
