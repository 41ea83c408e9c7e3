#include "pilrecon/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <iomanip>
#include <sstream>

#include "pilrecon/raster_io.hpp"

namespace pilrecon {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw FormatError("manifest entry " + key + ": bad number '" + text + "'");
    }
    return v;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& text) {
    Int v{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw FormatError("manifest entry " + key + ": bad integer '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true") {
        return true;
    }
    if (text == "false") {
        return false;
    }
    throw FormatError("manifest entry " + key + ": expected true or false");
}

std::string member_name(std::size_t k, const char* suffix) {
    std::ostringstream os;
    os << "member_" << std::setw(3) << std::setfill('0') << k << suffix;
    return os.str();
}

std::string file_hash(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

std::string architecture_string(const MlpSpec& spec) {
    std::string s;
    for (std::size_t i = 0; i < spec.layer_sizes.size(); ++i) {
        s += (i ? "," : "") + std::to_string(spec.layer_sizes[i]);
    }
    return s;
}

MlpSpec parse_architecture(const std::string& text) {
    MlpSpec spec;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        spec.layer_sizes.push_back(parse_int<int>("train.architecture", item));
    }
    spec.validate();
    return spec;
}

std::string report_text(const std::string& map_id, const std::optional<ErrorReport>& err,
                        const PixelCounts& counts) {
    return std::string(kReportHeader) + "\n" + format_report_row(map_id, err, counts) + "\n";
}

}  // namespace

SynthWorld write_synthetic(const SynthSpec& spec, const fs::path& outdir) {
    SynthWorld world = generate(spec);
    fs::create_directories(outdir);
    save_raster(world.target, outdir / "target.pgm");
    save_raster(world.pil, outdir / "pil.pgm");
    save_raster(world.filaments, outdir / "filaments.pgm");
    return world;
}

Poles poles_from_target(const PolarityMap& target, const GridSpec& spec) {
    const BandMasks bands = band_masks(spec);
    long north = 0;
    long south = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (bands.north[i]) {
            north += target[i];
        }
        if (bands.south[i]) {
            south += target[i];
        }
    }
    return {north < 0 ? -1 : 1, south > 0 ? 1 : -1};
}

RunManifest manifest_for(const ReconstructOptions& o) {
    RunManifest m;
    m.set_config("map_id", o.map_id);
    m.set_config("grid.downsample", std::to_string(o.downsample));
    m.set_config("grid.gap_px", o.gap_px ? std::to_string(*o.gap_px) : "auto");
    m.set_config("grid.latitude_mode", to_string(o.latitude_mode));
    m.set_config("grid.embedding", to_string(o.embedding));
    m.set_config("grid.z_half_height", fmt_double(o.z_half_height));
    m.set_config("refs.grid_step", std::to_string(o.grid_step));
    m.set_config("poles", o.poles ? std::to_string(o.poles->north) + " " +
                                        std::to_string(o.poles->south)
                                  : "auto");
    m.set_config("loss.neutrality", fmt_double(o.weights.neutrality));
    m.set_config("loss.filament", fmt_double(o.weights.filament));
    m.set_config("loss.bipolarity", fmt_double(o.weights.bipolarity));
    m.set_config("loss.pole", fmt_double(o.weights.pole));
    m.set_config("loss.gradient_norm", fmt_double(o.weights.gradient_norm));
    m.set_config("loss.reference", fmt_double(o.weights.reference));
    m.set_config("train.iterations", std::to_string(o.train.iterations));
    m.set_config("train.learning_rate", fmt_double(o.train.learning_rate));
    m.set_config("train.weight_decay", fmt_double(o.train.weight_decay));
    m.set_config("train.decoupled_weight_decay", o.train.decoupled_weight_decay ? "true" : "false");
    m.set_config("train.batch_size", std::to_string(o.train.batch_size));
    m.set_config("train.record_every", std::to_string(o.train.record_every));
    m.set_config("train.determinism", o.train.determinism ? "true" : "false");
    m.set_config("train.plateau", o.train.plateau ? std::to_string(o.train.plateau->window) + " " +
                                                        fmt_double(o.train.plateau->tolerance)
                                                  : "off");
    m.set_config("train.architecture", architecture_string(o.train.architecture));
    m.set_config("train.cos_latitude", o.train.cos_latitude_weighting ? "true" : "false");
    m.set_config("ensemble.members", std::to_string(o.members));
    m.set_config("ensemble.base_seed", std::to_string(o.base_seed));
    m.set_config("ensemble.seed_mixing", "base_seed xor member");
    m.set_config("ensemble.strategy", to_string(o.strategy));
    m.set_config("ensemble.both_strategies", o.both_strategies ? "true" : "false");
    m.set_config("warm_start", o.warm_start_dir ? "dir" : "none");

    m.add_input("filaments", o.filaments, file_hash(o.filaments));
    if (o.target) {
        m.add_input("target", *o.target, file_hash(*o.target));
    }
    if (o.pil) {
        m.add_input("pil", *o.pil, file_hash(*o.pil));
    }
    if (o.refs_file) {
        m.add_input("refs", *o.refs_file, file_hash(*o.refs_file));
    }
    if (o.warm_start_dir) {
        for (std::size_t k = 0; k < o.members; ++k) {
            const fs::path p = *o.warm_start_dir / member_name(k, ".params");
            m.add_input("warm_start_" + member_name(k, ""), p, file_hash(p));
        }
    }
    for (std::size_t k = 0; k < o.members; ++k) {
        m.set_note("seed." + member_name(k, ""),
                   std::to_string(member_seed(o.base_seed, k)));
    }
    m.set_note("jobs", std::to_string(o.jobs));
    return m;
}

ReconstructOptions options_from_manifest(const RunManifest& m, const fs::path& outdir) {
    ReconstructOptions o;
    o.outdir = outdir;
    o.map_id = m.require("map_id");
    o.downsample = parse_int<int>("grid.downsample", m.require("grid.downsample"));
    if (const auto gap = m.require("grid.gap_px"); gap != "auto") {
        o.gap_px = parse_int<int>("grid.gap_px", gap);
    }
    o.latitude_mode = parse_latitude_mode(m.require("grid.latitude_mode"));
    o.embedding = parse_embedding(m.require("grid.embedding"));
    o.z_half_height = parse_double("grid.z_half_height", m.require("grid.z_half_height"));
    o.grid_step = parse_int<int>("refs.grid_step", m.require("refs.grid_step"));
    if (const auto poles = m.require("poles"); poles != "auto") {
        std::istringstream ps(poles);
        Poles p;
        if (!(ps >> p.north >> p.south)) {
            throw FormatError("manifest entry poles: expected 'north south'");
        }
        o.poles = p;
    }
    o.weights.neutrality = parse_double("loss.neutrality", m.require("loss.neutrality"));
    o.weights.filament = parse_double("loss.filament", m.require("loss.filament"));
    o.weights.bipolarity = parse_double("loss.bipolarity", m.require("loss.bipolarity"));
    o.weights.pole = parse_double("loss.pole", m.require("loss.pole"));
    o.weights.gradient_norm = parse_double("loss.gradient_norm", m.require("loss.gradient_norm"));
    o.weights.reference = parse_double("loss.reference", m.require("loss.reference"));
    o.train.iterations = parse_int<int>("train.iterations", m.require("train.iterations"));
    o.train.learning_rate = parse_double("train.learning_rate", m.require("train.learning_rate"));
    o.train.weight_decay = parse_double("train.weight_decay", m.require("train.weight_decay"));
    o.train.decoupled_weight_decay =
        parse_bool("train.decoupled_weight_decay", m.require("train.decoupled_weight_decay"));
    o.train.batch_size = parse_int<std::size_t>("train.batch_size", m.require("train.batch_size"));
    o.train.record_every = parse_int<int>("train.record_every", m.require("train.record_every"));
    o.train.determinism = parse_bool("train.determinism", m.require("train.determinism"));
    if (const auto plateau = m.require("train.plateau"); plateau != "off") {
        std::istringstream ps(plateau);
        PlateauStop p;
        std::string tol;
        if (!(ps >> p.window >> tol)) {
            throw FormatError("manifest entry train.plateau: expected 'window tolerance'");
        }
        p.tolerance = parse_double("train.plateau", tol);
        o.train.plateau = p;
    }
    o.train.architecture = parse_architecture(m.require("train.architecture"));
    o.train.cos_latitude_weighting = parse_bool("train.cos_latitude", m.require("train.cos_latitude"));
    o.members = parse_int<std::size_t>("ensemble.members", m.require("ensemble.members"));
    o.base_seed = parse_int<std::uint64_t>("ensemble.base_seed", m.require("ensemble.base_seed"));
    o.strategy = parse_strategy(m.require("ensemble.strategy"));
    o.both_strategies = parse_bool("ensemble.both_strategies", m.require("ensemble.both_strategies"));

    for (const auto& in : m.inputs()) {
        if (file_hash(in.path) != in.hash) {
            throw FormatError("input " + in.name + " (" + in.path +
                              ") changed since the manifest was written");
        }
        if (in.name == "filaments") {
            o.filaments = in.path;
        } else if (in.name == "target") {
            o.target = fs::path(in.path);
        } else if (in.name == "pil") {
            o.pil = fs::path(in.path);
        } else if (in.name == "refs") {
            o.refs_file = fs::path(in.path);
        } else if (in.name.rfind("warm_start_", 0) == 0) {
            o.warm_start_dir = fs::path(in.path).parent_path();
        }
    }
    if (o.filaments.empty()) {
        throw FormatError("manifest lacks the filaments input");
    }
    if (m.require("warm_start") == "dir" && !o.warm_start_dir) {
        throw FormatError("manifest declares a warm start without donor inputs");
    }
    return o;
}

ReconstructOutcome run_reconstruct(const ReconstructOptions& o, const MemberProgress& progress) {
    const auto t_start = Clock::now();
    if (o.grid_step < 0) {
        throw DomainError("grid step must be >= 0");
    }
    if (o.grid_step > 0 && o.refs_file) {
        throw DomainError("a reference grid and a reference file are mutually exclusive");
    }
    if (o.members < 1) {
        throw DomainError("ensemble needs at least one member");
    }
    RunManifest manifest = manifest_for(o);

    FilamentMask filaments = downsample(load_filament(o.filaments), o.downsample);
    std::optional<PolarityMap> target;
    if (o.target) {
        target = downsample(load_polarity(*o.target), o.downsample);
        require_same_shape(*target, filaments, "target");
    }
    std::optional<FilamentMask> pil;
    if (o.pil) {
        pil = downsample(load_filament(*o.pil), o.downsample);
        require_same_shape(*pil, filaments, "pil");
    } else if (target) {
        pil = pil_from_polarity(*target);
    }

    TrainProblem problem;
    problem.grid = GridSpec::for_map(filaments.height(), filaments.width());
    if (o.gap_px) {
        problem.grid.gap_px = *o.gap_px;
    }
    problem.grid.latitude_mode = o.latitude_mode;
    problem.grid.embedding = o.embedding;
    problem.grid.z_half_height = o.z_half_height;
    problem.grid.validate();
    problem.filaments = std::move(filaments);
    problem.weights = o.weights;

    if (o.grid_step > 0) {
        if (!target) {
            throw DomainError("a reference grid needs a target map to read polarities from");
        }
        std::string warning;
        problem.refs = reference_grid(problem.grid, o.grid_step, *target, &warning);
        if (!warning.empty()) {
            manifest.set_note("warning", warning);
        }
    } else if (o.refs_file) {
        problem.refs = load_reference_points(*o.refs_file);
    }
    if (o.poles) {
        problem.poles = *o.poles;
    } else if (target) {
        problem.poles = poles_from_target(*target, problem.grid);
    } else {
        throw DomainError("pole polarities must be given when no target map is available");
    }
    manifest.set_note("poles.resolved",
                      std::to_string(problem.poles.north) + " " + std::to_string(problem.poles.south));
    manifest.set_note("refs.count", std::to_string(problem.refs.size()));

    EnsembleOptions eo;
    eo.members = o.members;
    eo.base_seed = o.base_seed;
    eo.jobs = o.jobs;
    if (o.warm_start_dir) {
        for (std::size_t k = 0; k < o.members; ++k) {
            eo.warm_starts.emplace_back(load_params(*o.warm_start_dir / member_name(k, ".params")));
        }
    }
    TrainConfig config = o.train;
    config.warm_start.reset();

    const auto t_train = Clock::now();
    std::vector<TrainedModel> members = train_ensemble(problem, config, eo, progress);
    manifest.set_timing("train", seconds_since(t_train));

    const auto t_agg = Clock::now();
    ReconstructOutcome out;
    out.grid = problem.grid;
    out.ensemble = aggregate(member_maps(members, problem.grid), o.strategy);
    if (target) {
        out.error = error_fractions(out.ensemble.binarized, *target, problem.grid);
    }
    out.counts = pil ? pixel_counts(problem.filaments, *pil)
                     : PixelCounts{count_nonzero(problem.filaments), 0, std::nullopt};
    std::optional<PolarityMap> other;
    if (o.both_strategies) {
        other = o.strategy == Strategy::MeanThenBinarize
                    ? aggregate_majority(out.ensemble.member_maps)
                    : aggregate_mean(out.ensemble.member_maps).binarized;
        if (target) {
            out.alternate_error = error_fractions(*other, *target, problem.grid);
        }
    }
    manifest.set_timing("aggregate", seconds_since(t_agg));

    const auto t_write = Clock::now();
    fs::create_directories(o.outdir);
    auto emit = [&](const std::string& name, const std::string& bytes) {
        write_file_atomic(o.outdir / name, bytes);
        manifest.add_output(name);
    };
    for (std::size_t k = 0; k < members.size(); ++k) {
        emit(member_name(k, ".params"), encode_params(members[k].params));
        emit(member_name(k, ".conf.pgm"), encode(out.ensemble.member_maps[k]));
        emit(member_name(k, ".history"), format_history(members[k].history));
    }
    emit("mean.conf.pgm", encode(out.ensemble.mean_map));
    emit("binarized.pgm", encode(out.ensemble.binarized));
    emit("refs.txt", format_reference_points(problem.refs));
    if (o.both_strategies) {
        const bool mean_primary = o.strategy == Strategy::MeanThenBinarize;
        emit(mean_primary ? "binarized_majority.pgm" : "binarized_mean.pgm", encode(*other));
        emit("report_mean.txt",
             report_text(o.map_id, mean_primary ? out.error : out.alternate_error, out.counts));
        emit("report_majority.txt",
             report_text(o.map_id, mean_primary ? out.alternate_error : out.error, out.counts));
    }
    emit("report.txt", report_text(o.map_id, out.error, out.counts));
    manifest.set_timing("write", seconds_since(t_write));
    manifest.set_timing("total", seconds_since(t_start));
    write_file_atomic(o.outdir / "manifest", manifest.serialize());

    out.members = std::move(members);
    out.manifest = std::move(manifest);
    return out;
}

std::vector<BatchEntry> parse_map_list(std::string_view text, const fs::path& base_dir) {
    std::vector<BatchEntry> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    auto resolve = [&](const std::string& p) {
        const fs::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream fields(line);
        std::vector<std::string> parts;
        for (std::string f; fields >> f;) {
            parts.push_back(f);
        }
        if (parts.empty()) {
            continue;
        }
        if (parts.size() < 2 || parts.size() > 4) {
            throw FormatError("map list line " + std::to_string(lineno) +
                              ": expected 'map_id filaments [target [pil]]'");
        }
        BatchEntry e;
        e.map_id = parts[0];
        if (e.map_id.find_first_of("/\\") != std::string::npos || e.map_id == "." || e.map_id == "..") {
            throw FormatError("map list line " + std::to_string(lineno) + ": bad map id");
        }
        e.filaments = resolve(parts[1]);
        if (parts.size() > 2) {
            e.target = resolve(parts[2]);
        }
        if (parts.size() > 3) {
            e.pil = resolve(parts[3]);
        }
        out.push_back(std::move(e));
    }
    return out;
}

BatchOutcome run_batch(const fs::path& list_file, const ReconstructOptions& shared,
                       bool warm_chain, const fs::path& outdir) {
    const auto entries = parse_map_list(read_file(list_file), list_file.parent_path());
    fs::create_directories(outdir);
    BatchOutcome out;
    std::optional<fs::path> previous_dir;
    std::optional<std::string> previous_id;
    for (const auto& e : entries) {
        BatchRow row;
        row.map_id = e.map_id;
        ReconstructOptions o = shared;
        o.map_id = e.map_id;
        o.filaments = e.filaments;
        o.target = e.target;
        o.pil = e.pil;
        o.outdir = outdir / e.map_id;
        if (warm_chain && previous_dir) {
            o.warm_start_dir = previous_dir;
            row.donor = previous_id;
        }
        try {
            const ReconstructOutcome r = run_reconstruct(o);
            row.error = r.error;
            row.counts = r.counts;
            previous_dir = o.outdir;
            previous_id = e.map_id;
        } catch (const std::exception& ex) {
            row.failure = ex.what();
            ++out.failures;
        }
        out.rows.push_back(std::move(row));
    }

    std::vector<double> ratios;
    std::vector<double> errors;
    double sum_total = 0.0;
    double sum_band = 0.0;
    std::size_t scored = 0;
    std::ostringstream summary;
    summary << kReportHeader << " donor\n";
    for (const auto& row : out.rows) {
        if (row.failure) {
            summary << "# " << row.map_id << " FAILED: " << *row.failure << "\n";
            continue;
        }
        summary << format_report_row(row.map_id, row.error, row.counts) << ' '
                << (row.donor ? *row.donor : "-") << "\n";
        if (row.error) {
            sum_total += row.error->e_total;
            sum_band += row.error->e_band;
            ++scored;
            if (row.counts.ratio) {
                ratios.push_back(*row.counts.ratio);
                errors.push_back(row.error->e_total);
            }
        }
    }
    if (scored > 0) {
        out.mean_e_total = sum_total / static_cast<double>(scored);
        out.mean_e_band = sum_band / static_cast<double>(scored);
        summary << "# mean e_total " << *out.mean_e_total << " e_band " << *out.mean_e_band << "\n";
    }
    if (ratios.size() >= 2) {
        out.ratio_error_correlation = pearson(ratios, errors);
    }
    summary << "# pearson(ratio, e_total) "
            << (out.ratio_error_correlation ? fmt_double(*out.ratio_error_correlation) : "NA")
            << "\n";
    summary << "# failures " << out.failures << "\n";
    out.summary = summary.str();
    write_file_atomic(outdir / "summary.txt", out.summary);

    RunManifest m;
    m.set_config("command", "batch");
    m.set_config("warm_chain", warm_chain ? "true" : "false");
    m.add_input("map_list", list_file, file_hash(list_file));
    for (const auto& row : out.rows) {
        if (!row.failure) {
            m.add_output(row.map_id + "/manifest");
        }
        m.set_note("donor." + row.map_id, row.donor ? *row.donor : "-");
    }
    m.add_output("summary.txt");
    write_file_atomic(outdir / "manifest", m.serialize());
    return out;
}

}  // namespace pilrecon
