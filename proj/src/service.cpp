#include "pilrecon/service.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pilrecon/ensemble.hpp"
#include "pilrecon/errors.hpp"
#include "pilrecon/manifest.hpp"
#include "pilrecon/raster_io.hpp"
#include "pilrecon/rng.hpp"
#include "pilrecon/trainer.hpp"

// after Eigen: <resolv.h> defines a `_res` macro that clashes with Eigen internals
#include <httplib.h>
#include <json.hpp>

namespace pilrecon {
namespace {

using json = nlohmann::json;

constexpr int kMaxWorkingHeight = 64;
constexpr int kMaxWorkingWidth = 128;
constexpr std::size_t kMaxMembers = 8;
constexpr int kMaxIterations = 3000;

class HttpError : public std::runtime_error {
public:
    HttpError(int status, const std::string& message) : std::runtime_error(message), status(status) {}
    int status;
};

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, json{{"code", status}, {"message", message}});
}

json loss_json(const LossBreakdown& b) {
    return json{{"t1", b.t1}, {"t2", b.t2}, {"t3", b.t3}, {"t4", b.t4},
                {"t5", b.t5}, {"tref", b.tref}, {"total", b.total}};
}

json point_json(int row, int col, int polarity) {
    return json{{"row", row}, {"col", col}, {"polarity", polarity}};
}

// Width and height from a P5 header, if it parses. Lets oversized uploads be refused before
// decoding the pixels.
std::optional<std::pair<std::size_t, std::size_t>> peek_p5_size(std::string_view bytes) {
    if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") {
        return std::nullopt;
    }
    std::size_t pos = 2;
    std::size_t fields[2] = {0, 0};
    for (auto& field : fields) {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const auto r = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), field);
        if (r.ec != std::errc{}) {
            return std::nullopt;
        }
        pos = static_cast<std::size_t>(r.ptr - bytes.data());
    }
    return std::pair{fields[1], fields[0]};
}

int require_int(const json& v, const char* what) {
    if (!v.is_number_integer()) {
        throw HttpError(400, std::string(what) + " must be an integer");
    }
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw HttpError(422, std::string(what) + " out of range");
    }
    return static_cast<int>(x);
}

struct JobOptions {
    std::size_t members = 4;
    int iterations = kMaxIterations;
    std::size_t batch_size = TrainConfig::interactive().batch_size;
    std::optional<PlateauStop> plateau = TrainConfig::interactive().plateau;
    int record_every = 100;
    Strategy strategy = Strategy::MeanThenBinarize;
    Poles poles;
    bool warm_start = false;
    std::uint64_t base_seed = 0;

    json to_json() const {
        json j{{"preset", "interactive"},
               {"members", members},
               {"iterations", iterations},
               {"batch_size", batch_size},
               {"record_every", record_every},
               {"strategy", to_string(strategy)},
               {"poles", json::array({poles.north, poles.south})},
               {"warm_start", warm_start},
               {"base_seed", base_seed}};
        j["plateau"] = plateau ? json{{"window", plateau->window}, {"tolerance", plateau->tolerance}}
                               : json(false);
        return j;
    }
};

JobOptions parse_job_options(const json& body) {
    JobOptions o;
    if (body.is_null()) {
        return o;
    }
    if (!body.is_object()) {
        throw HttpError(400, "reconstruct options must be a JSON object");
    }
    for (const auto& [key, v] : body.items()) {
        if (key == "preset") {
            if (v != "interactive") {
                throw HttpError(422, "unknown preset; only 'interactive' is served");
            }
        } else if (key == "members") {
            const int m = require_int(v, "members");
            if (m < 1 || static_cast<std::size_t>(m) > kMaxMembers) {
                throw HttpError(422, "members must be in [1, " + std::to_string(kMaxMembers) + "]");
            }
            o.members = static_cast<std::size_t>(m);
        } else if (key == "iterations") {
            o.iterations = require_int(v, "iterations");
            if (o.iterations < 0 || o.iterations > kMaxIterations) {
                throw HttpError(422, "iterations must be in [0, " + std::to_string(kMaxIterations) + "]");
            }
        } else if (key == "batch_size") {
            const int b = require_int(v, "batch_size");
            if (b < 0) {
                throw HttpError(422, "batch_size must be >= 0");
            }
            o.batch_size = static_cast<std::size_t>(b);
        } else if (key == "record_every") {
            o.record_every = require_int(v, "record_every");
            if (o.record_every < 1) {
                throw HttpError(422, "record_every must be >= 1");
            }
        } else if (key == "plateau") {
            if (v.is_boolean()) {
                o.plateau = v.get<bool>() ? std::optional{PlateauStop{}} : std::nullopt;
            } else if (v.is_object()) {
                PlateauStop p;
                if (v.contains("window")) {
                    p.window = require_int(v["window"], "plateau.window");
                }
                if (v.contains("tolerance")) {
                    if (!v["tolerance"].is_number()) {
                        throw HttpError(400, "plateau.tolerance must be a number");
                    }
                    p.tolerance = v["tolerance"].get<double>();
                }
                if (p.window < 1 || !(p.tolerance >= 0.0)) {
                    throw HttpError(422, "plateau window must be >= 1 and tolerance >= 0");
                }
                o.plateau = p;
            } else {
                throw HttpError(400, "plateau must be a boolean or {window, tolerance}");
            }
        } else if (key == "strategy") {
            if (!v.is_string()) {
                throw HttpError(400, "strategy must be a string");
            }
            try {
                o.strategy = parse_strategy(v.get<std::string>());
            } catch (const std::exception& e) {
                throw HttpError(422, e.what());
            }
        } else if (key == "poles") {
            if (!v.is_array() || v.size() != 2) {
                throw HttpError(400, "poles must be [north, south]");
            }
            o.poles = Poles{require_int(v[0], "poles[0]"), require_int(v[1], "poles[1]")};
            for (int s : {o.poles.north, o.poles.south}) {
                if (s != 1 && s != -1) {
                    throw HttpError(422, "pole signs must be +1 or -1");
                }
            }
        } else if (key == "warm_start") {
            if (!v.is_boolean()) {
                throw HttpError(400, "warm_start must be a boolean");
            }
            o.warm_start = v.get<bool>();
        } else if (key == "base_seed") {
            if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
                throw HttpError(400, "base_seed must be a non-negative integer");
            }
            o.base_seed = v.get<std::uint64_t>();
        } else {
            throw HttpError(422, "unknown option '" + key + "'");
        }
    }
    return o;
}

// A published reconstruction. Never modified after publication.
struct Result {
    int version = 0;
    int points_version = 0;
    std::size_t point_count = 0;
    ConfidenceMap confidence;
    PolarityMap binarized;
    std::vector<MlpParams> member_params;
    std::vector<int> iterations_run;
    std::vector<bool> stopped_on_plateau;
    std::vector<LossBreakdown> final_loss;
    std::vector<bool> warm_started;
    json options;

    json to_json(const std::string& session_id) const {
        json members = json::array();
        for (std::size_t k = 0; k < member_params.size(); ++k) {
            members.push_back(json{{"member", k},
                                   {"iterations_run", iterations_run[k]},
                                   {"stopped_on_plateau", static_cast<bool>(stopped_on_plateau[k])},
                                   {"warm_started", static_cast<bool>(warm_started[k])},
                                   {"final_loss", loss_json(final_loss[k])}});
        }
        const std::string base = "/api/sessions/" + session_id + "/results/" + std::to_string(version);
        return json{{"version", version},
                    {"points_version", points_version},
                    {"point_count", point_count},
                    {"height", confidence.height()},
                    {"width", confidence.width()},
                    {"member_count", member_params.size()},
                    {"members", members},
                    {"options", options},
                    {"confidence_url", base + ".conf"},
                    {"binarized_url", base + ".bin"}};
    }
};

enum class JobState { Queued, Running, Done, Failed };

const char* state_name(JobState s) {
    switch (s) {
        case JobState::Queued: return "queued";
        case JobState::Running: return "running";
        case JobState::Done: return "done";
        case JobState::Failed: return "failed";
    }
    return "?";
}

struct Job {
    std::string id;
    std::string session_id;
    JobOptions options;
    std::atomic<bool> cancel{false};

    mutable std::mutex mu;
    JobState state = JobState::Queued;
    std::vector<int> member_iteration;  // only ever increases
    std::optional<LossBreakdown> latest;
    std::optional<int> result_version;
    std::string error;

    json to_json() const {
        std::lock_guard lock(mu);
        long done = 0;
        for (int it : member_iteration) {
            done += it;
        }
        json j{{"id", id},
               {"session", session_id},
               {"state", state_name(state)},
               {"progress",
                {{"iteration", done},
                 {"iterations_total", static_cast<long>(options.iterations) * static_cast<long>(options.members)},
                 {"members", member_iteration}}},
               {"options", options.to_json()}};
        j["progress"]["loss"] = latest ? loss_json(*latest) : json(nullptr);
        j["result_version"] = result_version ? json(*result_version) : json(nullptr);
        if (state == JobState::Failed) {
            j["error"] = error;
        }
        return j;
    }
};

struct Session {
    std::string id;
    int original_height = 0;
    int original_width = 0;
    int downsample = 1;
    FilamentMask filaments;
    GridSpec grid;

    std::mutex mu;  // guards everything below
    std::map<std::pair<int, int>, int> points;
    int points_version = 0;
    int next_version = 1;
    std::map<int, std::shared_ptr<const Result>> results;
    std::shared_ptr<Job> active;  // queued or running

    ReferencePointSet reference_points() const {
        ReferencePointSet set;
        set.provenance = Provenance::User;
        for (const auto& [rc, p] : points) {
            set.points.push_back(ReferencePoint{rc.first, rc.second, p});
        }
        return set;
    }

    json points_json() const {
        json arr = json::array();
        for (const auto& [rc, p] : points) {
            arr.push_back(point_json(rc.first, rc.second, p));
        }
        return arr;
    }

    json to_json() const {
        json versions = json::array();
        for (const auto& [v, r] : results) {
            versions.push_back(v);
        }
        return json{{"id", id},
                    {"height", grid.height},
                    {"width", grid.width},
                    {"original_height", original_height},
                    {"original_width", original_width},
                    {"downsample", downsample},
                    {"filament_pixels", count_nonzero(filaments)},
                    {"grid",
                     {{"gap_px", grid.gap_px},
                      {"latitude_mode", to_string(grid.latitude_mode)},
                      {"embedding", to_string(grid.embedding)}}},
                    {"points_version", points_version},
                    {"points", points_json()},
                    {"versions", versions},
                    {"latest_version", results.empty() ? json(nullptr) : json(results.rbegin()->first)},
                    {"active_job", active ? json(active->id) : json(nullptr)}};
    }
};

std::string float32_le(const ConfidenceMap& map) {
    std::string out;
    out.reserve(map.size() * 4);
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(map[i]));
        for (int b = 0; b < 4; ++b) {
            out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
    }
    return out;
}

}  // namespace

struct Service::Impl {
    ServiceConfig cfg;
    httplib::Server server;

    std::mutex store_mu;
    std::unordered_map<std::string, std::shared_ptr<Session>> sessions;
    std::unordered_map<std::string, std::shared_ptr<Job>> jobs;
    Rng tokens{std::random_device{}(), 0x5e55};

    std::mutex queue_mu;
    std::condition_variable queue_cv;
    std::deque<std::shared_ptr<Job>> queue;
    bool stopping = false;
    std::vector<std::thread> workers;

    explicit Impl(ServiceConfig c) : cfg(std::move(c)) {
        cfg.retained_versions = std::max<std::size_t>(cfg.retained_versions, 2);
        cfg.workers = std::max<std::size_t>(cfg.workers, 1);
        cfg.member_jobs = std::max<std::size_t>(cfg.member_jobs, 1);
        routes();
        for (std::size_t i = 0; i < cfg.workers; ++i) {
            workers.emplace_back([this] { worker_loop(); });
        }
    }

    ~Impl() { shutdown(); }

    void shutdown() {
        server.stop();
        {
            std::lock_guard lock(queue_mu);
            if (stopping) {
                return;
            }
            stopping = true;
        }
        {
            std::lock_guard lock(store_mu);
            for (auto& [id, job] : jobs) {
                job->cancel = true;
            }
        }
        queue_cv.notify_all();
        for (auto& t : workers) {
            t.join();
        }
    }

    std::string new_token() {
        // caller holds store_mu
        for (;;) {
            std::string id = hex64(tokens.next());
            if (!sessions.contains(id) && !jobs.contains(id)) {
                return id;
            }
        }
    }

    std::shared_ptr<Session> find_session(const std::string& id) {
        std::lock_guard lock(store_mu);
        const auto it = sessions.find(id);
        if (it == sessions.end()) {
            throw HttpError(404, "unknown session '" + id + "'");
        }
        return it->second;
    }

    std::shared_ptr<Job> find_job(const std::string& id) {
        std::lock_guard lock(store_mu);
        const auto it = jobs.find(id);
        if (it == jobs.end()) {
            throw HttpError(404, "unknown job '" + id + "'");
        }
        return it->second;
    }

    // --- snapshots -------------------------------------------------------------------

    std::filesystem::path session_dir(const Session& s) const { return *cfg.snapshot_dir / s.id; }

    template <class F>
    void snapshot(F&& write) {
        if (!cfg.snapshot_dir) {
            return;
        }
        try {
            write();
        } catch (const std::exception& e) {
            std::cerr << "snapshot failed: " << e.what() << "\n";
        }
    }

    void snapshot_points(const Session& s) {
        snapshot([&] {
            write_file_atomic(session_dir(s) / "points.txt", format_reference_points(s.reference_points()));
            write_file_atomic(session_dir(s) / "session.json", s.to_json().dump(2));
        });
    }

    // --- jobs ------------------------------------------------------------------------

    void worker_loop() {
        for (;;) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock lock(queue_mu);
                queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
                if (stopping) {
                    return;
                }
                job = std::move(queue.front());
                queue.pop_front();
            }
            run_job(*job);
        }
    }

    void fail_job(Job& job, Session* session, const std::string& message) {
        if (session) {
            std::lock_guard lock(session->mu);
            if (session->active.get() == &job) {
                session->active.reset();
            }
        }
        std::lock_guard lock(job.mu);
        job.state = JobState::Failed;
        job.error = message;
    }

    void run_job(Job& job) {
        std::shared_ptr<Session> session;
        try {
            session = find_session(job.session_id);
        } catch (const HttpError& e) {
            fail_job(job, nullptr, e.what());
            return;
        }
        const JobOptions& o = job.options;
        try {
            TrainProblem problem;
            EnsembleOptions eo;
            eo.members = o.members;
            eo.base_seed = o.base_seed;
            eo.jobs = cfg.member_jobs;
            eo.warm_starts.assign(o.members, std::nullopt);
            int points_version = 0;
            {
                std::lock_guard lock(session->mu);
                problem.filaments = session->filaments;
                problem.grid = session->grid;
                problem.refs = session->reference_points();
                points_version = session->points_version;
                if (o.warm_start && !session->results.empty()) {
                    const auto& prev = session->results.rbegin()->second;
                    for (std::size_t k = 0; k < o.members && k < prev->member_params.size(); ++k) {
                        eo.warm_starts[k] = prev->member_params[k];
                    }
                }
            }
            problem.poles = o.poles;

            TrainConfig tc = TrainConfig::interactive();
            tc.iterations = o.iterations;
            tc.batch_size = o.batch_size;
            tc.plateau = o.plateau;
            tc.record_every = o.record_every;
            {
                std::lock_guard lock(job.mu);
                if (job.cancel) {
                    throw CancelledError("cancelled before start");
                }
                job.state = JobState::Running;
            }
            const auto members = train_ensemble(
                problem, tc, eo, [&job](std::size_t k, int it, int, const LossBreakdown& loss) {
                    std::lock_guard lock(job.mu);
                    job.member_iteration[k] = std::max(job.member_iteration[k], it);
                    job.latest = loss;
                    return !job.cancel.load();
                });

            auto result = std::make_shared<Result>();
            result->points_version = points_version;
            result->point_count = problem.refs.points.size();
            result->options = o.to_json();
            EnsembleResult agg = aggregate(member_maps(members, problem.grid), o.strategy);
            result->confidence = std::move(agg.mean_map);
            result->binarized = std::move(agg.binarized);
            for (std::size_t k = 0; k < members.size(); ++k) {
                result->member_params.push_back(members[k].params);
                result->iterations_run.push_back(members[k].iterations_run);
                result->stopped_on_plateau.push_back(members[k].stopped_on_plateau);
                result->final_loss.push_back(members[k].final_breakdown);
                result->warm_started.push_back(eo.warm_starts[k].has_value());
            }

            int version = 0;
            {
                std::lock_guard lock(session->mu);
                version = session->next_version++;
                result->version = version;
                session->results.emplace(version, result);
                while (session->results.size() > cfg.retained_versions) {
                    session->results.erase(session->results.begin());
                }
                session->active.reset();
                snapshot([&] {
                    const auto dir = session_dir(*session) / ("v" + std::to_string(version));
                    save_raster(result->confidence, dir / "mean.conf.pgm");
                    save_raster(result->binarized, dir / "binarized.pgm");
                    for (std::size_t k = 0; k < result->member_params.size(); ++k) {
                        char name[32];
                        std::snprintf(name, sizeof name, "member_%03zu.params", k);
                        save_params(result->member_params[k], dir / name);
                    }
                    write_file_atomic(dir / "result.json", result->to_json(session->id).dump(2));
                });
            }
            std::lock_guard lock(job.mu);
            for (std::size_t k = 0; k < members.size(); ++k) {
                job.member_iteration[k] = std::max(job.member_iteration[k], members[k].iterations_run);
            }
            job.latest = members.empty() ? std::nullopt : std::optional{members.back().final_breakdown};
            job.result_version = version;
            job.state = JobState::Done;
        } catch (const std::exception& e) {
            fail_job(job, session.get(), e.what());
        }
    }

    // --- handlers --------------------------------------------------------------------

    template <class F>
    httplib::Server::Handler guarded(F&& f) {
        return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const HttpError& e) {
                send_error(res, e.status, e.what());
            } catch (const json::exception& e) {
                send_error(res, 400, std::string("bad JSON: ") + e.what());
            } catch (const FormatError& e) {
                send_error(res, 400, e.what());
            } catch (const SizeError& e) {
                send_error(res, 422, e.what());
            } catch (const DomainError& e) {
                send_error(res, 422, e.what());
            } catch (const RangeError& e) {
                send_error(res, 422, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        };
    }

    static std::optional<std::string> field(const httplib::Request& req, const std::string& name) {
        if (req.has_param(name)) {
            return req.get_param_value(name);
        }
        if (req.is_multipart_form_data() && req.has_file(name)) {
            return req.get_file_value(name).content;
        }
        return std::nullopt;
    }

    static int int_field(const std::string& text, const char* what) {
        int v = 0;
        const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
        if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) {
            throw HttpError(400, std::string(what) + " must be an integer, got '" + text + "'");
        }
        return v;
    }

    void create_session(const httplib::Request& req, httplib::Response& res) {
        std::string bytes;
        if (req.is_multipart_form_data()) {
            if (!req.has_file("raster")) {
                throw HttpError(400, "multipart upload needs a 'raster' part");
            }
            bytes = req.get_file_value("raster").content;
        } else {
            bytes = req.body;
        }
        if (const auto dims = peek_p5_size(bytes);
            dims && dims->first > 0 && dims->second > cfg.max_pixels / dims->first) {
            throw HttpError(413, "raster " + std::to_string(dims->first) + "x" + std::to_string(dims->second) +
                                     " exceeds the limit of " + std::to_string(cfg.max_pixels) + " pixels");
        }
        FilamentMask mask;
        try {
            mask = decode_filament(bytes);
        } catch (const std::exception& e) {
            throw HttpError(400, std::string("bad raster: ") + e.what());
        }
        if (mask.size() > cfg.max_pixels) {
            throw HttpError(413, "raster exceeds the limit of " + std::to_string(cfg.max_pixels) + " pixels");
        }

        auto s = std::make_shared<Session>();
        s->original_height = mask.height();
        s->original_width = mask.width();
        if (const auto f = field(req, "downsample"); f && *f != "auto") {
            s->downsample = int_field(*f, "downsample");
            if (s->downsample < 1) {
                throw HttpError(422, "downsample must be >= 1");
            }
        } else {
            // smallest exact factor reaching the interactive working resolution
            s->downsample = 0;
            for (int k = 1; k <= mask.height(); ++k) {
                if (mask.height() % k == 0 && mask.width() % k == 0 && mask.height() / k <= kMaxWorkingHeight &&
                    mask.width() / k <= kMaxWorkingWidth) {
                    s->downsample = k;
                    break;
                }
            }
            if (s->downsample == 0) {
                throw HttpError(422, "no integer factor reduces " + std::to_string(mask.height()) + "x" +
                                         std::to_string(mask.width()) + " to at most " +
                                         std::to_string(kMaxWorkingHeight) + "x" +
                                         std::to_string(kMaxWorkingWidth));
            }
        }
        s->filaments = s->downsample > 1 ? downsample(mask, s->downsample) : std::move(mask);
        if (s->filaments.height() > kMaxWorkingHeight || s->filaments.width() > kMaxWorkingWidth) {
            throw HttpError(422, "working resolution " + std::to_string(s->filaments.height()) + "x" +
                                     std::to_string(s->filaments.width()) + " exceeds the interactive cap " +
                                     std::to_string(kMaxWorkingHeight) + "x" + std::to_string(kMaxWorkingWidth));
        }
        s->grid = GridSpec::for_map(s->filaments.height(), s->filaments.width());
        if (const auto f = field(req, "latitude_mode")) {
            s->grid.latitude_mode = parse_latitude_mode(*f);
        }
        if (const auto f = field(req, "gap")) {
            s->grid.gap_px = int_field(*f, "gap");
        }
        s->grid.validate();

        {
            std::lock_guard lock(store_mu);
            s->id = new_token();
            sessions.emplace(s->id, s);
        }
        std::lock_guard lock(s->mu);
        snapshot([&] {
            save_raster(s->filaments, session_dir(*s) / "filaments.pgm");
            write_file_atomic(session_dir(*s) / "session.json", s->to_json().dump(2));
        });
        send_json(res, 201, s->to_json());
    }

    void get_session(const httplib::Request& req, httplib::Response& res) {
        const auto s = find_session(req.matches[1]);
        std::lock_guard lock(s->mu);
        send_json(res, 200, s->to_json());
    }

    void get_filaments(const httplib::Request& req, httplib::Response& res) {
        const auto s = find_session(req.matches[1]);
        res.set_content(encode(s->filaments), "image/x-portable-graymap");
    }

    void edit_points(const httplib::Request& req, httplib::Response& res) {
        const auto s = find_session(req.matches[1]);
        const json body = json::parse(req.body);
        if (!body.is_object()) {
            throw HttpError(400, "expected {\"add\": [...], \"remove\": [...]}");
        }
        for (const auto& [key, v] : body.items()) {
            if (key != "add" && key != "remove") {
                throw HttpError(422, "unknown field '" + key + "'");
            }
            if (!v.is_array()) {
                throw HttpError(400, "'" + key + "' must be an array");
            }
        }
        const int h = s->grid.height;
        const int w = s->grid.width;
        auto coords = [&](const json& item, bool with_polarity) {
            json row;
            json col;
            json pol;
            if (item.is_array()) {
                if (item.size() != (with_polarity ? 3u : 2u)) {
                    throw HttpError(400, with_polarity ? "points are [row, col, polarity]" : "removals are [row, col]");
                }
                row = item[0];
                col = item[1];
                if (with_polarity) {
                    pol = item[2];
                }
            } else if (item.is_object()) {
                row = item.value("row", json());
                col = item.value("col", json());
                if (with_polarity) {
                    pol = item.value("polarity", json());
                }
            } else {
                throw HttpError(400, "point must be an object or array");
            }
            const int r = require_int(row, "row");
            const int c = require_int(col, "col");
            if (r < 0 || r >= h || c < 0 || c >= w) {
                throw HttpError(422, "point (" + std::to_string(r) + ", " + std::to_string(c) +
                                         ") outside the " + std::to_string(h) + "x" + std::to_string(w) + " map");
            }
            int p = 0;
            if (with_polarity) {
                p = require_int(pol, "polarity");
                if (p != 1 && p != -1) {
                    throw HttpError(422, "polarity at (" + std::to_string(r) + ", " + std::to_string(c) +
                                             ") must be +1 or -1, got " + std::to_string(p));
                }
            }
            return std::tuple{r, c, p};
        };
        // validate the whole batch before touching the session
        std::vector<std::tuple<int, int, int>> adds;
        std::vector<std::tuple<int, int, int>> removes;
        if (body.contains("add")) {
            for (const auto& item : body["add"]) {
                adds.push_back(coords(item, true));
            }
        }
        if (body.contains("remove")) {
            for (const auto& item : body["remove"]) {
                removes.push_back(coords(item, false));
            }
        }
        std::lock_guard lock(s->mu);
        for (const auto& [r, c, p] : removes) {
            s->points.erase({r, c});
        }
        for (const auto& [r, c, p] : adds) {
            s->points[{r, c}] = p;
        }
        ++s->points_version;
        snapshot_points(*s);
        send_json(res, 200, json{{"version", s->points_version}, {"points", s->points_json()}});
    }

    void start_reconstruction(const httplib::Request& req, httplib::Response& res) {
        const auto s = find_session(req.matches[1]);
        const json body = req.body.empty() ? json() : json::parse(req.body);
        auto job = std::make_shared<Job>();
        job->options = parse_job_options(body);
        job->session_id = s->id;
        job->member_iteration.assign(job->options.members, 0);
        {
            std::lock_guard lock(s->mu);
            if (s->active) {
                throw HttpError(409, "job " + s->active->id + " is already running on this session");
            }
            {
                std::lock_guard store(store_mu);
                job->id = new_token();
                jobs.emplace(job->id, job);
            }
            s->active = job;
        }
        {
            std::lock_guard lock(queue_mu);
            queue.push_back(job);
        }
        queue_cv.notify_one();
        res.set_header("Location", "/api/jobs/" + job->id);
        send_json(res, 202, job->to_json());
    }

    void get_job(const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, find_job(req.matches[1])->to_json());
    }

    void get_result(const httplib::Request& req, httplib::Response& res) {
        const auto s = find_session(req.matches[1]);
        const std::string vtext = req.matches[2];
        const std::string suffix = req.matches[3];
        int version = 0;
        const auto r = std::from_chars(vtext.data(), vtext.data() + vtext.size(), version);
        std::shared_ptr<const Result> result;
        if (r.ec == std::errc{}) {
            std::lock_guard lock(s->mu);
            if (const auto it = s->results.find(version); it != s->results.end()) {
                result = it->second;
            }
        }
        if (!result) {
            throw HttpError(404, "session " + s->id + " has no result version " + vtext);
        }
        const std::string accept = req.get_header_value("Accept");
        const bool want_json = accept.find("application/json") != std::string::npos;
        const bool want_binary = accept.find("application/octet-stream") != std::string::npos;
        if (suffix.empty()) {
            send_json(res, 200, result->to_json(s->id));
        } else if (suffix == ".conf") {
            if (want_json) {
                const std::vector<double>& values = result->confidence.data();
                send_json(res, 200, json{{"height", result->confidence.height()},
                                         {"width", result->confidence.width()},
                                         {"values", values}});
            } else if (want_binary) {
                res.set_header("X-Raster-Height", std::to_string(result->confidence.height()));
                res.set_header("X-Raster-Width", std::to_string(result->confidence.width()));
                res.set_header("X-Raster-Encoding", "float32-le");
                res.set_content(float32_le(result->confidence), "application/octet-stream");
            } else {
                res.set_content(encode(result->confidence), "image/x-portable-graymap");
            }
        } else {
            if (want_json) {
                std::vector<int> values(result->binarized.data().begin(), result->binarized.data().end());
                send_json(res, 200, json{{"height", result->binarized.height()},
                                         {"width", result->binarized.width()},
                                         {"values", values}});
            } else {
                res.set_content(encode(result->binarized), "image/x-portable-graymap");
            }
        }
    }

    void routes() {
        server.set_default_headers({{"Access-Control-Allow-Origin", cfg.cors_origin},
                                    {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                    {"Access-Control-Allow-Headers", "Content-Type, Accept"},
                                    {"Access-Control-Expose-Headers",
                                     "Location, X-Raster-Height, X-Raster-Width, X-Raster-Encoding"}});
        // room for a 16-bit raster at the pixel limit plus multipart framing
        server.set_payload_max_length(cfg.max_pixels * 2 + (std::size_t{1} << 16));
        server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (res.body.empty()) {
                send_error(res, res.status, httplib::status_message(res.status));
            }
        });
        server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        const std::string id = "([0-9a-f]+)";
        server.Post("/api/sessions", guarded([this](auto& q, auto& r) { create_session(q, r); }));
        server.Get("/api/sessions/" + id, guarded([this](auto& q, auto& r) { get_session(q, r); }));
        server.Get("/api/sessions/" + id + "/filaments",
                   guarded([this](auto& q, auto& r) { get_filaments(q, r); }));
        server.Post("/api/sessions/" + id + "/points", guarded([this](auto& q, auto& r) { edit_points(q, r); }));
        server.Post("/api/sessions/" + id + "/reconstruct",
                    guarded([this](auto& q, auto& r) { start_reconstruction(q, r); }));
        server.Get("/api/jobs/" + id, guarded([this](auto& q, auto& r) { get_job(q, r); }));
        server.Get("/api/sessions/" + id + R"(/results/(\d+)(\.conf|\.bin)?)",
                   guarded([this](auto& q, auto& r) { get_result(q, r); }));
    }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() = default;

int Service::bind() {
    auto& i = *impl_;
    if (i.cfg.port == 0) {
        return i.server.bind_to_any_port(i.cfg.bind);
    }
    return i.server.bind_to_port(i.cfg.bind, i.cfg.port) ? i.cfg.port : -1;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() { impl_->shutdown(); }

int run_service(const ServiceConfig& config) {
    Service service(config);
    const int port = service.bind();
    if (port < 0) {
        std::cerr << "error: cannot bind " << config.bind << ":" << config.port << "\n";
        return 3;
    }
    std::cout << "listening on http://" << config.bind << ":" << port << std::endl;
    service.listen();
    return 0;
}

}  // namespace pilrecon
