#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace pilrecon {

struct ServiceConfig {
    std::string bind = "127.0.0.1";
    int port = 8080;  ///< 0 picks a free port
    /// Reconstruction jobs running at once across all sessions.
    std::size_t workers = 2;
    /// Threads per job for training its members.
    std::size_t member_jobs = 1;
    /// Largest accepted upload, in pixels of the original raster.
    std::size_t max_pixels = std::size_t{2048} * 4096;
    /// Result versions kept per session (at least 2).
    std::size_t retained_versions = 4;
    std::string cors_origin = "*";
    /// When set, sessions are mirrored here on every mutation.
    std::optional<std::filesystem::path> snapshot_dir;
};

/// Session-oriented HTTP API: upload a filament map, edit reference points, run
/// reconstructions as background jobs and fetch the published result versions.
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the listening socket and returns the port actually bound.
    int bind();
    /// Serves until stop(). Call bind() first.
    void listen();
    /// Stops the listener and cancels queued and running jobs.
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// bind + listen; returns a process exit code.
int run_service(const ServiceConfig& config);

}  // namespace pilrecon
