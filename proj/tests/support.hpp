#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <vector>
#include <chrono>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("pilrecon-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};


// Plain extended-precision evaluation of the MLP from its flat parameter layout (per layer:
// weights row-major, then bias; tanh after every layer). Shares no code with the library.
inline long double reference_mlp(const std::vector<int>& sizes, const std::vector<long double>& theta,
                                 const std::array<long double, 3>& point) {
    std::vector<long double> a(point.begin(), point.end());
    std::size_t k = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int in = sizes[l];
        const int out = sizes[l + 1];
        std::vector<long double> z(static_cast<std::size_t>(out), 0.0L);
        for (int o = 0; o < out; ++o) {
            for (int i = 0; i < in; ++i) {
                z[o] += theta[k++] * a[i];
            }
        }
        for (int o = 0; o < out; ++o) {
            z[o] = std::tanh(z[o] + theta[k++]);
        }
        a = std::move(z);
    }
    return a[0];
}

// Central difference in long double with two Richardson steps.
template <class F>
long double richardson_ld(F&& f, long double h = 1e-3L) {
    auto central = [&](long double step) { return (f(step) - f(-step)) / (2.0L * step); };
    const long double d1 = central(h);
    const long double d2 = central(h / 2);
    const long double d3 = central(h / 4);
    const long double r1 = (4.0L * d2 - d1) / 3.0L;
    const long double r2 = (4.0L * d3 - d2) / 3.0L;
    return (16.0L * r2 - r1) / 15.0L;
}

// Central difference refined by two Richardson steps; error O(h^6) plus rounding.
template <class F>
double richardson_derivative(F&& f, double h = 1e-3) {
    auto central = [&](double step) { return (f(step) - f(-step)) / (2.0 * step); };
    const double d1 = central(h);
    const double d2 = central(h / 2);
    const double d3 = central(h / 4);
    const double r1 = (4.0 * d2 - d1) / 3.0;
    const double r2 = (4.0 * d3 - d2) / 3.0;
    return (16.0 * r2 - r1) / 15.0;
}

// |analytic - numeric| / (|analytic| + 1e-12)
inline double fd_rel(double analytic, double numeric) {
    const double d = analytic - numeric;
    return (d < 0 ? -d : d) / ((analytic < 0 ? -analytic : analytic) + 1e-12);
}

}  // namespace testing
