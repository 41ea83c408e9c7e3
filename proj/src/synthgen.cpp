#include "pilrecon/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "pilrecon/rng.hpp"

namespace pilrecon {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

void add_polar_caps(std::vector<double>& g, const SynthSpec& spec,
                    const std::vector<Harmonic>& modes, int north_sign) {
    double bound = 0.0;
    for (const auto& h : modes) {
        bound += std::abs(h.amplitude);
    }
    // Inside the saturated cap the cap term dominates every mode combination.
    const double amplitude = 1.5 * bound;
    for (int r = 0; r < spec.height; ++r) {
        const double lat = 90.0 * (1.0 - (2.0 * r + 1.0) / spec.height);
        const double w =
            smoothstep((std::abs(lat) - spec.cap_start_deg) / (spec.cap_full_deg - spec.cap_start_deg));
        if (w == 0.0) {
            continue;
        }
        const double cap = amplitude * w * (lat > 0.0 ? north_sign : -north_sign);
        for (int c = 0; c < spec.width; ++c) {
            g[static_cast<std::size_t>(r) * spec.width + c] += cap;
        }
    }
}

std::vector<double> evaluate_field(const std::vector<Harmonic>& modes, int height, int width) {
    std::vector<double> g(static_cast<std::size_t>(height) * width, 0.0);
    for (int r = 0; r < height; ++r) {
        const double z = 1.0 - 2.0 * (r + 0.5) / height;
        for (int c = 0; c < width; ++c) {
            const double phi = kTwoPi * (c + 0.5) / width;
            double sum = 0.0;
            for (const auto& h : modes) {
                sum += h.amplitude * std::cos(h.m * phi + h.psi) *
                       std::cos(h.n * std::numbers::pi * z / 2.0 + h.chi);
            }
            g[static_cast<std::size_t>(r) * width + c] = sum;
        }
    }
    return g;
}

// Marks round(rho * |order|) pixels of `order` as contiguous runs with geometric lengths,
// spreading the unmarked remainder over the gaps between runs.
FilamentMask select_fragments(const FilamentMask& pil, const std::vector<std::size_t>& order,
                              double rho, double mean_run, Rng& rng) {
    FilamentMask out(pil.height(), pil.width(), 0);
    const std::size_t total = order.size();
    const auto selected = static_cast<std::size_t>(std::llround(rho * static_cast<double>(total)));
    if (selected == 0) {
        return out;
    }
    const double p = 1.0 / std::max(mean_run, 1.0);
    std::vector<std::size_t> runs;
    std::size_t acc = 0;
    while (acc < selected) {
        std::size_t len = 1;
        if (p < 1.0) {
            const double u = 1.0 - rng.uniform();  // (0, 1]
            len += static_cast<std::size_t>(std::floor(std::log(u) / std::log(1.0 - p)));
        }
        len = std::min(len, selected - acc);
        runs.push_back(len);
        acc += len;
    }
    std::vector<std::size_t> gaps(runs.size() + 1, 0);
    for (std::size_t i = 0; i < total - selected; ++i) {
        ++gaps[rng.uniform_int(0, gaps.size() - 1)];
    }
    std::size_t pos = 0;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        pos += gaps[k];
        for (std::size_t j = 0; j < runs[k]; ++j) {
            out[order[pos++]] = 1;
        }
    }
    return out;
}

}  // namespace

void SynthSpec::validate() const {
    if (height < 2 || width < 2) {
        throw SizeError("synthetic map must be at least 2x2");
    }
    if (harmonics < 1) {
        throw DomainError("harmonics must be >= 1");
    }
    if (max_wavenumber < 1) {
        throw DomainError("max_wavenumber must be >= 1");
    }
    if (!(fragment_fraction >= 0.0 && fragment_fraction <= 1.0)) {
        throw DomainError("fragment fraction must lie in [0, 1]");
    }
    if (!(mean_run_length >= 1.0)) {
        throw DomainError("mean run length must be >= 1");
    }
    if (polar_caps && !(cap_start_deg >= 0.0 && cap_start_deg < cap_full_deg && cap_full_deg <= 90.0)) {
        throw DomainError("polar caps need 0 <= cap_start_deg < cap_full_deg <= 90");
    }
}

std::vector<Harmonic> random_harmonics(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed, 1);
    std::vector<Harmonic> modes;
    for (int k = 1; k <= spec.harmonics; ++k) {
        Harmonic h;
        h.amplitude = rng.uniform(0.5, 1.0) / k;
        // m >= 1 keeps every mode zero-mean in longitude.
        h.m = static_cast<int>(rng.uniform_int(1, static_cast<std::uint64_t>(spec.max_wavenumber)));
        h.psi = rng.uniform(0.0, kTwoPi);
        h.n = static_cast<int>(rng.uniform_int(0, static_cast<std::uint64_t>(spec.max_wavenumber)));
        h.chi = rng.uniform(0.0, kTwoPi);
        modes.push_back(h);
    }
    return modes;
}

SynthWorld generate(const SynthSpec& spec) { return generate(spec, random_harmonics(spec)); }

SynthWorld generate(const SynthSpec& spec, const std::vector<Harmonic>& modes) {
    spec.validate();
    if (modes.empty()) {
        throw DomainError("at least one harmonic is required");
    }
    SynthWorld world;
    world.modes = modes;
    world.field = evaluate_field(modes, spec.height, spec.width);
    if (spec.polar_caps) {
        Rng cap_rng(spec.seed, 3);
        world.north_cap = cap_rng.uniform() < 0.5 ? 1 : -1;
        world.south_cap = -world.north_cap;
        add_polar_caps(world.field, spec, modes, world.north_cap);
    }
    world.target = PolarityMap(spec.height, spec.width, 0);
    for (std::size_t i = 0; i < world.field.size(); ++i) {
        const double g = world.field[i];
        world.target[i] = static_cast<std::int8_t>(g > 0.0 ? 1 : (g < 0.0 ? -1 : 0));
    }
    world.pil = inversion_pixels(world.field, spec.height, spec.width);
    Rng rng(spec.seed, 2);
    world.filaments = select_fragments(world.pil, greedy_walk(world.pil), spec.fragment_fraction,
                                       spec.mean_run_length, rng);
    return world;
}

FilamentMask inversion_pixels(const std::vector<double>& field, int height, int width) {
    if (field.size() != static_cast<std::size_t>(height) * width) {
        throw SizeError("field size does not match raster");
    }
    FilamentMask pil(height, width, 0);
    auto mark_pair = [&](std::size_t a, std::size_t b) {
        const double ga = field[a];
        const double gb = field[b];
        if (!((ga > 0.0 && gb < 0.0) || (ga < 0.0 && gb > 0.0))) {
            return;
        }
        const double fa = std::abs(ga);
        const double fb = std::abs(gb);
        pil[(fa < fb || (fa == fb && a < b)) ? a : b] = 1;
    };
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * width + c;
            if (field[i] == 0.0) {
                pil[i] = 1;
            }
            mark_pair(i, static_cast<std::size_t>(r) * width + (c + 1) % width);
            if (r + 1 < height) {
                mark_pair(i, i + static_cast<std::size_t>(width));
            }
        }
    }
    return pil;
}

std::vector<std::size_t> greedy_walk(const FilamentMask& mask) {
    const int h = mask.height();
    const int w = mask.width();
    // 4-neighbours first, then diagonals.
    static constexpr int kSteps[8][2] = {{-1, 0}, {0, 1}, {1, 0},  {0, -1},
                                         {-1, 1}, {1, 1}, {1, -1}, {-1, -1}};
    std::vector<std::uint8_t> visited(mask.size(), 0);
    std::vector<std::size_t> order;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || visited[start]) {
            continue;
        }
        std::size_t cur = start;
        visited[cur] = 1;
        order.push_back(cur);
        for (;;) {
            const int r = static_cast<int>(cur / static_cast<std::size_t>(w));
            const int c = static_cast<int>(cur % static_cast<std::size_t>(w));
            bool moved = false;
            for (const auto& s : kSteps) {
                const int nr = r + s[0];
                if (nr < 0 || nr >= h) {
                    continue;
                }
                const int nc = (c + s[1] + w) % w;
                const std::size_t n = static_cast<std::size_t>(nr) * w + nc;
                if (mask[n] && !visited[n]) {
                    visited[n] = 1;
                    order.push_back(n);
                    cur = n;
                    moved = true;
                    break;
                }
            }
            if (!moved) {
                break;
            }
        }
    }
    return order;
}

}  // namespace pilrecon
