#include "pilrecon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pilrecon {

ErrorReport error_fractions(const PolarityMap& pred, const PolarityMap& target,
                            const GridSpec& spec) {
    require_same_shape(pred, target, "prediction");
    if (!target.same_shape(spec.height, spec.width)) {
        throw SizeError("target does not match grid");
    }
    const BandMasks bands = band_masks(spec);
    std::size_t wrong_total = 0;
    std::size_t wrong_band = 0;
    ErrorReport r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] != 1 && pred[i] != -1) {
            throw DomainError("prediction pixel " + std::to_string(i) + " is not +-1");
        }
        if (target[i] == 0) {
            continue;
        }
        const bool wrong = pred[i] != target[i];
        ++r.evaluated_total;
        wrong_total += wrong ? 1 : 0;
        if (bands.equator[i]) {
            ++r.evaluated_band;
            wrong_band += wrong ? 1 : 0;
        }
    }
    r.e_total = r.evaluated_total ? static_cast<double>(wrong_total) / r.evaluated_total : 0.0;
    r.e_band = r.evaluated_band ? static_cast<double>(wrong_band) / r.evaluated_band : 0.0;
    return r;
}

PixelCounts pixel_counts(const FilamentMask& filaments, const FilamentMask& pil) {
    require_same_shape(filaments, pil, "filament mask");
    PixelCounts c;
    c.n_filament = count_nonzero(filaments);
    c.n_pil = count_nonzero(pil);
    if (c.n_pil > 0) {
        c.ratio = static_cast<double>(c.n_filament) / static_cast<double>(c.n_pil);
    }
    return c;
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw SizeError("pearson: series lengths differ");
    }
    if (xs.size() < 2) {
        throw SizeError("pearson: need at least two samples");
    }
    const double n = static_cast<double>(xs.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        return std::nullopt;
    }
    const double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

FilamentMask pil_from_polarity(const PolarityMap& map) {
    const int h = map.height();
    const int w = map.width();
    FilamentMask pil(h, w, 0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int v = map.at(r, c);
            if (v == 0) {
                pil.at(r, c) = 1;
                continue;
            }
            if (map.at(r, (c + 1) % w) == -v || (r + 1 < h && map.at(r + 1, c) == -v)) {
                pil.at(r, c) = 1;
            }
        }
    }
    return pil;
}

std::string format_report_row(const std::string& map_id, const std::optional<ErrorReport>& err,
                              const PixelCounts& counts) {
    std::ostringstream os;
    os.precision(6);
    os << map_id << ' ';
    if (err) {
        os << err->e_total << ' ' << err->e_band;
    } else {
        os << "NA NA";
    }
    os << ' ' << counts.n_filament << ' ' << counts.n_pil << ' ';
    if (counts.ratio) {
        os << *counts.ratio;
    } else {
        os << "NA";
    }
    return os.str();
}

}  // namespace pilrecon
