#include "pilrecon/raster_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pilrecon {
namespace {

struct PgmHeader {
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::size_t data_offset = 0;
};

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::string_view bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        const char ch = bytes[pos];
        if (ch == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') {
                ++pos;
            }
        } else if (std::isspace(static_cast<unsigned char>(ch))) {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
           bytes[pos] != '#') {
        ++pos;
    }
    if (start == pos) {
        throw FormatError("truncated P5 header at byte " + std::to_string(start));
    }
    return std::string(bytes.substr(start, pos - start));
}

int parse_header_int(std::string_view bytes, std::size_t& pos, const char* field) {
    const std::size_t at = pos;
    const std::string tok = next_token(bytes, pos);
    for (char ch : tok) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) {
            throw FormatError(std::string("bad ") + field + " '" + tok + "' near byte " +
                              std::to_string(at));
        }
    }
    if (tok.size() > 9) {
        throw FormatError(std::string(field) + " too large near byte " + std::to_string(at));
    }
    return std::stoi(tok);
}

PgmHeader parse_header(std::string_view bytes, int expected_maxval) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        throw FormatError("bad magic at byte 0: expected P5 graymap");
    }
    std::size_t pos = 2;
    PgmHeader h;
    h.width = parse_header_int(bytes, pos, "width");
    h.height = parse_header_int(bytes, pos, "height");
    h.maxval = parse_header_int(bytes, pos, "maxval");
    if (h.width <= 0 || h.height <= 0) {
        throw FormatError("non-positive dimensions " + std::to_string(h.width) + "x" +
                          std::to_string(h.height));
    }
    if (h.maxval != expected_maxval) {
        throw FormatError("maxval " + std::to_string(h.maxval) + " not supported here, expected " +
                          std::to_string(expected_maxval));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw FormatError("missing separator after header at byte " + std::to_string(pos));
    }
    h.data_offset = pos + 1;
    const std::size_t bytes_per = expected_maxval > 255 ? 2 : 1;
    const std::size_t need = static_cast<std::size_t>(h.width) * h.height * bytes_per;
    if (bytes.size() - h.data_offset < need) {
        throw FormatError("truncated sample data: expected " + std::to_string(need) +
                          " bytes at offset " + std::to_string(h.data_offset) + ", found " +
                          std::to_string(bytes.size() - h.data_offset));
    }
    return h;
}

std::string header(int height, int width, int maxval) {
    return "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n" +
           std::to_string(maxval) + "\n";
}

[[noreturn]] void bad_pixel(const PgmHeader& h, std::size_t i, int value, const char* kind,
                            const char* allowed) {
    const std::size_t row = i / static_cast<std::size_t>(h.width);
    const std::size_t col = i % static_cast<std::size_t>(h.width);
    throw FormatError(std::string(kind) + " pixel (" + std::to_string(row) + ", " +
                      std::to_string(col) + ") at byte " + std::to_string(h.data_offset + i) +
                      " has value " + std::to_string(value) + ", expected one of " + allowed);
}

void check_factor(int height, int width, int factor) {
    if (factor < 1) {
        throw SizeError("downsample factor must be >= 1");
    }
    if (height % factor != 0 || width % factor != 0) {
        throw SizeError("downsample factor " + std::to_string(factor) + " does not divide " +
                        std::to_string(height) + "x" + std::to_string(width));
    }
}

}  // namespace

FilamentMask decode_filament(std::string_view bytes) {
    const PgmHeader h = parse_header(bytes, 255);
    FilamentMask mask(h.height, h.width, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const auto v = static_cast<unsigned char>(bytes[h.data_offset + i]);
        if (v == 255) {
            mask[i] = 1;
        } else if (v != 0) {
            bad_pixel(h, i, v, "filament", "{0, 255}");
        }
    }
    return mask;
}

PolarityMap decode_polarity(std::string_view bytes) {
    const PgmHeader h = parse_header(bytes, 255);
    PolarityMap map(h.height, h.width, 0);
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto v = static_cast<unsigned char>(bytes[h.data_offset + i]);
        switch (v) {
            case 0:
                map[i] = -1;
                break;
            case 128:
                map[i] = 0;
                break;
            case 255:
                map[i] = 1;
                break;
            default:
                bad_pixel(h, i, v, "polarity", "{0, 128, 255}");
        }
    }
    return map;
}

ConfidenceMap decode_confidence(std::string_view bytes) {
    const PgmHeader h = parse_header(bytes, 65535);
    ConfidenceMap map(h.height, h.width, 0.0);
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto hi = static_cast<unsigned char>(bytes[h.data_offset + 2 * i]);
        const auto lo = static_cast<unsigned char>(bytes[h.data_offset + 2 * i + 1]);
        const unsigned q = (static_cast<unsigned>(hi) << 8U) | lo;
        map[i] = 2.0 * q / 65535.0 - 1.0;
    }
    return map;
}

std::string encode(const FilamentMask& mask) {
    std::string out = header(mask.height(), mask.width(), 255);
    out.reserve(out.size() + mask.size());
    for (auto v : mask.data()) {
        out.push_back(static_cast<char>(v ? 255 : 0));
    }
    return out;
}

std::string encode(const PolarityMap& map) {
    std::string out = header(map.height(), map.width(), 255);
    out.reserve(out.size() + map.size());
    for (auto v : map.data()) {
        if (v < -1 || v > 1) {
            throw DomainError("polarity value " + std::to_string(v) + " outside {-1, 0, 1}");
        }
        out.push_back(static_cast<char>(v < 0 ? 0 : (v == 0 ? 128 : 255)));
    }
    return out;
}

std::string encode(const ConfidenceMap& map) {
    std::string out = header(map.height(), map.width(), 65535);
    out.reserve(out.size() + 2 * map.size());
    for (double v : map.data()) {
        if (!(v >= -1.0 && v <= 1.0)) {
            throw DomainError("confidence value outside [-1, 1]");
        }
        const auto q = static_cast<unsigned>(std::lround((v + 1.0) * 0.5 * 65535.0));
        out.push_back(static_cast<char>((q >> 8U) & 0xFFU));
        out.push_back(static_cast<char>(q & 0xFFU));
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw IoError("read failure on " + path.string());
    }
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open " + tmp.string() + " for writing");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw IoError("write failure on " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " +
                      ec.message());
    }
}

AnyRaster load_raster(const std::filesystem::path& path, RasterKind kind) {
    switch (kind) {
        case RasterKind::Filament:
            return load_filament(path);
        case RasterKind::Polarity:
            return load_polarity(path);
        case RasterKind::Confidence:
            return load_confidence(path);
    }
    throw DomainError("unknown raster kind");
}

namespace {
template <class Fn>
auto decode_file(const std::filesystem::path& path, Fn&& decode) {
    const std::string bytes = read_file(path);
    try {
        return decode(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}
}  // namespace

FilamentMask load_filament(const std::filesystem::path& path) {
    return decode_file(path, [](std::string_view b) { return decode_filament(b); });
}
PolarityMap load_polarity(const std::filesystem::path& path) {
    return decode_file(path, [](std::string_view b) { return decode_polarity(b); });
}
ConfidenceMap load_confidence(const std::filesystem::path& path) {
    return decode_file(path, [](std::string_view b) { return decode_confidence(b); });
}

void save_raster(const FilamentMask& mask, const std::filesystem::path& path) {
    write_file_atomic(path, encode(mask));
}
void save_raster(const PolarityMap& map, const std::filesystem::path& path) {
    write_file_atomic(path, encode(map));
}
void save_raster(const ConfidenceMap& map, const std::filesystem::path& path) {
    write_file_atomic(path, encode(map));
}

FilamentMask downsample(const FilamentMask& mask, int factor) {
    check_factor(mask.height(), mask.width(), factor);
    if (factor == 1) {
        return mask;
    }
    FilamentMask out(mask.height() / factor, mask.width() / factor, 0);
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            if (mask.at(r, c)) {
                out.at(r / factor, c / factor) = 1;
            }
        }
    }
    return out;
}

PolarityMap downsample(const PolarityMap& map, int factor) {
    check_factor(map.height(), map.width(), factor);
    if (factor == 1) {
        return map;
    }
    PolarityMap out(map.height() / factor, map.width() / factor, 0);
    for (int br = 0; br < out.height(); ++br) {
        for (int bc = 0; bc < out.width(); ++bc) {
            std::array<int, 3> votes{};  // -1, 0, +1
            for (int r = br * factor; r < (br + 1) * factor; ++r) {
                for (int c = bc * factor; c < (bc + 1) * factor; ++c) {
                    ++votes[static_cast<std::size_t>(map.at(r, c) + 1)];
                }
            }
            const int best = std::max({votes[0], votes[1], votes[2]});
            int winners = 0;
            int value = 0;
            for (int k = 0; k < 3; ++k) {
                if (votes[static_cast<std::size_t>(k)] == best) {
                    ++winners;
                    value = k - 1;
                }
            }
            out.at(br, bc) = static_cast<std::int8_t>(winners == 1 ? value : 0);
        }
    }
    return out;
}

ReferencePointSet parse_reference_points(std::string_view text) {
    ReferencePointSet set;
    set.provenance = Provenance::File;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream fields(line);
        ReferencePoint p;
        if (!(fields >> p.row)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            throw FormatError("reference points line " + std::to_string(lineno) + ": bad row");
        }
        std::string rest;
        if (!(fields >> p.col >> p.polarity) || (fields >> rest)) {
            throw FormatError("reference points line " + std::to_string(lineno) +
                              ": expected 'row col polarity'");
        }
        if (p.polarity != 1 && p.polarity != -1) {
            throw FormatError("reference points line " + std::to_string(lineno) + ": polarity " +
                              std::to_string(p.polarity) + " is not -1 or 1");
        }
        set.points.push_back(p);
    }
    return set;
}

std::string format_reference_points(const ReferencePointSet& refs) {
    std::string out = "# row col polarity\n";
    for (const auto& p : refs.points) {
        out += std::to_string(p.row) + " " + std::to_string(p.col) + " " +
               std::to_string(p.polarity) + "\n";
    }
    return out;
}

ReferencePointSet load_reference_points(const std::filesystem::path& path) {
    try {
        return parse_reference_points(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_reference_points(const ReferencePointSet& refs, const std::filesystem::path& path) {
    write_file_atomic(path, format_reference_points(refs));
}

}  // namespace pilrecon
