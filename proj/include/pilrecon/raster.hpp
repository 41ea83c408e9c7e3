#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pilrecon/errors.hpp"

namespace pilrecon {

/// Row-major raster; row 0 is the northern edge of a synoptic map.
template <class Value, class Kind>
class Raster {
public:
    using value_type = Value;

    Raster() = default;
    Raster(int height, int width, Value fill = Value{})
        : height_(height), width_(width) {
        if (height <= 0 || width <= 0) {
            throw SizeError("raster dimensions must be positive");
        }
        data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
    }

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return data_.size(); }

    Value& at(int row, int col) { return data_[index(row, col)]; }
    const Value& at(int row, int col) const { return data_[index(row, col)]; }

    Value& operator[](std::size_t i) { return data_[i]; }
    const Value& operator[](std::size_t i) const { return data_[i]; }

    std::vector<Value>& data() { return data_; }
    const std::vector<Value>& data() const { return data_; }

    std::size_t index(int row, int col) const {
        if (row < 0 || row >= height_ || col < 0 || col >= width_) {
            throw RangeError("pixel (" + std::to_string(row) + ", " + std::to_string(col) +
                             ") outside " + std::to_string(height_) + "x" + std::to_string(width_) +
                             " raster");
        }
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(col);
    }

    bool same_shape(int height, int width) const { return height_ == height && width_ == width; }
    template <class V, class K>
    bool same_shape(const Raster<V, K>& other) const {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Raster& a, const Raster& b) {
        return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
    }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<Value> data_;
};

struct MaskKind {};
struct PolarityKind {};
struct ConfidenceKind {};

/// Boolean per-pixel mask stored as 0/1 bytes. Filament masks, PIL masks and latitude bands.
using FilamentMask = Raster<std::uint8_t, MaskKind>;
using BoolRaster = FilamentMask;

/// Values in {-1, 0, +1}; 0 marks a PIL or unknown pixel.
using PolarityMap = Raster<std::int8_t, PolarityKind>;

/// Values in [-1, 1]; sign is polarity, magnitude is confidence.
using ConfidenceMap = Raster<double, ConfidenceKind>;

template <class V, class K>
std::size_t count_nonzero(const Raster<V, K>& r) {
    std::size_t n = 0;
    for (const auto& v : r.data()) {
        if (v != V{}) {
            ++n;
        }
    }
    return n;
}

template <class V1, class K1, class V2, class K2>
void require_same_shape(const Raster<V1, K1>& a, const Raster<V2, K2>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw SizeError(std::string(what) + ": shape " + std::to_string(a.height()) + "x" +
                        std::to_string(a.width()) + " does not match " +
                        std::to_string(b.height()) + "x" + std::to_string(b.width()));
    }
}

}  // namespace pilrecon
