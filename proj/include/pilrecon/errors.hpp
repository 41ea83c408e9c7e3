#pragma once

#include <stdexcept>
#include <string>

namespace pilrecon {

/// Malformed raster, reference-point, snapshot or manifest content.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched or otherwise invalid dimensions.
class SizeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Value outside the admissible domain of an operation (non-finite input, f outside [-1,1], ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Index outside a raster.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Optimization produced a non-finite value.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pilrecon
