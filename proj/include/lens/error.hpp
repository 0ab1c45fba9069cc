#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lens {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed binary payload. `offset` is the byte position where decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace lens
