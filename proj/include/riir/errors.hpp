#pragma once

#include <stdexcept>
#include <string>

namespace riir {

// Raised when two inputs that must share a grid do not.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite values, divergence, degenerate statistics.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or unreadable input data (files, datasets).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public DataError {
public:
    enum class Kind { bad_magic, truncated_payload, checksum_mismatch, version_mismatch, malformed };

    FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class ConfigError : public std::invalid_argument {
public:
    ConfigError(int line, const std::string& what)
        : std::invalid_argument("line " + std::to_string(line) + ": " + what), line_(line) {}

    int line() const noexcept { return line_; }

private:
    int line_;
};

}  // namespace riir
