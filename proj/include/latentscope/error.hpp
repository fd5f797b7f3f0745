#pragma once

#include <stdexcept>
#include <string>

namespace latentscope {

// Exit codes used by the CLI: 1 usage, 2 I/O, 3 validation, 4 numeric.
enum class ErrorKind {
    usage = 1,
    io = 2,
    validation = 3,
    numeric = 4,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }
    int exit_code() const { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

// Invalid input data: bad shapes, malformed files, failed preconditions.
struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

struct ShapeError : ValidationError {
    explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

// Malformed on-disk artifacts (bad magic, version mismatch, truncation).
struct FormatError : ValidationError {
    explicit FormatError(const std::string& what) : ValidationError(what) {}
};

struct CorruptionError : FormatError {
    explicit CorruptionError(const std::string& what) : FormatError(what) {}
};

struct ParseError : ValidationError {
    explicit ParseError(const std::string& what) : ValidationError(what) {}
};

// Non-finite values, convergence failures, domain violations.
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

} // namespace latentscope
