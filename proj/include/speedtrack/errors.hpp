#pragma once

#include <stdexcept>
#include <string>

namespace speedtrack {

/// Base class for every error raised by the library. The CLI maps these to
/// exit code 1 with a single-line `error: <kind>: <message>` report.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("io", what) {}
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, int line = 0)
        : Error("format", line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

class SequenceError : public Error {
public:
    explicit SequenceError(const std::string& what) : Error("sequence", what) {}
};

}  // namespace speedtrack
