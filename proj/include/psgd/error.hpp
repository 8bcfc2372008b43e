#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace psgd {

// Every error carries the module that raised it; what() is prefixed with
// "[module] " so CLI diagnostics name the failing module.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& message)
        : std::runtime_error("[" + module + "] " + message), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

// Invalid caller input (bad config, mismatched dimensions, impossible split).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& message)
        : Error("dataset", "line " + std::to_string(line) + ": " + message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Unreadable/unwritable files, empty streams, unusable data.
class DataError : public Error {
public:
    using Error::Error;
};

// Training aborted (non-finite weights, coordinated worker abort).
class TrainingAbort : public Error {
public:
    using Error::Error;
};

// Collective failure: timeout, peer loss, protocol violation.
class CommError : public Error {
public:
    explicit CommError(const std::string& message) : Error("comm", message) {}
};

}  // namespace psgd
