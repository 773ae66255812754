#pragma once

#include <stdexcept>
#include <string>

namespace isocal {

// Base for every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (bad shape, non-unit probe, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Iteration cap hit, non-finite values, degenerate inputs.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Singular values too close together for the simple-singular-value gradient.
class DegenerateSpectrumError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// A zero-norm row where a direction is required.
class DegenerateEmbeddingError : public NumericalError {
public:
    DegenerateEmbeddingError(std::size_t row, const std::string& what)
        : NumericalError(what), row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

// Malformed files. Carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace isocal
