#pragma once

#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>

namespace qdlab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An argument lies outside the documented domain (non-finite input, bad range).
class InputDomainError : public Error {
public:
    using Error::Error;
};

/// A matrix argument is not symmetric positive definite or similar.
class NumericDomainError : public Error {
public:
    using Error::Error;
};

/// The Euler scheme produced a non-finite state.
class SimulationError : public Error {
public:
    SimulationError(const std::string& what, std::size_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// An estimator precondition failed (e.g. hitting set too small).
class PreconditionError : public Error {
public:
    using Error::Error;
};

class PayoffContractError : public Error {
public:
    using Error::Error;
};

class RegistryError : public Error {
public:
    using Error::Error;
};

/// Every candidate pair of a Hölder fit sits below the noise floor.
class FitDegenerateError : public Error {
public:
    using Error::Error;
};

/// Malformed scenario configuration; carries the offending line when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A per-path functional threw inside run_ensemble.
class EnsembleError : public Error {
public:
    EnsembleError(const std::string& what, std::size_t completed_paths, std::exception_ptr cause = nullptr)
        : Error(what + " (completed paths: " + std::to_string(completed_paths) + ")"),
          completed_(completed_paths),
          cause_(std::move(cause)) {}
    std::size_t completed_paths() const noexcept { return completed_; }
    /// The exception raised by the per-path functional.
    std::exception_ptr cause() const noexcept { return cause_; }
    [[noreturn]] void rethrow_cause() const {
        if (cause_) std::rethrow_exception(cause_);
        throw *this;
    }

private:
    std::size_t completed_;
    std::exception_ptr cause_;
};

}  // namespace qdlab
