#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace levcav {

// Error taxonomy mirrors the CLI exit-code contract:
//   ValidationError -> 1, NumericalError (and subclasses) -> 2, IoError -> 3.

// Bad physical configuration or bad user input. Carries the full list of
// problems found so a config file can be fixed in one pass.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(std::string issue)
        : ValidationError(std::vector<std::string>{std::move(issue)}) {}

    explicit ValidationError(std::vector<std::string> issues)
        : std::runtime_error(join(issues)), issues_(std::move(issues)) {}

    const std::vector<std::string>& issues() const { return issues_; }

private:
    static std::string join(const std::vector<std::string>& issues) {
        std::string msg = "configuration invalid:";
        for (const auto& s : issues) {
            msg += "\n  - ";
            msg += s;
        }
        return msg;
    }

    std::vector<std::string> issues_;
};

// A computation failed or left its domain of validity.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The linear model has an eigenvalue with non-negative real part, so no
// stationary state exists. The message names the offending eigenvalue.
class StabilityError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// Requested integration step does not resolve the fastest timescale.
class StepSizeError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class FitError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace levcav
