#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bdsvie {

/// Failure categories surfaced by the solvers and harnesses.
enum class ErrorCode {
    invalid_argument,
    resource,
    degenerate_design,
    driver_evaluation,
    certificate,
    non_convergence,
    truncation,
    hypothesis_violation,
    scheme_failure,
    config,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid-argument";
        case ErrorCode::resource: return "resource";
        case ErrorCode::degenerate_design: return "degenerate-design";
        case ErrorCode::driver_evaluation: return "driver-evaluation";
        case ErrorCode::certificate: return "certificate";
        case ErrorCode::non_convergence: return "non-convergence";
        case ErrorCode::truncation: return "truncation";
        case ErrorCode::hypothesis_violation: return "hypothesis-violation";
        case ErrorCode::scheme_failure: return "scheme-failure";
        case ErrorCode::config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorCode::invalid_argument, message);
}

}  // namespace bdsvie
