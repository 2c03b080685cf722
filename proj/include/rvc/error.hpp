#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rvc {

enum class ErrorCode {
    InvalidArgument,
    InvalidConfig,
    CommandOutOfBounds,
    WorkspaceExceeded,
    AlreadyInjected,
    OutOfBounds,
    ScanlineMissesROI,
    NoNeedleDetected,
    NeedleNotInScan,
    EmptySampleSet,
    InvalidTarget,
    WrongPhase,
    WrongPercept,
    ScenarioInvalid,
    TickBudgetExceeded,
    LogCorrupt,
    BindFailure,
    SessionLimitReached,
    UnknownSession,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::CommandOutOfBounds: return "CommandOutOfBounds";
        case ErrorCode::WorkspaceExceeded: return "WorkspaceExceeded";
        case ErrorCode::AlreadyInjected: return "AlreadyInjected";
        case ErrorCode::OutOfBounds: return "OutOfBounds";
        case ErrorCode::ScanlineMissesROI: return "ScanlineMissesROI";
        case ErrorCode::NoNeedleDetected: return "NoNeedleDetected";
        case ErrorCode::NeedleNotInScan: return "NeedleNotInScan";
        case ErrorCode::EmptySampleSet: return "EmptySampleSet";
        case ErrorCode::InvalidTarget: return "InvalidTarget";
        case ErrorCode::WrongPhase: return "WrongPhase";
        case ErrorCode::WrongPercept: return "WrongPercept";
        case ErrorCode::ScenarioInvalid: return "ScenarioInvalid";
        case ErrorCode::TickBudgetExceeded: return "TickBudgetExceeded";
        case ErrorCode::LogCorrupt: return "LogCorrupt";
        case ErrorCode::BindFailure: return "BindFailure";
        case ErrorCode::SessionLimitReached: return "SessionLimitReached";
        case ErrorCode::UnknownSession: return "UnknownSession";
    }
    return "Unknown";
}

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-readable code; callers branch on code(), not on the message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

}  // namespace rvc
