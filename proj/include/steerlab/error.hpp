#pragma once

#include <stdexcept>
#include <string>

namespace steerlab {

// Stable error taxonomy. The CLI maps these onto process exit codes
// (config -> 2, training -> 3, steering divergence -> 4, missing artifact -> 5).
enum class Err {
    ShapeMismatch,
    NonFinite,
    NotScalarRoot,
    DetachedRoot,
    MissingGradShape,
    DegenerateShape,
    InsufficientVariety,
    ConfigInvalid,
    MalformedRow,
    MissingImage,
    StepOutOfRange,
    StepOrderInvalid,
    TOutOfRange,
    EmptyTripletSet,
    MissingArtifact,
    IoError,
};

inline const char* err_name(Err e) {
    switch (e) {
        case Err::ShapeMismatch: return "ShapeMismatch";
        case Err::NonFinite: return "NonFinite";
        case Err::NotScalarRoot: return "NotScalarRoot";
        case Err::DetachedRoot: return "DetachedRoot";
        case Err::MissingGradShape: return "MissingGradShape";
        case Err::DegenerateShape: return "DegenerateShape";
        case Err::InsufficientVariety: return "InsufficientVariety";
        case Err::ConfigInvalid: return "ConfigInvalid";
        case Err::MalformedRow: return "MalformedRow";
        case Err::MissingImage: return "MissingImage";
        case Err::StepOutOfRange: return "StepOutOfRange";
        case Err::StepOrderInvalid: return "StepOrderInvalid";
        case Err::TOutOfRange: return "TOutOfRange";
        case Err::EmptyTripletSet: return "EmptyTripletSet";
        case Err::MissingArtifact: return "MissingArtifact";
        case Err::IoError: return "IoError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& msg)
        : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}

    Err code() const { return code_; }

private:
    Err code_;
};

[[noreturn]] inline void raise(Err code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Err code, const std::string& msg) {
    if (!cond) raise(code, msg);
}

}  // namespace steerlab
