#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mkv {

// Base error carrying a stable machine-readable code, surfaced verbatim by the CLI.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define MKV_DEFINE_ERROR(NAME)                                            \
    struct NAME : Error {                                                 \
        explicit NAME(const std::string& what) : Error(#NAME, what) {}    \
    }

MKV_DEFINE_ERROR(DegenerateInput);
MKV_DEFINE_ERROR(DimensionError);
MKV_DEFINE_ERROR(CapacityError);
MKV_DEFINE_ERROR(DomainError);
MKV_DEFINE_ERROR(GridError);
MKV_DEFINE_ERROR(UnsupportedBenchmark);
MKV_DEFINE_ERROR(UnsupportedInput);
MKV_DEFINE_ERROR(InvalidIntensity);
MKV_DEFINE_ERROR(TreeError);
MKV_DEFINE_ERROR(SchemeInconsistency);
MKV_DEFINE_ERROR(ComparisonError);

#undef MKV_DEFINE_ERROR

// Raised when a particle state leaves the finite range; carries the offending node.
struct NumericalBlowup : Error {
    NumericalBlowup(int step_index, double time, const std::string& what)
        : Error("NumericalBlowup", what), step(step_index), time(time) {}
    int step;
    double time;
};

// Config schema violation with a JSON-pointer-style path to the offending key.
struct ConfigError : Error {
    ConfigError(std::string pointer, const std::string& what)
        : Error("ConfigError", what + " (at " + pointer + ")"), pointer(std::move(pointer)) {}
    std::string pointer;
};

}  // namespace mkv
