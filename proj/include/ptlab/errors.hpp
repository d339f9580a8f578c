#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ptlab {

enum class ErrorKind {
    InvalidInput,
    InvalidMatrix,
    DegenerateInput,
    NoComplement,
    NotContractive,
    NotConverged,
    NotCertified,
    NoImprovement,
    PerpendicularObstruction,
    NoAlignment,
    ConeNotDisjoint,
    DimensionTooSmall,
    DegenerateFeatures,
    WidthTooSmall,
    Diverged,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can map it onto an exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) throw Error(kind, what);
}

}  // namespace ptlab
