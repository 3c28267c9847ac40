#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dhmlm {

enum class ErrorKind {
    InvalidArgument,
    NotFound,
    NumericalError,
    InvalidState,
    GenerationFailure,
    UndefinedCorrelation,
    Validation,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the kinds above so the
/// CLI can map it onto an exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        fail(kind, message);
    }
}

}  // namespace dhmlm
