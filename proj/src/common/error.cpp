#include "dhmlm/common/error.hpp"

namespace dhmlm {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid-argument";
        case ErrorKind::NotFound: return "not-found";
        case ErrorKind::NumericalError: return "numerical-error";
        case ErrorKind::InvalidState: return "invalid-state";
        case ErrorKind::GenerationFailure: return "generation-failure";
        case ErrorKind::UndefinedCorrelation: return "undefined-correlation";
        case ErrorKind::Validation: return "validation-error";
        case ErrorKind::Io: return "io-error";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace dhmlm
