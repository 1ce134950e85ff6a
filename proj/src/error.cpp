#include "qgars/error.hpp"

namespace qgars {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::invalid_config: return "invalid configuration";
        case ErrorCode::invalid_input: return "invalid input";
        case ErrorCode::shape: return "shape mismatch";
        case ErrorCode::numerical: return "numerical failure";
        case ErrorCode::io: return "i/o error";
        case ErrorCode::format: return "format error";
        case ErrorCode::training: return "training failure";
        case ErrorCode::state: return "invalid state";
        case ErrorCode::insufficient_data: return "insufficient data";
    }
    return "unknown error";
}

}  // namespace qgars
