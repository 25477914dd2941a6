#include "hbsimex/error.hpp"

namespace hbsimex {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::schema: return "schema_error";
    case ErrorCode::parse: return "parse_error";
    case ErrorCode::validation: return "validation_error";
    case ErrorCode::domain: return "domain_error";
    case ErrorCode::singular_design: return "singular_design";
    case ErrorCode::convergence: return "convergence_error";
    case ErrorCode::underdispersion: return "underdispersion";
    case ErrorCode::insufficient_replicates: return "insufficient_replicates";
    case ErrorCode::parameter: return "parameter_error";
    case ErrorCode::singular_fit: return "singular_fit";
    case ErrorCode::config: return "config_error";
    case ErrorCode::io: return "io_error";
    case ErrorCode::undefined_statistic: return "undefined_statistic";
    case ErrorCode::numerical: return "numerical_error";
  }
  return "unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::parameter:
    case ErrorCode::schema:
      return ErrorCategory::config;
    case ErrorCode::parse:
    case ErrorCode::validation:
    case ErrorCode::io:
    case ErrorCode::insufficient_replicates:
    case ErrorCode::underdispersion:
      return ErrorCategory::data;
    default:
      return ErrorCategory::numerical;
  }
}

}  // namespace hbsimex
