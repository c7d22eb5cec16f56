#pragma once

#include <stdexcept>
#include <string>

namespace mmdr {

// Error identities surfaced by the library. The CLI maps categories to
// process exit codes (validation=2, io=3, numeric=4).
enum class Errc {
  shape_mismatch,
  zero_row,
  non_positive_temperature,
  non_stochastic_input,
  non_scalar_loss,
  disconnected_leaf,
  non_unit_rows,
  non_unit_input,
  token_out_of_vocab,
  crop_out_of_bounds,
  invalid_policy,
  kernel_extent_mismatch,
  manifest_mismatch,
  embedding_dim_mismatch,
  teacher_count_mismatch,
  provider_failure,
  unknown_id,
  dim_mismatch,
  empty_eval_set,
  non_finite_loss,
  io_error,
  bad_format,
  invalid_argument,
};

enum class ErrorCategory { validation, io, numeric };

inline ErrorCategory category(Errc c) {
  switch (c) {
    case Errc::io_error:
    case Errc::bad_format:
      return ErrorCategory::io;
    case Errc::non_finite_loss:
      return ErrorCategory::numeric;
    default:
      return ErrorCategory::validation;
  }
}

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::zero_row: return "ZeroRow";
    case Errc::non_positive_temperature: return "NonPositiveTemperature";
    case Errc::non_stochastic_input: return "NonStochasticInput";
    case Errc::non_scalar_loss: return "NonScalarLoss";
    case Errc::disconnected_leaf: return "DisconnectedLeaf";
    case Errc::non_unit_rows: return "NonUnitRows";
    case Errc::non_unit_input: return "NonUnitInput";
    case Errc::token_out_of_vocab: return "TokenOutOfVocab";
    case Errc::crop_out_of_bounds: return "CropOutOfBounds";
    case Errc::invalid_policy: return "InvalidPolicy";
    case Errc::kernel_extent_mismatch: return "KernelExtentMismatch";
    case Errc::manifest_mismatch: return "ManifestMismatch";
    case Errc::embedding_dim_mismatch: return "EmbeddingDimMismatch";
    case Errc::teacher_count_mismatch: return "TeacherCountMismatch";
    case Errc::provider_failure: return "ProviderFailure";
    case Errc::unknown_id: return "UnknownId";
    case Errc::dim_mismatch: return "DimMismatch";
    case Errc::empty_eval_set: return "EmptyEvalSet";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::io_error: return "IoError";
    case Errc::bad_format: return "BadFormat";
    case Errc::invalid_argument: return "InvalidArgument";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace mmdr
