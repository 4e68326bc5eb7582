#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forestchat {

enum class ErrorKind {
  DecodeError,
  EncodeError,
  DimensionMismatch,
  InvalidTarget,
  InvalidArgument,
  NonBinaryMask,
  ChannelCountError,
  ConstantField,
  MissingPrediction,
  SchemaError,
  DuplicateId,
  DuplicateSplit,
  DanglingSplitRef,
  EmptyKeywords,
  EmptyCorpus,
  EmptyInput,
  IdMismatch,
  OutOfRange,
  DuplicateTool,
  UnknownTool,
  InvalidPlan,
  PlanTooLong,
  NoPairLoaded,
  MissingArtifact,
  EndpointUnreachable,
  GroundingViolation,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Domain error carrying a machine-readable kind. All library failures are
/// reported through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace forestchat
