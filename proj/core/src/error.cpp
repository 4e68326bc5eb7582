#include "forestchat/error.hpp"

namespace forestchat {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DecodeError: return "decode_error";
    case ErrorKind::EncodeError: return "encode_error";
    case ErrorKind::DimensionMismatch: return "dimension_mismatch";
    case ErrorKind::InvalidTarget: return "invalid_target";
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::NonBinaryMask: return "non_binary_mask";
    case ErrorKind::ChannelCountError: return "channel_count";
    case ErrorKind::ConstantField: return "constant_field";
    case ErrorKind::MissingPrediction: return "missing_prediction";
    case ErrorKind::SchemaError: return "schema_error";
    case ErrorKind::DuplicateId: return "duplicate_id";
    case ErrorKind::DuplicateSplit: return "duplicate_split";
    case ErrorKind::DanglingSplitRef: return "dangling_split_ref";
    case ErrorKind::EmptyKeywords: return "empty_keywords";
    case ErrorKind::EmptyCorpus: return "empty_corpus";
    case ErrorKind::EmptyInput: return "empty_input";
    case ErrorKind::IdMismatch: return "id_mismatch";
    case ErrorKind::OutOfRange: return "out_of_range";
    case ErrorKind::DuplicateTool: return "duplicate_tool";
    case ErrorKind::UnknownTool: return "unknown_tool";
    case ErrorKind::InvalidPlan: return "invalid_plan";
    case ErrorKind::PlanTooLong: return "plan_too_long";
    case ErrorKind::NoPairLoaded: return "no_pair_loaded";
    case ErrorKind::MissingArtifact: return "missing_artifact";
    case ErrorKind::EndpointUnreachable: return "endpoint_unreachable";
    case ErrorKind::GroundingViolation: return "grounding_violation";
    case ErrorKind::IoError: return "io_error";
  }
  return "unknown";
}

}  // namespace forestchat
