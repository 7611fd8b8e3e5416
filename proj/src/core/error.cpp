#include "sparseflow/core/error.hpp"

namespace sparseflow {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidShape: return "InvalidShape";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::AllMaskedRow: return "AllMaskedRow";
    case ErrorKind::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorKind::IndivisibleGrid: return "IndivisibleGrid";
    case ErrorKind::IndivisibleLength: return "IndivisibleLength";
    case ErrorKind::IndivisibleWorkers: return "IndivisibleWorkers";
    case ErrorKind::RankOutOfRange: return "RankOutOfRange";
    case ErrorKind::ThresholdOutOfRange: return "ThresholdOutOfRange";
    case ErrorKind::EmptySelection: return "EmptySelection";
    case ErrorKind::StatsMismatch: return "StatsMismatch";
    case ErrorKind::CacheShapeMismatch: return "CacheShapeMismatch";
    case ErrorKind::TimeOutOfDomain: return "TimeOutOfDomain";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::ZeroDispersion: return "ZeroDispersion";
    case ErrorKind::WeightCountMismatch: return "WeightCountMismatch";
    case ErrorKind::GroupTooSmall: return "GroupTooSmall";
    case ErrorKind::NonIntegralTarget: return "NonIntegralTarget";
    case ErrorKind::TimeAboveThreshold: return "TimeAboveThreshold";
    case ErrorKind::ExtentMismatch: return "ExtentMismatch";
    case ErrorKind::RequiresUnitSchedule: return "RequiresUnitSchedule";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

}  // namespace sparseflow
