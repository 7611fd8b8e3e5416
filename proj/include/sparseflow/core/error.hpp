#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sparseflow {

enum class ErrorKind {
  InvalidShape,
  DimensionMismatch,
  AllMaskedRow,
  NonFiniteEvaluation,
  IndivisibleGrid,
  IndivisibleLength,
  IndivisibleWorkers,
  RankOutOfRange,
  ThresholdOutOfRange,
  EmptySelection,
  StatsMismatch,
  CacheShapeMismatch,
  TimeOutOfDomain,
  DegenerateVariance,
  ZeroDispersion,
  WeightCountMismatch,
  GroupTooSmall,
  NonIntegralTarget,
  TimeAboveThreshold,
  ExtentMismatch,
  RequiresUnitSchedule,
  InvalidConfig,
  Io,
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define SF_CHECK(cond, kind, msg)                 \
  do {                                            \
    if (!(cond)) {                                \
      throw ::sparseflow::Error((kind), (msg));   \
    }                                             \
  } while (0)

}  // namespace sparseflow
