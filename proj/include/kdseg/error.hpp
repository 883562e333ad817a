#pragma once

#include <stdexcept>
#include <string>

namespace kdseg {

enum class ErrorKind {
  kUsage,
  kDimension,
  kConfig,
  kNumeric,
  kLabel,
  kDegenerateBatch,
  kFormat,
  kIo,
  kCheckpoint,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define KDSEG_DEFINE_ERROR(Name, Kind) \
  class Name : public Error {          \
   public:                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

KDSEG_DEFINE_ERROR(UsageError, kUsage)
KDSEG_DEFINE_ERROR(DimensionError, kDimension)
KDSEG_DEFINE_ERROR(ConfigError, kConfig)
KDSEG_DEFINE_ERROR(NumericError, kNumeric)
KDSEG_DEFINE_ERROR(LabelError, kLabel)
KDSEG_DEFINE_ERROR(DegenerateBatchError, kDegenerateBatch)
KDSEG_DEFINE_ERROR(FormatError, kFormat)
KDSEG_DEFINE_ERROR(IoError, kIo)

#undef KDSEG_DEFINE_ERROR

enum class CheckpointFault { kBadMagic, kVersionMismatch, kTruncated, kShapeMismatch };

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointFault fault, const std::string& what)
      : Error(ErrorKind::kCheckpoint, what), fault_(fault) {}
  CheckpointFault fault() const noexcept { return fault_; }

 private:
  CheckpointFault fault_;
};

/// Process exit code for an error: 1 usage, 2 data/config, 3 numeric.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
      return 1;
    case ErrorKind::kNumeric:
      return 3;
    default:
      return 2;
  }
}

}  // namespace kdseg
