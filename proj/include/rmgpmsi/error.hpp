#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rmgpmsi {

enum class ErrorKind {
  OddRegion,
  OutOfBounds,
  IndivisibleImage,
  IncompatibleTrace,
  RecursionLimit,
  EmptyProfile,
  ShapeMismatch,
  ChannelMismatch,
  ArityMismatch,
  LengthMismatch,
  UnknownStage,
  InvalidStageNum,
  NonFiniteLoss,
  EmptyBatch,
  DatasetEmpty,
  ResumeMismatch,
  CorruptCheckpoint,
  VersionMismatch,
  UnknownKind,
  InvalidCombo,
  MissingRoot,
  NoClasses,
  UnreadableImage,
  DecodeError,
  BadSize,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::OddRegion: return "OddRegion";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::IndivisibleImage: return "IndivisibleImage";
    case ErrorKind::IncompatibleTrace: return "IncompatibleTrace";
    case ErrorKind::RecursionLimit: return "RecursionLimit";
    case ErrorKind::EmptyProfile: return "EmptyProfile";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ChannelMismatch: return "ChannelMismatch";
    case ErrorKind::ArityMismatch: return "ArityMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::UnknownStage: return "UnknownStage";
    case ErrorKind::InvalidStageNum: return "InvalidStageNum";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::DatasetEmpty: return "DatasetEmpty";
    case ErrorKind::ResumeMismatch: return "ResumeMismatch";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::UnknownKind: return "UnknownKind";
    case ErrorKind::InvalidCombo: return "InvalidCombo";
    case ErrorKind::MissingRoot: return "MissingRoot";
    case ErrorKind::NoClasses: return "NoClasses";
    case ErrorKind::UnreadableImage: return "UnreadableImage";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::BadSize: return "BadSize";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace rmgpmsi
