#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lossforge {

enum class Errc {
  ShapeMismatch,
  MissingFrame,
  EmptySequence,
  IndivisibleSize,
  PatchTooLarge,
  NonpositiveDelta,
  MissingNeighbor,
  DataExhausted,
  VersionMismatch,
  CorruptCheckpoint,
  FrameTooSmall,
  LengthMismatch,
  RowOutOfRange,
  ScenePairMissing,
  InvalidArgument,
  Io,
  Config,
  MalformedCsv,
};

inline std::string_view errc_name(Errc e) {
  switch (e) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::MissingFrame: return "MissingFrame";
    case Errc::EmptySequence: return "EmptySequence";
    case Errc::IndivisibleSize: return "IndivisibleSize";
    case Errc::PatchTooLarge: return "PatchTooLarge";
    case Errc::NonpositiveDelta: return "NonpositiveDelta";
    case Errc::MissingNeighbor: return "MissingNeighbor";
    case Errc::DataExhausted: return "DataExhausted";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::FrameTooSmall: return "FrameTooSmall";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::RowOutOfRange: return "RowOutOfRange";
    case Errc::ScenePairMissing: return "ScenePairMissing";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
    case Errc::Config: return "Config";
    case Errc::MalformedCsv: return "MalformedCsv";
  }
  return "Unknown";
}

/// Every failure surfaced by the library carries one of the `Errc` kinds so
/// callers (and tests) can dispatch on the contract violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace lossforge
