#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nbv {

enum class Errc {
  DegeneratePosition,
  InvalidScale,
  InvalidGeometry,
  InvalidDims,
  IndexOutOfBounds,
  WrongDims,
  ParseError,
  DegenerateTriangle,
  DegenerateMesh,
  EmptyCandidateSet,
  ArityMismatch,
  UnknownVariant,
  ShapeMismatch,
  StaleCache,
  EmptyDataset,
  EmptyReference,
  IoError,
  FormatVersionMismatch,
  ChecksumMismatch,
  ConfigError,
};

std::string_view errc_name(Errc code);

// All library failures are reported through this one exception type; the
// code is what callers (and the CLI exit-code mapping) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace nbv
