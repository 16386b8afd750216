#include "nbv/error.hpp"

namespace nbv {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::DegeneratePosition: return "DegeneratePosition";
    case Errc::InvalidScale: return "InvalidScale";
    case Errc::InvalidGeometry: return "InvalidGeometry";
    case Errc::InvalidDims: return "InvalidDims";
    case Errc::IndexOutOfBounds: return "IndexOutOfBounds";
    case Errc::WrongDims: return "WrongDims";
    case Errc::ParseError: return "ParseError";
    case Errc::DegenerateTriangle: return "DegenerateTriangle";
    case Errc::DegenerateMesh: return "DegenerateMesh";
    case Errc::EmptyCandidateSet: return "EmptyCandidateSet";
    case Errc::ArityMismatch: return "ArityMismatch";
    case Errc::UnknownVariant: return "UnknownVariant";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::StaleCache: return "StaleCache";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::EmptyReference: return "EmptyReference";
    case Errc::IoError: return "IoError";
    case Errc::FormatVersionMismatch: return "FormatVersionMismatch";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace nbv
