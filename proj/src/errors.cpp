#include "rprloc/errors.hpp"

namespace rprloc {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kInvalidGeometry: return "invalid-geometry";
    case ErrorKind::kDegenerateVolume: return "degenerate-volume";
    case ErrorKind::kDegenerateMask: return "degenerate-mask";
    case ErrorKind::kInvalidPoints: return "invalid-points";
    case ErrorKind::kUndefinedSimilarity: return "undefined-similarity";
    case ErrorKind::kNoValidWindow: return "no-valid-window";
    case ErrorKind::kLookup: return "lookup";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kStageMismatch: return "stage-mismatch";
  }
  return "unknown";
}

}  // namespace rprloc
