#pragma once

#include <stdexcept>
#include <string>

namespace rprloc {

enum class ErrorKind {
  kInvalidArgument,
  kInvalidGeometry,
  kDegenerateVolume,
  kDegenerateMask,
  kInvalidPoints,
  kUndefinedSimilarity,
  kNoValidWindow,
  kLookup,
  kIo,
  kConfig,
  kDivergence,
  kStageMismatch,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so that callers (the CLI
// in particular) can map it to an exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace rprloc
