#pragma once

#include <stdexcept>
#include <string>

namespace vinit {

// Failure taxonomy shared by all modules. Solvers that can run out of
// iterations do not throw; they return their best iterate with a
// `converged` flag instead.
enum class ErrorCode {
  InsufficientData,
  InvalidInput,
  OutOfRange,
  ParseError,
  BehindCamera,
  DegenerateDepth,
  DegenerateScene,
  GaugeError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::DegenerateDepth: return "DegenerateDepth";
    case ErrorCode::DegenerateScene: return "DegenerateScene";
    case ErrorCode::GaugeError: return "GaugeError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vinit
