#pragma once

#include <stdexcept>
#include <string>

namespace dpf {

enum class ErrorCode {
  InvalidInput,
  NonPositiveD,
  GeometryInfeasible,
  DegenerateElement,
  NoConvergence,
  StepSizeUnderflow,
  UnitNeverSnapped,
  SnapDuringProbe,
  SingularSystem,
  ConstraintViolation,
  InfeasibleState,
  NoFeasiblePoint,
};

const char* to_string(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dpf
