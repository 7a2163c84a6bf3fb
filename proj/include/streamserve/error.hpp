#pragma once

#include <stdexcept>
#include <string>

namespace streamserve {

enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  not_enough_input,
  infeasible,
  instance_too_large,
  schema_violation,
  infeasible_slo,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace streamserve
