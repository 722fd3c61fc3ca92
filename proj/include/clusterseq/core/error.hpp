#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clusterseq {

/// Error categories. The CLI prints the code name as a machine-parseable prefix.
enum class ErrorCode {
  dimension,
  domain,
  index,
  configuration,
  contract,
  evaluation,
  io,
  format,
  empty_corpus,
  split,
  episode,
  sampling,
  training,
  compatibility,
  spec,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace clusterseq
