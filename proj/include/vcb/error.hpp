// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vcb {

enum class ErrorKind {
  kOperand,    // shape / encoder mismatch between tensors
  kParameter,  // out-of-range or missing parameter
  kInput,      // undecodable or empty input data
  kFormat,     // malformed on-disk record
  kBackend,    // encoder / estimator / generator failure
  kNotFound,
  kIo,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string stage = {});

  ErrorKind kind() const noexcept { return kind_; }
  // Pipeline stage that raised the error, empty outside the pipeline.
  const std::string& stage() const noexcept { return stage_; }
  // Message without the stage prefix.
  const std::string& detail() const noexcept { return detail_; }

  Error with_stage(std::string stage) const;

  // Validation errors map to CLI exit code 2, everything else to 1.
  bool is_validation() const noexcept {
    return kind_ == ErrorKind::kParameter || kind_ == ErrorKind::kOperand;
  }

 private:
  ErrorKind kind_;
  std::string stage_;
  std::string detail_;
};

[[noreturn]] void fail(ErrorKind kind, std::string message);

}  // namespace vcb
