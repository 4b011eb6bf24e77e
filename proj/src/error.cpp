// SPDX-License-Identifier: Apache-2.0

#include "vcb/error.hpp"

namespace vcb {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kOperand: return "operand error";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kBackend: return "backend error";
    case ErrorKind::kNotFound: return "not found";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

namespace {

std::string compose(const std::string& stage, const std::string& detail) {
  return stage.empty() ? detail : stage + ": " + detail;
}

}  // namespace

Error::Error(ErrorKind kind, std::string message, std::string stage)
    : std::runtime_error(compose(stage, message)),
      kind_(kind),
      stage_(std::move(stage)),
      detail_(std::move(message)) {}

Error Error::with_stage(std::string stage) const {
  // Innermost stage wins; nested pipeline calls must not re-tag.
  if (!stage_.empty()) return *this;
  return Error(kind_, detail_, std::move(stage));
}

void fail(ErrorKind kind, std::string message) {
  throw Error(kind, std::move(message));
}

}  // namespace vcb
