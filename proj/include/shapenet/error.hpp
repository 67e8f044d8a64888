// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace shapenet {

enum class ErrorCode {
  corpus_consistency,
  degenerate_anchor,
  insufficient_data,
  dimension,
  parse,
  version,
  architecture,
  shape,
  degenerate_extent,
  sample_rejected,
  model_mismatch,
  divergence,
  empty_dataset,
  io,
};

const char* to_string(ErrorCode code);
/// Identifier form, e.g. "model_mismatch".
const char* code_name(ErrorCode code);

/// Exception type for every recoverable failure in the library.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Process exit code for an error (2 = data/input error, 3 = runtime/training error).
int exit_code_for(ErrorCode code);

}  // namespace shapenet
