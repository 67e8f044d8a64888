// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace shapenet {

/// Exact textual form of a binary64 value ("%a" hex-float).
std::string to_hexfloat(double value);

/// Parses a hex-float (or decimal) string; `field` names the value in errors.
double parse_hexfloat(std::string_view text, const std::string& field);

/// 64-bit FNV-1a digest, rendered as 16 lowercase hex digits.
std::string fnv1a64_hex(std::string_view bytes);

/// Writes `contents` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::string& path, std::string_view contents);

std::string read_file(const std::string& path);

}  // namespace shapenet
