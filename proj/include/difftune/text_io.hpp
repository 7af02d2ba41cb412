// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "difftune/common.hpp"

namespace difftune::text {

/// Shortest decimal that parses back to exactly `value`.
std::string format_exact(double value);

/// Parses a full field as a double; throws FormatError naming `context` on
/// trailing garbage, empty input or non-finite results.
double parse_exact(std::string_view field, std::string_view context);

long long parse_integer(std::string_view field, std::string_view context);

std::vector<std::string_view> split(std::string_view line, char sep);

std::string_view trim(std::string_view s);

/// Parses "k1=v1,k2=v2,..." into a map. Duplicate or malformed keys throw.
std::map<std::string, std::string> parse_key_values(std::string_view line,
                                                    std::string_view context);

/// 64-bit FNV-1a, used to fingerprint configs inside result artifacts.
std::uint64_t fnv1a64(std::string_view bytes);

std::string hex64(std::uint64_t value);

}  // namespace difftune::text
