// Copyright (C) 2026 The difftune Authors
// SPDX-License-Identifier: Apache-2.0

#include "difftune/text_io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace difftune::text {

std::string format_exact(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw FormatError("cannot format value");
  return std::string(buf.data(), end);
}

double parse_exact(std::string_view field, std::string_view context) {
  field = trim(field);
  if (field.empty()) throw FormatError(std::string(context) + ": empty numeric field");
  double value = 0.0;
  const char* first = field.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw FormatError(std::string(context) + ": cannot parse '" + std::string(field) + "'");
  if (!std::isfinite(value))
    throw FormatError(std::string(context) + ": non-finite value '" + std::string(field) + "'");
  return value;
}

long long parse_integer(std::string_view field, std::string_view context) {
  field = trim(field);
  long long value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size())
    throw FormatError(std::string(context) + ": expected integer, got '" + std::string(field) +
                      "'");
  return value;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> parse_key_values(std::string_view line,
                                                    std::string_view context) {
  std::map<std::string, std::string> out;
  for (std::string_view item : split(line, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string_view::npos)
      throw FormatError(std::string(context) + ": expected key=value, got '" + std::string(item) +
                        "'");
    std::string key(trim(item.substr(0, eq)));
    if (key.empty()) throw FormatError(std::string(context) + ": empty key");
    if (!out.emplace(key, std::string(trim(item.substr(eq + 1)))).second)
      throw FormatError(std::string(context) + ": duplicate key '" + key + "'");
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  std::array<char, 17> buf{};
  std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(value));
  return std::string(buf.data());
}

}  // namespace difftune::text
