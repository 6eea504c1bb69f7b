#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "rmgpmsi/error.hpp"

namespace rmgpmsi::text {

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

/// Reads `key = value` lines; `#` starts a comment. Order is preserved.
inline std::vector<std::pair<std::string, std::string>> read_key_values(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": expected `key = value`");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorKind::ConfigError, "line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const auto out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(out);
  } catch (const std::exception&) {
    fail(ErrorKind::ConfigError, "`" + key + "` expects a non-negative integer, got `" + v + "`");
  }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  return static_cast<std::uint64_t>(parse_size(v, key));
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    fail(ErrorKind::ConfigError, "`" + key + "` expects a number, got `" + v + "`");
  }
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorKind::ConfigError, "`" + key + "` expects true/false, got `" + v + "`");
}

inline std::vector<std::size_t> parse_size_list(const std::string& v, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& part : split(v, ',')) out.push_back(parse_size(part, key));
  return out;
}

/// Fixed-point formatting used for every emitted number.
inline std::string fixed(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

/// Shortest round-trip formatting for config echo.
inline std::string exact(double v) {
  char buf[64];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace rmgpmsi::text
