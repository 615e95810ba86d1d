// Copyright 2026 The Crashaccum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Crash report ingestion: raw stack text parsing, frame filtering, crashline
// extraction, fingerprinting, and the canonical `.report.json` format.
//
// Two raw grammars are recognized, one frame per line:
//
//   debugger:  #N [0xADDR] [in FUNC [(args)]] [at FILE:LINE[:COL]] [from MODULE]
//   sanitizer: #N 0xADDR in FUNC FILE:LINE[:COL]
//              #N 0xADDR in FUNC (MODULE+0xOFF)
//
// Lines that do not match are skipped. For the module form the offset is
// stored as the frame address, so module-offset keys survive ASLR.

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crashaccum/error.hpp"
#include "crashaccum/frame.hpp"
#include "crashaccum/metric.hpp"
#include "crashaccum/sha256.hpp"
#include "json.hpp"

namespace crashaccum {

inline constexpr int kReportFormatVersion = 1;

struct CrashReport {
  std::string id;
  Stacktrace stacktrace;
  std::string crashline;
  std::string raw;

  friend bool operator==(const CrashReport&, const CrashReport&) = default;
};

// Frame filter. A rule matches when the frame's function or module starts
// with (kPrefix) or contains (kSubstring) the pattern; matching is
// case-sensitive.
class IgnoreRules {
 public:
  enum class Kind { kPrefix, kSubstring };
  struct Rule {
    Kind kind = Kind::kPrefix;
    std::string pattern;
    friend bool operator==(const Rule&, const Rule&) = default;
  };

  IgnoreRules() = default;
  explicit IgnoreRules(std::vector<Rule> rules) : rules_(std::move(rules)) {}

  // One rule per line. `*pat*` is a substring rule, anything else a prefix
  // rule. Blank lines and lines starting with '#' are ignored.
  static IgnoreRules Parse(std::string_view text) {
    std::vector<Rule> rules;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto last = line.find_last_not_of(" \t\r");
      std::string pattern = line.substr(first, last - first + 1);
      if (pattern.size() > 2 && pattern.front() == '*' && pattern.back() == '*') {
        rules.push_back({Kind::kSubstring, pattern.substr(1, pattern.size() - 2)});
      } else {
        rules.push_back({Kind::kPrefix, std::move(pattern)});
      }
    }
    return IgnoreRules(std::move(rules));
  }

  // Sanitizer runtime and libc abort machinery.
  static IgnoreRules Defaults() {
    return IgnoreRules({{Kind::kPrefix, "__asan"},
                        {Kind::kPrefix, "__ubsan"},
                        {Kind::kPrefix, "__sanitizer"},
                        {Kind::kPrefix, "abort"},
                        {Kind::kPrefix, "raise"},
                        {Kind::kPrefix, "__libc"}});
  }

  const std::vector<Rule>& rules() const { return rules_; }

  bool matches(const Frame& frame) const {
    return std::ranges::any_of(rules_, [&](const Rule& rule) {
      return Matches(rule, frame.function) || Matches(rule, frame.module);
    });
  }

 private:
  static bool Matches(const Rule& rule, std::string_view field) {
    if (field.empty() || rule.pattern.empty()) return false;
    return rule.kind == Kind::kPrefix ? field.starts_with(rule.pattern)
                                      : field.find(rule.pattern) != std::string_view::npos;
  }

  std::vector<Rule> rules_;
};

namespace detail {

inline std::string_view Trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool ParseUnsigned(std::string_view s, std::uint64_t& out, int base = 10) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out, base);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// "0x1f" -> 31.
inline bool ParseHexLiteral(std::string_view s, std::uint64_t& out) {
  if (!s.starts_with("0x") && !s.starts_with("0X")) return false;
  return ParseUnsigned(s.substr(2), out, 16);
}

// FILE:LINE[:COL]
inline bool ParseLocation(std::string_view s, Frame& frame) {
  const auto last = s.rfind(':');
  if (last == std::string_view::npos) return false;
  std::uint64_t tail = 0;
  if (!ParseUnsigned(s.substr(last + 1), tail)) return false;
  std::string_view head = s.substr(0, last);
  std::uint64_t line = 0;
  std::uint64_t column = 0;
  if (const auto mid = head.rfind(':');
      mid != std::string_view::npos && ParseUnsigned(head.substr(mid + 1), line)) {
    column = tail;
    head = head.substr(0, mid);
  } else {
    line = tail;
  }
  if (head.empty()) return false;
  frame.file = std::string(head);
  frame.line = line;
  frame.column = column;
  return true;
}

// "(MODULE+0xOFF)" -> module and offset.
inline bool ParseModuleGroup(std::string_view s, Frame& frame) {
  if (s.size() < 2 || s.front() != '(' || s.back() != ')') return false;
  s = s.substr(1, s.size() - 2);
  const auto plus = s.rfind("+0x");
  if (plus == std::string_view::npos || plus == 0) return false;
  std::uint64_t offset = 0;
  if (!ParseHexLiteral(s.substr(plus + 1), offset)) return false;
  frame.module = std::string(s.substr(0, plus));
  frame.address = offset;
  return true;
}

// Position of the '(' opening a parenthesized group that ends `s`.
inline std::optional<std::size_t> TrailingGroupStart(std::string_view s) {
  if (s.empty() || s.back() != ')') return std::nullopt;
  int depth = 0;
  for (std::size_t i = s.size(); i-- > 0;) {
    if (s[i] == ')') ++depth;
    if (s[i] == '(' && --depth == 0) return i;
  }
  return std::nullopt;
}

// Drops debugger argument lists: "foo (x=1, y=2)" -> "foo".
inline std::string_view StripArguments(std::string_view func) {
  if (const auto open = TrailingGroupStart(func); open && *open > 0 && func[*open - 1] == ' ') {
    return Trim(func.substr(0, *open));
  }
  return func;
}

inline std::optional<Frame> ParseFrameLine(std::string_view line) {
  line = Trim(line);
  if (line.size() < 2 || line[0] != '#') return std::nullopt;
  std::size_t pos = 1;
  while (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) ++pos;
  if (pos == 1) return std::nullopt;
  if (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) {
    return std::nullopt;
  }
  std::string_view rest = Trim(line.substr(pos));

  Frame frame;
  if (rest.starts_with("0x") || rest.starts_with("0X")) {
    const auto end = rest.find_first_of(" \t");
    if (!ParseHexLiteral(rest.substr(0, end), frame.address)) return std::nullopt;
    rest = end == std::string_view::npos ? std::string_view{} : Trim(rest.substr(end));
  }

  std::string_view func;
  if (rest.starts_with("in ")) {
    std::string_view body = Trim(rest.substr(3));
    if (const auto open = TrailingGroupStart(body);
        open && ParseModuleGroup(body.substr(*open), frame)) {
      func = Trim(body.substr(0, *open));
    } else if (const auto at = body.rfind(" at "); at != std::string_view::npos) {
      if (!ParseLocation(Trim(body.substr(at + 4)), frame)) return std::nullopt;
      func = body.substr(0, at);
    } else if (const auto from = body.rfind(" from "); from != std::string_view::npos) {
      frame.module = std::string(Trim(body.substr(from + 6)));
      func = body.substr(0, from);
    } else if (const auto space = body.find_last_of(" \t");
               space != std::string_view::npos &&
               ParseLocation(body.substr(space + 1), frame)) {
      func = body.substr(0, space);
    } else {
      func = body;
    }
  } else if (rest.starts_with("at ")) {
    if (!ParseLocation(Trim(rest.substr(3)), frame)) return std::nullopt;
  } else if (rest.starts_with("from ")) {
    frame.module = std::string(Trim(rest.substr(5)));
  } else if (!rest.empty()) {
    if (!ParseModuleGroup(rest, frame) && !ParseLocation(rest, frame) && frame.address == 0) {
      return std::nullopt;
    }
  }
  frame.function = std::string(StripArguments(Trim(func)));

  if (!frame.valid()) return std::nullopt;
  return frame;
}

}  // namespace detail

inline Stacktrace ParseRawStacktrace(std::string_view text) {
  Stacktrace trace;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    if (auto frame = detail::ParseFrameLine(text.substr(start, end - start))) {
      trace.frames.push_back(std::move(*frame));
    }
    start = end + 1;
  }
  if (trace.empty()) throw Error(ErrorCode::kEmptyTrace, "no stack frames found");
  return trace;
}

inline Stacktrace Normalize(const Stacktrace& trace, const IgnoreRules& rules) {
  Stacktrace out;
  for (const Frame& frame : trace.frames) {
    if (!rules.matches(frame)) out.frames.push_back(frame);
  }
  if (out.empty()) throw Error(ErrorCode::kAllFramesFiltered, "every frame matched an ignore rule");
  return out;
}

// SHA-256 over the length-prefixed frame keys.
inline std::string Fingerprint(const Stacktrace& trace, KeyMode mode = KeyMode::kFunctionName) {
  Sha256 hash;
  for (const Frame& frame : trace.frames) {
    const std::string key = FrameKey(frame, mode);
    hash.update(std::to_string(key.size())).update(":").update(key).update("\n");
  }
  return hash.hex_digest();
}

inline std::string ExtractCrashline(const Stacktrace& trace) {
  for (const Frame& frame : trace.frames) {
    if (!frame.file.empty()) return frame.file + ":" + std::to_string(frame.line);
  }
  return {};
}

inline CrashReport MakeReport(std::string raw, const IgnoreRules& rules,
                              KeyMode mode = KeyMode::kFunctionName) {
  CrashReport report;
  report.stacktrace = Normalize(ParseRawStacktrace(raw), rules);
  report.crashline = ExtractCrashline(report.stacktrace);
  report.id = Fingerprint(report.stacktrace, mode);
  report.raw = std::move(raw);
  return report;
}

inline nlohmann::ordered_json ReportToJson(const CrashReport& report) {
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (const Frame& f : report.stacktrace.frames) {
    frames.push_back({{"function", f.function},
                      {"module", f.module},
                      {"file", f.file},
                      {"line", f.line},
                      {"column", f.column},
                      {"address", f.address}});
  }
  return {{"version", kReportFormatVersion},
          {"id", report.id},
          {"crashline", report.crashline},
          {"frames", std::move(frames)},
          {"raw", report.raw}};
}

inline std::string SerializeReport(const CrashReport& report) {
  return ReportToJson(report).dump(2) + "\n";
}

inline CrashReport ParseReportJson(std::string_view bytes, KeyMode mode = KeyMode::kFunctionName) {
  CrashReport report;
  try {
    const auto doc = nlohmann::json::parse(bytes);
    if (doc.at("version").get<int>() != kReportFormatVersion) {
      throw Error(ErrorCode::kParseError, "unsupported report version");
    }
    report.id = doc.at("id").get<std::string>();
    report.crashline = doc.at("crashline").get<std::string>();
    report.raw = doc.at("raw").get<std::string>();
    for (const auto& f : doc.at("frames")) {
      Frame frame;
      frame.function = f.at("function").get<std::string>();
      frame.module = f.at("module").get<std::string>();
      frame.file = f.at("file").get<std::string>();
      frame.line = f.at("line").get<std::uint64_t>();
      frame.column = f.at("column").get<std::uint64_t>();
      frame.address = f.at("address").get<std::uint64_t>();
      if (!frame.valid()) throw Error(ErrorCode::kParseError, "invalid frame in report");
      report.stacktrace.frames.push_back(std::move(frame));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
  if (report.stacktrace.empty()) throw Error(ErrorCode::kParseError, "report has no frames");
  if (Fingerprint(report.stacktrace, mode) != report.id) {
    throw Error(ErrorCode::kFingerprintMismatch, "report id does not match its frames");
  }
  return report;
}

}  // namespace crashaccum
