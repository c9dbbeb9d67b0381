// Copyright 2026 The Polfuse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "polfuse/text.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <regex>

#include "polfuse/common.hpp"

namespace polfuse {
namespace {

const std::regex& UrlPattern() {
  static const std::regex re(R"((?:https?|ftp)://[^\s<>"]+|www\.[^\s<>"]+)",
                             std::regex::icase | std::regex::optimize);
  return re;
}

const std::regex& TagPattern() {
  static const std::regex re(R"(<[^<>]*>)", std::regex::optimize);
  return re;
}

void AppendCodePoint(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  UBool error = false;
  U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, U8_MAX_LENGTH, c, error);
  if (!error) out.append(buf, static_cast<std::size_t>(len));
}

// Calls fn(code_point) for each code point; malformed bytes yield a negative
// value.
template <typename Fn>
void ForEachCodePoint(std::string_view text, Fn&& fn) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(s, i, length, c);
    fn(c);
  }
}

bool IsSpace(UChar32 c) { return c >= 0 && u_isUWhiteSpace(c); }

}  // namespace

std::string CleanText(std::string_view text) {
  std::string s(text);
  s = std::regex_replace(s, UrlPattern(), " ");
  s = std::regex_replace(s, TagPattern(), " ");

  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  ForEachCodePoint(s, [&](UChar32 c) {
    if (c < 0) return;
    if (IsSpace(c)) {
      pending_space = true;
    } else if (u_isalpha(c)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      AppendCodePoint(out, c);
    }
  });
  return out;
}

std::vector<std::string> SplitWhitespace(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  ForEachCodePoint(text, [&](UChar32 c) {
    if (c < 0) return;
    if (IsSpace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      AppendCodePoint(current, c);
    }
  });
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string ToLower(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  ForEachCodePoint(text, [&](UChar32 c) {
    if (c >= 0) AppendCodePoint(out, u_tolower(c));
  });
  return out;
}

std::vector<std::string> WordTokens(std::string_view text) {
  return SplitWhitespace(ToLower(CleanText(text)));
}

TokenSequence ShapeTokens(std::span<const std::string> tokens,
                          std::size_t max_len) {
  if (max_len == 0) throw InvalidArgument("ShapeTokens: max_len must be >= 1");
  TokenSequence seq;
  seq.real_length = std::min(tokens.size(), max_len);
  seq.tokens.assign(tokens.begin(), tokens.begin() + seq.real_length);
  seq.tokens.resize(max_len, std::string(kPadToken));
  return seq;
}

}  // namespace polfuse
