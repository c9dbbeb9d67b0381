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

// Text cleaning and token-sequence shaping. All strings are UTF-8.

#ifndef POLFUSE_TEXT_HPP_
#define POLFUSE_TEXT_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace polfuse {

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::size_t kDefaultMaxTokens = 300;

// Removes URLs, then HTML tags, then every code point that is neither a
// Unicode letter nor whitespace. Whitespace runs collapse to one space and
// the result is trimmed. Idempotent.
std::string CleanText(std::string_view text);

// Splits on Unicode whitespace.
std::vector<std::string> SplitWhitespace(std::string_view text);

// Full Unicode simple lowercasing.
std::string ToLower(std::string_view text);

// Cleaned, lowercased whitespace tokens; the word list used by the psych
// channel and by length rules.
std::vector<std::string> WordTokens(std::string_view text);

struct TokenSequence {
  std::vector<std::string> tokens;  // exactly max_len entries
  std::size_t real_length = 0;      // non-pad prefix length

  std::size_t max_len() const { return tokens.size(); }
  bool is_pad(std::size_t i) const { return i >= real_length; }
};

// Truncates to the first max_len tokens or right-pads with [PAD].
TokenSequence ShapeTokens(std::span<const std::string> tokens,
                          std::size_t max_len = kDefaultMaxTokens);

}  // namespace polfuse

#endif  // POLFUSE_TEXT_HPP_
