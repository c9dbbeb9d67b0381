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

// Psycholinguistic category profiles from LIWC-style dictionaries and
// MRC-style word norm tables.

#ifndef POLFUSE_PSYCH_HPP_
#define POLFUSE_PSYCH_HPP_

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace polfuse {

enum class LexiconKind { kLiwc, kMrc };
enum class Language { kEn, kPt };

Language ParseLanguage(std::string_view name);
std::string_view LanguageName(Language lang);

// Width of the concatenated LIWC + MRC profile for the language presets:
// 101 for English and 70 for Portuguese.
std::size_t ExpectedPsychWidth(Language lang);

class Lexicon {
 public:
  struct Match {
    std::size_t category;
    double weight;  // 1 for LIWC, min-max normalised score for MRC
  };

  LexiconKind kind() const { return kind_; }
  Language language() const { return language_; }
  const std::vector<std::string>& categories() const { return categories_; }
  std::size_t num_categories() const { return categories_.size(); }
  std::size_t num_entries() const { return exact_.size() + prefixes_.size(); }

  // Every (category, weight) contributed by `word`, exact entries first then
  // prefix entries. A category appears at most once; for MRC the first
  // matching entry wins.
  std::vector<Match> Lookup(std::string_view word) const;

  // Per-dimension (min, max) of raw MRC scores used for normalisation.
  const std::vector<std::pair<double, double>>& score_ranges() const { return ranges_; }

 private:
  friend Lexicon LoadLexicon(const std::filesystem::path&, LexiconKind, Language);
  friend Lexicon ParseLiwc(std::string_view, Language);
  friend Lexicon ParseMrc(std::string_view, Language);

  LexiconKind kind_ = LexiconKind::kLiwc;
  Language language_ = Language::kEn;
  std::vector<std::string> categories_;
  std::unordered_map<std::string, std::vector<Match>> exact_;
  std::unordered_map<std::string, std::vector<Match>> prefixes_;  // "word*" stem
  std::vector<std::pair<double, double>> ranges_;
};

// LIWC .dic layout:
//   %
//   <index>\t<category>
//   ...
//   %
//   <word>\t<index>[,<index>...]     (or tab-separated indices)
// A trailing '*' on the word marks a prefix pattern.
Lexicon ParseLiwc(std::string_view contents, Language language);

// CSV: header "word,<dim1>,...,<dimK>", then one row per word. Empty cells
// are missing values. Scores are min-max normalised to [0, 1] per dimension.
Lexicon ParseMrc(std::string_view contents, Language language);

Lexicon LoadLexicon(const std::filesystem::path& path, LexiconKind kind, Language language);

struct CategoryProfile {
  Language language = Language::kEn;
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

// Category matches per word: each token adds its weight to every category it
// matches, and the totals are divided by the token count. Empty documents
// give the zero profile.
CategoryProfile CountCategories(std::span<const std::string> tokens, const Lexicon& lexicon);

// LIWC values followed by MRC values.
CategoryProfile ConcatProfiles(const CategoryProfile& liwc, const CategoryProfile& mrc);

// Loaded LIWC + MRC pair for one language.
struct PsychLexicons {
  Lexicon liwc;
  Lexicon mrc;

  std::size_t width() const { return liwc.num_categories() + mrc.num_categories(); }
  std::vector<std::string> ColumnNames() const;  // "liwc:<cat>", "mrc:<dim>"
  CategoryProfile Profile(std::span<const std::string> tokens) const;
};

}  // namespace polfuse

#endif  // POLFUSE_PSYCH_HPP_
