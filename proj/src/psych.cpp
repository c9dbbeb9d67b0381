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

#include "polfuse/psych.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "polfuse/common.hpp"
#include "polfuse/text.hpp"

namespace polfuse {
namespace {

std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> Lines(std::string_view contents) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= contents.size()) {
    auto nl = contents.find('\n', start);
    if (nl == std::string_view::npos) nl = contents.size();
    std::string line(contents.substr(start, nl - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  return lines;
}

std::vector<std::string> SplitAny(const std::string& s, std::string_view seps) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find_first_of(seps, start);
    if (pos == std::string::npos) pos = s.size();
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

bool ParseLong(const std::string& s, long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtol(s.c_str(), &end, 10);
  return *end == '\0';
}

bool ParseDouble(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return *end == '\0' && std::isfinite(out);
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open lexicon " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Language ParseLanguage(std::string_view name) {
  if (name == "en") return Language::kEn;
  if (name == "pt") return Language::kPt;
  throw ConfigError("unknown language '" + std::string(name) + "' (expected en or pt)");
}

std::string_view LanguageName(Language lang) { return lang == Language::kEn ? "en" : "pt"; }

std::size_t ExpectedPsychWidth(Language lang) { return lang == Language::kEn ? 101 : 70; }

std::vector<Lexicon::Match> Lexicon::Lookup(std::string_view word) const {
  std::vector<Match> out;
  auto add = [&](const std::vector<Match>& matches) {
    for (const Match& m : matches) {
      const bool seen = std::any_of(out.begin(), out.end(),
                                    [&](const Match& o) { return o.category == m.category; });
      if (!seen) out.push_back(m);
    }
  };
  const std::string w(word);
  if (auto it = exact_.find(w); it != exact_.end()) add(it->second);
  if (!prefixes_.empty()) {
    for (std::size_t len = w.size(); len > 0; --len) {
      if (auto it = prefixes_.find(w.substr(0, len)); it != prefixes_.end()) add(it->second);
    }
  }
  return out;
}

Lexicon ParseLiwc(std::string_view contents, Language language) {
  Lexicon lex;
  lex.kind_ = LexiconKind::kLiwc;
  lex.language_ = language;
  const auto lines = Lines(contents);
  auto fail = [](std::size_t row, const std::string& why) {
    return DataError("LIWC dictionary row " + std::to_string(row) + ": " + why);
  };

  std::size_t i = 0;
  while (i < lines.size() && Trim(lines[i]).empty()) ++i;
  if (i == lines.size() || Trim(lines[i]) != "%") throw fail(i + 1, "expected '%' header marker");
  ++i;

  std::map<long, std::size_t> index_to_category;
  std::set<std::string> names;
  bool closed = false;
  for (; i < lines.size(); ++i) {
    const std::string line = Trim(lines[i]);
    if (line.empty()) continue;
    if (line == "%") {
      closed = true;
      ++i;
      break;
    }
    const auto cols = SplitAny(line, "\t ");
    std::vector<std::string> fields;
    for (const auto& c : cols) {
      if (!c.empty()) fields.push_back(c);
    }
    long idx = 0;
    if (fields.size() != 2 || !ParseLong(fields[0], idx)) {
      throw fail(i + 1, "expected '<index>\\t<category>'");
    }
    if (!names.insert(fields[1]).second) throw fail(i + 1, "duplicate category '" + fields[1] + "'");
    if (index_to_category.count(idx)) throw fail(i + 1, "duplicate category index " + fields[0]);
    index_to_category[idx] = lex.categories_.size();
    lex.categories_.push_back(fields[1]);
  }
  if (!closed) throw fail(lines.size(), "unterminated category header");

  for (; i < lines.size(); ++i) {
    const std::string line = Trim(lines[i]);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw fail(i + 1, "expected '<word>\\t<indices>'");
    std::string word = ToLower(Trim(line.substr(0, tab)));
    if (word.empty()) throw fail(i + 1, "empty word");
    std::vector<Lexicon::Match> matches;
    for (const std::string& field : SplitAny(line.substr(tab + 1), "\t, ")) {
      if (field.empty()) continue;
      long idx = 0;
      if (!ParseLong(field, idx)) throw fail(i + 1, "bad category index '" + field + "'");
      auto it = index_to_category.find(idx);
      if (it == index_to_category.end()) throw fail(i + 1, "unknown category index " + field);
      matches.push_back({it->second, 1.0});
    }
    if (matches.empty()) throw fail(i + 1, "no category indices");
    const bool prefix = word.back() == '*';
    if (prefix) word.pop_back();
    if (word.empty()) throw fail(i + 1, "empty prefix pattern");
    auto& slot = prefix ? lex.prefixes_[word] : lex.exact_[word];
    slot.insert(slot.end(), matches.begin(), matches.end());
  }
  return lex;
}

Lexicon ParseMrc(std::string_view contents, Language language) {
  Lexicon lex;
  lex.kind_ = LexiconKind::kMrc;
  lex.language_ = language;
  const auto lines = Lines(contents);
  auto fail = [](std::size_t row, const std::string& why) {
    return DataError("MRC table row " + std::to_string(row) + ": " + why);
  };

  std::size_t i = 0;
  while (i < lines.size() && Trim(lines[i]).empty()) ++i;
  if (i == lines.size()) throw fail(1, "missing header");
  const auto header = SplitAny(Trim(lines[i]), ",");
  if (header.size() < 2 || Trim(header[0]) != "word") throw fail(i + 1, "header must be 'word,<dim>...'");
  std::set<std::string> names;
  for (std::size_t c = 1; c < header.size(); ++c) {
    std::string name = Trim(header[c]);
    if (name.empty()) throw fail(i + 1, "empty dimension name");
    if (!names.insert(name).second) throw fail(i + 1, "duplicate category '" + name + "'");
    lex.categories_.push_back(std::move(name));
  }
  const std::size_t k = lex.categories_.size();
  ++i;

  struct Row {
    std::string word;
    std::vector<std::pair<std::size_t, double>> raw;
  };
  std::vector<Row> rows;
  std::set<std::string> words;
  lex.ranges_.assign(k, {INFINITY, -INFINITY});
  for (; i < lines.size(); ++i) {
    const std::string line = Trim(lines[i]);
    if (line.empty()) continue;
    const auto cells = SplitAny(line, ",");
    if (cells.size() != k + 1) {
      throw fail(i + 1, "expected " + std::to_string(k + 1) + " cells, got " + std::to_string(cells.size()));
    }
    Row row{ToLower(Trim(cells[0])), {}};
    if (row.word.empty()) throw fail(i + 1, "empty word");
    if (!words.insert(row.word).second) throw fail(i + 1, "duplicate word '" + row.word + "'");
    for (std::size_t c = 0; c < k; ++c) {
      const std::string cell = Trim(cells[c + 1]);
      if (cell.empty()) continue;
      double v = 0.0;
      if (!ParseDouble(cell, v)) throw fail(i + 1, "bad score '" + cell + "'");
      row.raw.emplace_back(c, v);
      lex.ranges_[c].first = std::min(lex.ranges_[c].first, v);
      lex.ranges_[c].second = std::max(lex.ranges_[c].second, v);
    }
    rows.push_back(std::move(row));
  }
  for (auto& r : lex.ranges_) {
    if (!std::isfinite(r.first)) r = {0.0, 0.0};
  }
  for (const Row& row : rows) {
    auto& slot = lex.exact_[row.word];
    for (const auto& [c, v] : row.raw) {
      const auto [lo, hi] = lex.ranges_[c];
      const double w = hi > lo ? (v - lo) / (hi - lo) : 0.0;
      slot.push_back({c, w});
    }
  }
  return lex;
}

Lexicon LoadLexicon(const std::filesystem::path& path, LexiconKind kind, Language language) {
  const std::string contents = ReadFile(path);
  try {
    return kind == LexiconKind::kLiwc ? ParseLiwc(contents, language) : ParseMrc(contents, language);
  } catch (const Error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

CategoryProfile CountCategories(std::span<const std::string> tokens, const Lexicon& lexicon) {
  CategoryProfile profile;
  profile.language = lexicon.language();
  profile.values.assign(lexicon.num_categories(), 0.0);
  if (tokens.empty()) return profile;
  for (const std::string& t : tokens) {
    for (const Lexicon::Match& m : lexicon.Lookup(t)) profile.values[m.category] += m.weight;
  }
  const double n = static_cast<double>(tokens.size());
  for (double& v : profile.values) v /= n;
  return profile;
}

CategoryProfile ConcatProfiles(const CategoryProfile& liwc, const CategoryProfile& mrc) {
  if (liwc.language != mrc.language) {
    throw InvalidArgument("cannot concatenate psych profiles of different languages (" +
                          std::string(LanguageName(liwc.language)) + " vs " +
                          std::string(LanguageName(mrc.language)) + ")");
  }
  CategoryProfile out;
  out.language = liwc.language;
  out.values = liwc.values;
  out.values.insert(out.values.end(), mrc.values.begin(), mrc.values.end());
  return out;
}

std::vector<std::string> PsychLexicons::ColumnNames() const {
  std::vector<std::string> names;
  for (const auto& c : liwc.categories()) names.push_back("liwc:" + c);
  for (const auto& c : mrc.categories()) names.push_back("mrc:" + c);
  return names;
}

CategoryProfile PsychLexicons::Profile(std::span<const std::string> tokens) const {
  return ConcatProfiles(CountCategories(tokens, liwc), CountCategories(tokens, mrc));
}

}  // namespace polfuse
