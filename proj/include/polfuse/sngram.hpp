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

// Syntactic bigrams: word pairs joined by a dependency arc rather than by
// surface adjacency. Parsing is delegated to adapters; the rest of the
// pipeline only sees DependencyGraph.

#ifndef POLFUSE_SNGRAM_HPP_
#define POLFUSE_SNGRAM_HPP_

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polfuse/tfidf.hpp"

namespace polfuse {

struct DependencyArc {
  std::size_t head = 0;
  std::size_t dependent = 0;
  std::string relation;
};

// A dependency tree over tokens, or a forest with one tree per sentence.
// roots.front() is the main root.
struct DependencyGraph {
  std::vector<std::string> tokens;
  std::vector<DependencyArc> arcs;
  std::vector<std::size_t> roots;

  std::size_t root() const { return roots.front(); }
  // Throws DataError unless every non-root node has exactly one head, roots
  // have none, and the arcs are acyclic.
  void Validate() const;
};

class DependencyParser {
 public:
  virtual ~DependencyParser() = default;
  virtual std::string name() const = 0;
  virtual DependencyGraph Parse(std::string_view text) const = 0;
};

// Deterministic test adapter: whitespace tokens, root = first token, head of
// token i is token i - 1.
class StubParser final : public DependencyParser {
 public:
  std::string name() const override { return "stub"; }
  DependencyGraph Parse(std::string_view text) const override;
};

// Parses CoNLL-U text (ID, FORM, HEAD, DEPREL columns). Multi-word token
// ranges and empty nodes are skipped; sentences are merged into a forest.
DependencyGraph ParseConllu(std::string_view conllu);

// Serves pre-parsed documents: a CoNLL-U file whose sentences carry
// "# text = ..." comments. A document is looked up by its exact text; a
// document spanning several sentences may instead use "# newdoc id" blocks
// keyed by text via "# doc_text = ...".
class ConlluFileParser final : public DependencyParser {
 public:
  explicit ConlluFileParser(const std::filesystem::path& path,
                            std::string adapter_name = "conllu");
  std::string name() const override { return name_; }
  DependencyGraph Parse(std::string_view text) const override;
  std::size_t size() const { return graphs_.size(); }

 private:
  std::string name_;
  std::map<std::string, DependencyGraph, std::less<>> graphs_;
};

// Runs an external command that reads raw text on stdin and writes CoNLL-U
// on stdout (see tools/spacy_conllu.py for a spaCy-backed one).
class CommandParser final : public DependencyParser {
 public:
  CommandParser(std::string command, std::string adapter_name);
  std::string name() const override { return name_; }
  DependencyGraph Parse(std::string_view text) const override;

 private:
  std::string command_;
  std::string name_;
};

struct ParserConfig {
  // "stub", "conllu:<path>", "command:<shell command>", or a named spaCy
  // pipeline ("en_core_web_sm", "pt_core_news_sm") run through the helper.
  std::string adapter = "stub";
  std::filesystem::path helper_dir = "tools";
};

std::unique_ptr<DependencyParser> MakeParser(const ParserConfig& config);

inline constexpr std::string_view kArcSymbol = "→";

struct SngramOptions {
  bool include_relation = false;
};

// One "head→dependent" bigram (lowercased forms) per arc; with
// include_relation the label is appended as "head→dependent|rel".
TermBag ExtractSngrams(const DependencyGraph& graph, const SngramOptions& options = {});

// Parses and extracts; a parser failure is reported through Warn() and
// yields an empty bag, i.e. an all-zero feature row.
TermBag DocumentSngrams(const DependencyParser& parser, std::string_view text,
                        std::string_view doc_id, const SngramOptions& options = {});

// TF-IDF over bigram bags, fitted on development documents only.
TfidfModel FitSngramModel(std::span<const TermBag> development,
                          const DependencyParser& parser, const SngramOptions& options);

}  // namespace polfuse

#endif  // POLFUSE_SNGRAM_HPP_
