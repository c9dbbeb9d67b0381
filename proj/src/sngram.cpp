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

#include "polfuse/sngram.hpp"

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "polfuse/common.hpp"
#include "polfuse/text.hpp"

namespace polfuse {
namespace {

std::vector<std::string> SplitTabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

bool IsIntegerId(const std::string& s) {
  return !s.empty() && s.find_first_not_of("0123456789") == std::string::npos;
}

struct SentenceBuilder {
  std::vector<std::string> forms;
  std::vector<std::pair<std::size_t, std::string>> heads;  // 1-based head, rel

  bool empty() const { return forms.empty(); }

  void AppendTo(DependencyGraph& g, std::size_t line) {
    const std::size_t offset = g.tokens.size();
    std::size_t root_count = 0;
    for (std::size_t i = 0; i < forms.size(); ++i) {
      g.tokens.push_back(forms[i]);
      const auto& [head, rel] = heads[i];
      if (head == 0) {
        g.roots.push_back(offset + i);
        ++root_count;
      } else {
        if (head > forms.size()) {
          throw DataError("conllu: head " + std::to_string(head) + " out of range near line " +
                          std::to_string(line));
        }
        g.arcs.push_back({offset + head - 1, offset + i, rel});
      }
    }
    if (root_count != 1) {
      throw DataError("conllu: sentence ending near line " + std::to_string(line) + " has " +
                      std::to_string(root_count) + " roots");
    }
    forms.clear();
    heads.clear();
  }
};

std::string Trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void DependencyGraph::Validate() const {
  const std::size_t n = tokens.size();
  if (n == 0) throw DataError("dependency graph has no tokens");
  if (roots.empty()) throw DataError("dependency graph has no root");
  std::vector<long> head(n, -2);  // -2 unassigned, -1 root
  for (std::size_t r : roots) {
    if (r >= n) throw DataError("dependency graph root out of range");
    if (head[r] != -2) throw DataError("dependency graph lists a root twice");
    head[r] = -1;
  }
  for (const DependencyArc& a : arcs) {
    if (a.head >= n || a.dependent >= n) throw DataError("dependency arc out of range");
    if (head[a.dependent] == -1) throw DataError("dependency graph root has a head");
    if (head[a.dependent] != -2) throw DataError("dependency graph node has two heads");
    head[a.dependent] = static_cast<long>(a.head);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (head[i] == -2) throw DataError("dependency graph node " + std::to_string(i) + " has no head");
  }
  // Every chain of heads must reach a root within n steps.
  for (std::size_t i = 0; i < n; ++i) {
    long cur = static_cast<long>(i);
    std::size_t steps = 0;
    while (head[static_cast<std::size_t>(cur)] != -1) {
      cur = head[static_cast<std::size_t>(cur)];
      if (++steps > n) throw DataError("dependency graph contains a cycle");
    }
  }
}

DependencyGraph StubParser::Parse(std::string_view text) const {
  DependencyGraph g;
  g.tokens = SplitWhitespace(text);
  if (g.tokens.empty()) throw DataError("stub parser: empty text");
  g.roots = {0};
  for (std::size_t i = 1; i < g.tokens.size(); ++i) g.arcs.push_back({i - 1, i, "dep"});
  return g;
}

DependencyGraph ParseConllu(std::string_view conllu) {
  DependencyGraph g;
  SentenceBuilder sentence;
  std::istringstream in{std::string(conllu)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) {
      if (!sentence.empty()) sentence.AppendTo(g, lineno);
      continue;
    }
    if (line[0] == '#') continue;
    const auto cols = SplitTabs(line);
    if (cols.size() < 8) {
      throw DataError("conllu line " + std::to_string(lineno) + ": expected 10 columns");
    }
    if (!IsIntegerId(cols[0])) continue;  // "1-2" ranges and "1.1" empty nodes
    if (!IsIntegerId(cols[6])) {
      throw DataError("conllu line " + std::to_string(lineno) + ": bad HEAD '" + cols[6] + "'");
    }
    const std::size_t id = std::stoul(cols[0]);
    if (id != sentence.forms.size() + 1) {
      throw DataError("conllu line " + std::to_string(lineno) + ": non-consecutive token id");
    }
    sentence.forms.push_back(cols[1]);
    sentence.heads.emplace_back(std::stoul(cols[6]), cols[7]);
  }
  if (!sentence.empty()) sentence.AppendTo(g, lineno);
  if (g.tokens.empty()) throw DataError("conllu: no tokens");
  g.Validate();
  return g;
}

ConlluFileParser::ConlluFileParser(const std::filesystem::path& path, std::string adapter_name)
    : name_(std::move(adapter_name)) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CoNLL-U file " + path.string());
  // Blocks are keyed by "# doc_text =" (after "# newdoc") or, failing that,
  // by the sentence's "# text =".
  std::string line, block, key;
  bool in_doc = false;
  auto flush = [&]() {
    if (!key.empty() && !Trim(block).empty()) graphs_[key] = ParseConllu(block);
    block.clear();
    key.clear();
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# newdoc", 0) == 0) {
      flush();
      in_doc = true;
      continue;
    }
    if (line.rfind("# doc_text =", 0) == 0) {
      key = Trim(line.substr(12));
      continue;
    }
    if (!in_doc && line.rfind("# text =", 0) == 0) {
      flush();
      key = Trim(line.substr(8));
      continue;
    }
    block += line;
    block += '\n';
  }
  flush();
}

DependencyGraph ConlluFileParser::Parse(std::string_view text) const {
  auto it = graphs_.find(Trim(std::string(text)));
  if (it == graphs_.end()) {
    throw DataError(name_ + ": no pre-parsed graph for text '" + std::string(text.substr(0, 60)) + "'");
  }
  return it->second;
}

CommandParser::CommandParser(std::string command, std::string adapter_name)
    : command_(std::move(command)), name_(std::move(adapter_name)) {}

DependencyGraph CommandParser::Parse(std::string_view text) const {
  std::filesystem::path dir = std::filesystem::temp_directory_path();
  std::string tmpl = (dir / "polfuse-parse-XXXXXX").string();
  const int fd = mkstemp(tmpl.data());
  if (fd < 0) throw DataError(name_ + ": cannot create temporary file");
  {
    const std::string body(text);
    const ssize_t written = write(fd, body.data(), body.size());
    close(fd);
    if (written != static_cast<ssize_t>(body.size())) {
      std::filesystem::remove(tmpl);
      throw DataError(name_ + ": cannot write temporary file");
    }
  }
  const std::string cmd = command_ + " < '" + tmpl + "'";
  std::string output;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(tmpl);
    throw CapabilityError(name_ + ": cannot run '" + command_ + "'");
  }
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) output.append(buf, n);
  const int status = pclose(pipe);
  std::filesystem::remove(tmpl);
  if (status != 0) {
    throw CapabilityError(name_ + ": parser command failed (status " + std::to_string(status) +
                          "): " + command_);
  }
  return ParseConllu(output);
}

std::unique_ptr<DependencyParser> MakeParser(const ParserConfig& config) {
  const std::string& a = config.adapter;
  if (a == "stub") return std::make_unique<StubParser>();
  if (a.rfind("conllu:", 0) == 0) return std::make_unique<ConlluFileParser>(a.substr(7));
  if (a.rfind("command:", 0) == 0) return std::make_unique<CommandParser>(a.substr(8), "command");
  if (a == "en_core_web_sm" || a == "pt_core_news_sm" || a.rfind("spacy:", 0) == 0) {
    const std::string pipeline = a.rfind("spacy:", 0) == 0 ? a.substr(6) : a;
    const auto helper = config.helper_dir / "spacy_conllu.py";
    return std::make_unique<CommandParser>("python3 '" + helper.string() + "' " + pipeline,
                                           "spacy:" + pipeline);
  }
  throw ConfigError("unknown parser adapter '" + a + "'");
}

TermBag ExtractSngrams(const DependencyGraph& graph, const SngramOptions& options) {
  TermBag out;
  out.reserve(graph.arcs.size());
  for (const DependencyArc& a : graph.arcs) {
    std::string bigram = ToLower(graph.tokens[a.head]);
    bigram += kArcSymbol;
    bigram += ToLower(graph.tokens[a.dependent]);
    if (options.include_relation) {
      bigram += '|';
      bigram += a.relation;
    }
    out.push_back(std::move(bigram));
  }
  return out;
}

TermBag DocumentSngrams(const DependencyParser& parser, std::string_view text,
                        std::string_view doc_id, const SngramOptions& options) {
  try {
    DependencyGraph g = parser.Parse(text);
    g.Validate();
    return ExtractSngrams(g, options);
  } catch (const Error& e) {
    Warn("sngram: skipping document " + std::string(doc_id) + " (" + parser.name() +
         "): " + e.what());
    return {};
  }
}

TfidfModel FitSngramModel(std::span<const TermBag> development, const DependencyParser& parser,
                          const SngramOptions& options) {
  TfidfModel model = TfidfModel::Fit(development);
  model.metadata()["adapter"] = parser.name();
  model.metadata()["include_relation"] = options.include_relation ? "1" : "0";
  model.metadata()["fitted_on"] = "development";
  return model;
}

}  // namespace polfuse
