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

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "polfuse/pipeline.hpp"
#include "support.hpp"

using namespace polfuse;
using nlohmann::json;
using testing::ReadText;
using testing::TempDir;

namespace fs = std::filesystem;

namespace {

// 80 documents from the desk corpus and a small, fast model.
json SmallConfig(const TempDir& dir) {
  const fs::path desk = testing::SourceDir() / "data" / "desk";
  std::ifstream in(desk / "corpus.jsonl");
  std::ofstream out(dir / "corpus.jsonl");
  std::string line;
  for (int i = 0; i < 80 && std::getline(in, line); ++i) out << line << "\n";
  return {
      {"name", "small"},
      {"task", "T1"},
      {"seed", 5},
      {"data", {{"dataset", "corpus.jsonl"}}},
      {"variants", {"reference", "bert", "sngram+psych", "bert+sngram"}},
      {"embedder", {{"preset", "stub"}, {"embed_dim", 8}, {"max_len", 16}}},
      {"psych", {{"language", "en"}, {"liwc", (desk / "en_liwc.dic").string()}, {"mrc", (desk / "en_mrc.csv").string()}}},
      {"model", {{"filters", 4}, {"projection_units", 4}, {"epochs", 2}, {"batch_size", 16}}},
      {"explain", {{"repeats", 2}, {"tail", 3}}},
      {"output_dir", "run"},
  };
}

ErrorKind KindOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kInvalidArgument;
}

std::string MessageOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("variants") {
  CHECK(VariantNames().size() == 8);
  CHECK(LookupVariant("reference").reference);
  CHECK(LookupVariant("bert.baseline").architecture == Architecture::kPooledBaseline);
  CHECK(LookupVariant("psych+bert").name == "bert+psych");
  CHECK_THROWS_AS(LookupVariant("elmo"), Error);
}

TEST_CASE("config parsing and overrides") {
  TempDir dir;
  const json doc = SmallConfig(dir);
  const ExperimentConfig c = ParseConfig(doc, dir.path());
  CHECK(c.task.task_id == "T1");
  CHECK(c.seed == 5);
  CHECK(c.dataset == dir / "corpus.jsonl");
  CHECK(c.output_dir == dir / "run");
  CHECK(c.variants.size() == 4);
  CHECK(c.model.classes == 2);
  CHECK(c.embedder.embed_dim == 8);

  ConfigOverrides o;
  o.channels = "psych";
  o.seed = 9;
  o.task = "T3";
  const ExperimentConfig d = ParseConfig(doc, dir.path(), o);
  CHECK(d.variants == std::vector<std::string>{"psych"});
  CHECK(d.seed == 9);
  CHECK(d.task.task_id == "T3");

  json ternary = doc;
  ternary["task"] = "T2-ternary";
  CHECK(ParseConfig(ternary, dir.path()).model.classes == 3);
}

TEST_CASE("config errors") {
  TempDir dir;
  json doc = SmallConfig(dir);
  doc["model"]["filtres"] = 3;
  const std::string msg = MessageOf([&] { ParseConfig(doc, dir.path()); });
  CHECK(msg.find("model.filtres") != std::string::npos);
  CHECK(KindOf([&] { ParseConfig(doc, dir.path()); }) == ErrorKind::kConfig);

  json bad_task = SmallConfig(dir);
  bad_task["task"] = "T7";
  CHECK_THROWS_AS(ParseConfig(bad_task, dir.path()), Error);

  json bad_variant = SmallConfig(dir);
  bad_variant["variants"] = {"bert", "elmo"};
  CHECK(KindOf([&] { ParseConfig(bad_variant, dir.path()); }) == ErrorKind::kConfig);

  CHECK(KindOf([&] { LoadConfig(dir / "missing.json"); }) == ErrorKind::kConfig);
  testing::WriteText(dir / "broken.json", "{ not json");
  CHECK(KindOf([&] { LoadConfig(dir / "broken.json"); }) == ErrorKind::kConfig);
}

TEST_CASE("cache root precedence") {
  TempDir dir;
  json doc = SmallConfig(dir);
  ::unsetenv("POLFUSE_CACHE_ROOT");
  CHECK(ParseConfig(doc, dir.path()).cache_dir == dir / "run" / "cache");
  ::setenv("POLFUSE_CACHE_ROOT", (dir / "envcache").c_str(), 1);
  CHECK(ParseConfig(doc, dir.path()).cache_dir == dir / "envcache");
  doc["cache_dir"] = "explicit";
  CHECK(ParseConfig(doc, dir.path()).cache_dir == dir / "explicit");
  ::unsetenv("POLFUSE_CACHE_ROOT");
}

TEST_CASE("missing lexicon is an actionable config error") {
  TempDir dir;
  json doc = SmallConfig(dir);
  doc["psych"]["liwc"] = (dir / "nowhere.dic").string();
  Experiment e(ParseConfig(doc, dir.path()));
  e.BuildCorpus();
  const std::string msg = MessageOf([&] { e.ExtractFeatures(); });
  CHECK(msg.find("psych.liwc") != std::string::npos);
  CHECK(KindOf([&] { e.ExtractFeatures(); }) == ErrorKind::kConfig);

  json wrong_width = SmallConfig(dir);
  wrong_width["psych"]["expected_width"] = 50;
  Experiment w(ParseConfig(wrong_width, dir.path()));
  CHECK(MessageOf([&] { w.ExtractFeatures(); }).find("expected_width") != std::string::npos);
}

TEST_CASE("external embedder asks for the helper") {
  TempDir dir;
  json doc = SmallConfig(dir);
  doc["embedder"] = {{"preset", "bert-base-uncased"}, {"max_len", 16}};
  doc["variants"] = {"bert"};
  Experiment e(ParseConfig(doc, dir.path()));
  const std::string msg = MessageOf([&] { e.ExtractFeatures(); });
  CHECK(msg.find("hf_embed.py") != std::string::npos);
  CHECK(KindOf([&] { e.ExtractFeatures(); }) == ErrorKind::kCapability);
  const fs::path requests = EmbeddingCache(e.config().cache_dir, e.ResolvedEmbedder()).directory() / "requests.jsonl";
  CHECK(fs::exists(requests));
  const json first = json::parse(ReadText(requests).substr(0, ReadText(requests).find('\n')));
  CHECK(first.contains("key"));
  CHECK(first["max_len"] == 16);
}

TEST_CASE("end to end on a small corpus") {
  TempDir dir;
  Experiment e(ParseConfig(SmallConfig(dir), dir.path()));
  const fs::path out = e.config().output_dir;
  e.Run("build-corpus");
  CHECK(fs::exists(out / "corpus" / "development.jsonl"));
  CHECK(ReadText(out / "corpus" / "distribution.txt").rfind("Set", 0) == 0);

  e.Run("extract-features");
  const json manifest = json::parse(ReadText(out / "features" / "manifest.json"));
  CHECK(manifest["standardizer_ddof"] == 0);
  CHECK(manifest.contains("sngram_k"));
  CHECK(manifest.contains("psych_k"));
  const std::string engineered = ReadText(out / "features" / "engineered.bin");
  const std::string manifest_text = ReadText(out / "features" / "manifest.json");

  // A rerun hits the cache and leaves the artifacts byte-identical.
  e.Run("extract-features");
  CHECK(ReadText(out / "features" / "engineered.bin") == engineered);
  CHECK(ReadText(out / "features" / "manifest.json") == manifest_text);

  const FeatureSet f = e.LoadFeatures();
  CHECK(f.dev_ids.size() == 64);
  CHECK(f.test_ids.size() == 16);
  CHECK(f.dev_psych.cols() == manifest["psych_k"].get<std::size_t>());
  CHECK(e.LoadEmbeddings(f.test_keys).size() == 16);

  e.Run("train");
  e.Run("evaluate");
  for (const char* v : {"reference", "bert", "sngram+psych", "bert+sngram"}) {
    CHECK(fs::exists(e.ModelDir(v) / "metrics.json"));
    CHECK(fs::exists(e.ModelDir(v) / "predictions.jsonl"));
  }
  const std::string results = ReadText(out / "evaluation" / "results.txt");
  CHECK(results.find("Model") != std::string::npos);
  const std::string predictions = ReadText(e.ModelDir("bert+sngram") / "predictions.jsonl");

  e.Run("explain");
  CHECK(fs::exists(out / "explain" / "sngram+psych" / "importance.csv"));

  std::vector<Experiment*> list = {&e};
  Compare(list, out);
  const json groups = json::parse(ReadText(out / "comparison" / "groups.json"));
  CHECK(groups["models"].size() == 4);
  CHECK(ReadText(out / "comparison" / "groups.txt").find("\nModel") != std::string::npos);

  // Same seed, fresh directory: identical predictions.
  TempDir again;
  Experiment e2(ParseConfig(SmallConfig(again), again.path()));
  for (const char* cmd : {"build-corpus", "extract-features", "train", "evaluate"}) e2.Run(cmd);
  CHECK(ReadText(e2.ModelDir("bert+sngram") / "predictions.jsonl") == predictions);

  CHECK(KindOf([&] { e.Run("dance"); }) == ErrorKind::kInvalidArgument);
}

}  // TEST_SUITE
