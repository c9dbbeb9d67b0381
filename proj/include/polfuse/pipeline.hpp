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

// Experiment configuration and the batch commands behind the CLI.
//
// Artifacts under output_dir:
//   corpus/      development.jsonl, test.jsonl, distribution.{csv,txt}, report.json
//   features/    manifest.json, engineered.bin, selection.json, sngram.tfidf
//   models/<v>/  weights.bin + model.json (or reference.json), manifest.json,
//                metrics.json, predictions.jsonl
//   evaluation/  results.{txt,csv}
//   comparison/  groups.{txt,json}, pairwise.csv
//   explain/<v>/ importance.{txt,csv}

#ifndef POLFUSE_PIPELINE_HPP_
#define POLFUSE_PIPELINE_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "polfuse/corpus.hpp"
#include "polfuse/embedder.hpp"
#include "polfuse/fusion_model.hpp"
#include "polfuse/psych.hpp"
#include "polfuse/selection.hpp"
#include "polfuse/sngram.hpp"

namespace polfuse {

// The eight compared systems: a bag-of-words reference, the pooled
// embedding baseline and the six channel subsets of the fusion model.
struct Variant {
  std::string name;
  ChannelSet channels;
  Architecture architecture = Architecture::kFusionCnn;
  bool reference = false;
};

Variant LookupVariant(const std::string& name);
const std::vector<std::string>& VariantNames();
inline constexpr const char* kReferenceVariant = "reference";

struct CorpusConfig {
  // "jsonl": labelled records; "brmoral": essays labelled from stance
  // scores; "govbr": raw tweets labelled from hashtags.
  std::string kind = "jsonl";
  std::filesystem::path source;
  // govbr
  std::filesystem::path reference;  // political news texts (JSONL with "text")
  std::set<std::string> supportive_tags;
  std::set<std::string> opposing_tags;
  double target_per_user = kDefaultTweetsPerUser;
  std::optional<double> threshold;
  std::size_t min_words = kMinTweetWords;
  // Balanced random sample of this many documents (0 = keep all).
  std::size_t sample_size = 0;
  // brmoral
  double scale_max = 4.0;
};

struct PsychConfig {
  Language language = Language::kEn;
  std::filesystem::path liwc;
  std::filesystem::path mrc;
  std::optional<std::size_t> expected_width;  // default: language preset
};

struct SelectionConfig {
  ScoreFunction score = ScoreFunction::kAnovaF;
  std::vector<std::size_t> grid;  // empty = default percentage grid
  std::optional<std::size_t> sngram_k;
  std::optional<std::size_t> psych_k;
  std::size_t folds = 3;
};

struct ExperimentConfig {
  std::filesystem::path config_path;
  std::string name;
  TaskSpec task;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  std::filesystem::path dataset;
  std::filesystem::path development;
  std::filesystem::path test;
  CorpusConfig corpus;
  std::vector<std::string> variants;
  EmbedderSpec embedder;
  int fine_tune_epochs = 0;
  ParserConfig parser;
  SngramOptions sngram;
  PsychConfig psych;
  SelectionConfig selection;
  ModelConfig model;
  double alpha = 0.05;
  int explain_repeats = 5;
  std::size_t explain_tail = 10;
  std::string explain_variant;
  std::filesystem::path output_dir;
  std::filesystem::path cache_dir;
  nlohmann::json source;  // the parsed document, for manifests
};

// Command-line overrides; empty fields leave the file's values alone.
struct ConfigOverrides {
  std::optional<std::string> task;
  std::optional<std::string> channels;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
};

std::string EmbeddingKey(const Document& doc);

// Relative paths resolve against the config file's directory. Unknown keys
// are rejected. The cache root is cache_dir, else $POLFUSE_CACHE_ROOT, else
// <output_dir>/cache.
ExperimentConfig ParseConfig(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                             const ConfigOverrides& overrides = {});
ExperimentConfig LoadConfig(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

// Loaded and processed features for one experiment.
struct FeatureSet {
  std::vector<std::string> dev_ids, test_ids;
  // Embedding cache keys: "<id>@<text hash>".
  std::vector<std::string> dev_keys, test_keys;
  std::vector<int> dev_labels, test_labels;
  EngineeredMatrix dev_sngram, test_sngram;
  EngineeredMatrix dev_psych, test_psych;
  std::size_t sngram_k = 0, psych_k = 0;

  EngineeredMatrix Engineered(ChannelSet channels, bool development) const;
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const { return config_; }

  void BuildCorpus();
  void ExtractFeatures();
  void Train();
  void Evaluate();
  void Explain();

  // Dispatches one of the command names above ("build-corpus", ...).
  void Run(const std::string& command);

  FeatureSet LoadFeatures() const;
  std::vector<TokenEmbeddingMatrix> LoadEmbeddings(std::span<const std::string> keys) const;
  EmbedderSpec ResolvedEmbedder() const;
  std::filesystem::path ModelDir(const std::string& variant) const;

 private:
  std::pair<LabeledDataset, LabeledDataset> LoadSplits() const;
  void TrainReference(const std::filesystem::path& dir) const;
  std::vector<int> PredictVariant(const std::string& variant, const FeatureSet& features,
                                  const LabeledDataset& test) const;

  ExperimentConfig config_;
};

// Groups every evaluated model of every experiment on their shared test
// set and writes comparison/ under out_dir.
void Compare(std::span<Experiment* const> experiments, const std::filesystem::path& out_dir);

}  // namespace polfuse

#endif  // POLFUSE_PIPELINE_HPP_
