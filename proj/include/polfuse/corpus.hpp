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

// Dataset schema, JSONL interchange, dev/test splitting and the two
// weak-labelling procedures (essay stance -> orientation, hashtag stance).

#ifndef POLFUSE_CORPUS_HPP_
#define POLFUSE_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "polfuse/tfidf.hpp"

namespace polfuse {

enum class Level { kText, kAuthor };
enum class Arity { kBinary, kTernary };

struct TaskSpec {
  std::string task_id;  // T1..T5
  Level level = Level::kText;
  Arity arity = Arity::kBinary;
  std::vector<std::string> class_set;

  // Index of `label` in class_set, or -1.
  int ClassIndex(std::string_view label) const;
  int num_classes() const { return static_cast<int>(class_set.size()); }
  // "T2" for binary tasks with a single arity, "T2-ternary" otherwise.
  std::string name() const;
};

// Registry of the five political-inference tasks. Accepts "T1".."T5" and,
// for the two-arity tasks, "T2-binary" / "T2-ternary" (bare "T2" = binary).
TaskSpec LookupTask(std::string_view name);
std::vector<std::string> TaskNames();

struct Document {
  std::string id;
  std::string text;
  std::optional<std::string> label;
  std::optional<std::string> group_key;
  std::optional<std::string> topic;
  // Ingestion metadata for raw records.
  std::optional<double> stance;
  bool is_retweet = false;
};

enum class SplitTag { kDevelopment, kTest, kUnsplit };
std::string_view SplitName(SplitTag tag);

struct LabeledDataset {
  TaskSpec task;
  std::vector<Document> documents;
  SplitTag split = SplitTag::kUnsplit;

  std::size_t size() const { return documents.size(); }
  // Class indices in document order; throws if a document is unlabelled.
  std::vector<int> LabelIndices() const;
};

// Reads raw records: every line must be a JSON object with string `id` and
// non-empty `text`. Errors carry the 1-based line number.
std::vector<Document> ReadDocuments(const std::filesystem::path& path);

// Reads and validates a labelled dataset. Unknown labels are rejected with
// the offending value. Duplicate ids are rejected.
LabeledDataset LoadJsonl(const std::filesystem::path& path,
                         const TaskSpec& task,
                         SplitTag split = SplitTag::kUnsplit);

void WriteJsonl(const std::filesystem::path& path,
                std::span<const Document> documents);

// Uniform, unstratified random partition. The first round(ratio * N)
// documents of a seeded shuffle form development; both halves keep the
// original relative order.
std::pair<LabeledDataset, LabeledDataset> SplitDevTest(
    const LabeledDataset& dataset, double ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Essay stance -> political orientation.

struct StanceScore {
  double value = 0.0;
  double scale_max = 4.0;  // scale is [0, scale_max]
  std::string topic;
};

bool IsLiberalTopic(std::string_view topic);
bool IsConservativeTopic(std::string_view topic);
const std::vector<std::string>& LiberalTopics();
const std::vector<std::string>& ConservativeTopics();

// Against a liberal topic or for a conservative one -> "right"; the mirror
// -> "left"; the exact scale midpoint -> "centre".
std::string OpinionLabel(const StanceScore& stance);

// ---------------------------------------------------------------------------
// Hashtag weak labelling and tweet cleaning.

enum class UserStance { kFor, kAgainst, kDiscard };
std::string_view UserStanceLabel(UserStance stance);

// Lowercased hashtags (with '#') in order of appearance.
std::vector<std::string> ExtractHashtags(std::string_view text);
std::string NormalizeHashtag(std::string_view tag);

UserStance AssignUserStance(std::span<const Document> user_tweets,
                            const std::set<std::string>& supportive_tags,
                            const std::set<std::string>& opposing_tags);

inline constexpr std::size_t kMinTweetWords = 5;

// Strips hashtags; rejects (nullopt) when fewer than five whitespace tokens
// remain.
std::optional<Document> CleanTweet(const Document& doc,
                                   std::size_t min_words = kMinTweetWords);

// Cosine similarity of a document to the centroid of a political-news
// reference corpus in a TF-IDF unigram space.
class PoliticalFilter {
 public:
  PoliticalFilter() = default;

  void Fit(std::span<const std::string> reference_texts);
  bool fitted() const { return model_.fitted(); }
  double Score(std::string_view text) const;
  bool Keep(std::string_view text, double threshold) const {
    return Score(text) >= threshold;
  }
  const TfidfModel& model() const { return model_; }

 private:
  TfidfModel model_;
  std::vector<double> centroid_;  // dense over the vocabulary
  double centroid_norm_ = 0.0;
};

inline constexpr double kDefaultTweetsPerUser = 25.0;

// Picks the similarity threshold whose mean retained tweets per user is
// closest to target. Ties go to the highest threshold when the target is
// met, and to the lowest (0) when even keeping everything falls short.
double CalibrateThreshold(
    const std::map<std::string, std::vector<double>>& user_scores,
    double target_per_user = kDefaultTweetsPerUser);

// ---------------------------------------------------------------------------
// Class distribution reports.

struct ClassCount {
  std::string label;
  std::size_t count = 0;
  double percent = 0.0;
};

std::vector<ClassCount> ClassDistribution(const LabeledDataset& dataset);

// CSV: set,class,count,percent ... plus one Total row per set.
std::string DistributionCsv(std::span<const LabeledDataset> sets);
// Fixed-width table: one row per set, "count (pct%)" per class, Total.
std::string DistributionTable(std::span<const LabeledDataset> sets);

}  // namespace polfuse

#endif  // POLFUSE_CORPUS_HPP_
