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

// Classification metrics, paired significance tests, homogeneous model
// groups and permutation feature importance.

#ifndef POLFUSE_EVALUATION_HPP_
#define POLFUSE_EVALUATION_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "polfuse/selection.hpp"

namespace polfuse {

struct EvaluationReport {
  std::vector<std::string> class_set;
  std::size_t n = 0;
  double accuracy = 0;
  double macro_f1 = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  std::vector<double> precision;  // per class
  std::vector<double> recall;
  std::vector<double> f1;
  // confusion[gold][pred]
  std::vector<std::vector<std::size_t>> confusion;
};

// Per-class precision, recall and F1 use 0 for an empty denominator; macro
// scores are unweighted means over class_set.
EvaluationReport ComputeMetrics(std::span<const int> gold, std::span<const int> pred,
                                int num_classes);
EvaluationReport ComputeMetrics(std::span<const std::string> gold,
                                std::span<const std::string> pred,
                                const std::vector<std::string>& class_set);

nlohmann::json ReportToJson(const EvaluationReport& report);

struct PairedPredictions {
  std::vector<int> gold;
  std::vector<int> a;
  std::vector<int> b;
  int num_classes = 2;
};

struct SignificanceResult {
  std::string test_name;  // "mcnemar" or "stuart_maxwell"
  double statistic = 0;
  int df = 0;
  double p_value = 1;
  // McNemar discordant counts: A right / B wrong, A wrong / B right.
  std::size_t b = 0;
  std::size_t c = 0;
  bool exact = false;
};

// Upper tail of the chi-square distribution.
double ChiSquareSurvival(double x, double df);

struct McNemarOptions {
  // Use the exact two-sided binomial p-value when b + c < exact_below.
  bool exact_when_small = false;
  std::size_t exact_below = 25;
};

// Continuity-corrected: (max(|b - c| - 1, 0))^2 / (b + c), df 1. b + c = 0
// gives statistic 0 and p 1. Binary tasks only.
SignificanceResult McNemar(const PairedPredictions& paired, const McNemarOptions& options = {});
SignificanceResult McNemarCounts(std::size_t b, std::size_t c, const McNemarOptions& options = {});

// k x k table of (pred_A, pred_B) label counts.
Matrix AgreementTable(const PairedPredictions& paired);

// Marginal homogeneity of a k x k table: d = row sums - column sums over the
// first k - 1 categories, S_ii = r_i + c_i - 2 n_ii, S_ij = -(n_ij + n_ji),
// statistic d' S^+ d with df = rank(S).
SignificanceResult StuartMaxwellTable(const Matrix& table);
// Ternary (k >= 3) tasks only; the table is built over predicted labels.
SignificanceResult StuartMaxwell(const PairedPredictions& paired);

// McNemar for binary, Stuart-Maxwell otherwise.
SignificanceResult PairedTest(const PairedPredictions& paired);

// "χ = 5.161, α = 0.05, p < 0.05"
std::string FormatSignificance(const SignificanceResult& result, double alpha = 0.05);

struct ModelPredictions {
  std::string name;
  std::vector<int> predictions;
};

struct GroupedModel {
  std::string name;
  double accuracy = 0;
  std::string group;        // "A", "B", ...
  std::size_t group_index = 0;
  bool beats_reference = false;
};

struct HomogeneousGroups {
  std::vector<GroupedModel> models;  // accuracy descending
  Matrix p_values;                   // pairwise, in `models` order
  std::vector<SignificanceResult> tests;  // upper triangle, row-major
  std::string test_name;
  double alpha = 0.05;
  std::optional<std::string> reference;
  std::size_t num_groups = 0;
};

// Sorts by accuracy (ties keep input order), then greedily opens a group at
// the best unassigned model and extends it downwards while the next model is
// non-significant against every member.
HomogeneousGroups GroupModels(std::span<const ModelPredictions> models, std::span<const int> gold,
                              int num_classes, double alpha = 0.05,
                              std::optional<std::string> reference = std::nullopt);

std::string GroupName(std::size_t index);
// Model | Acc | one column per group letter.
std::string GroupsTable(const HomogeneousGroups& groups);
std::string PairwiseCsv(const HomogeneousGroups& groups);

struct FeatureImportance {
  std::string feature;
  std::size_t column = 0;
  double weight = 0;  // mean (base score - shuffled score)
  double stddev = 0;
};

struct ImportanceReport {
  double base_score = 0;
  int repeats = 0;
  std::uint64_t seed = 0;
  std::vector<FeatureImportance> features;  // weight descending
};

using ScoreFunctionCallback = std::function<double(const Matrix&)>;

// Shuffles each column `repeats` times with its own seeded stream and
// records the mean drop in score.
ImportanceReport PermutationImportance(const ScoreFunctionCallback& score, const Matrix& x,
                                       std::span<const std::string> names, int repeats = 5,
                                       std::uint64_t seed = 0);

// Two-tailed layout: the `tail` highest weights, "...", the `tail` lowest.
std::string ImportanceTable(const ImportanceReport& report, std::size_t tail = 10);
std::string ImportanceCsv(const ImportanceReport& report);

}  // namespace polfuse

#endif  // POLFUSE_EVALUATION_HPP_
