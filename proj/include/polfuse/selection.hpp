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

// Univariate feature selection, grid search for k and z-scoring of the
// engineered (sngram + psych) features.

#ifndef POLFUSE_SELECTION_HPP_
#define POLFUSE_SELECTION_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polfuse/tfidf.hpp"

namespace polfuse {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Dense engineered features with per-column provenance.
struct EngineeredMatrix {
  Matrix values;
  std::vector<std::string> column_names;  // "sngram:<bigram>", "liwc:<cat>", ...
  std::vector<std::string> channels;      // "sngram" or "psych" per column

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

// Column-wise concatenation; row counts must agree.
EngineeredMatrix ConcatColumns(const EngineeredMatrix& a, const EngineeredMatrix& b);

enum class ScoreFunction {
  kAnovaF,        // one-way ANOVA F statistic
  kUnivariateF1,  // macro-F1 of a one-feature nearest-class-mean classifier
};

ScoreFunction ParseScoreFunction(std::string_view name);
std::string_view ScoreFunctionName(ScoreFunction f);

// One-way ANOVA F per column. Constant columns score 0; columns with zero
// within-class variance and nonzero between-class variance score +inf.
std::vector<double> AnovaFScores(const SparseRows& x, std::span<const int> y, int num_classes);
std::vector<double> AnovaFScores(const Matrix& x, std::span<const int> y, int num_classes);

std::vector<double> UnivariateF1Scores(const SparseRows& x, std::span<const int> y, int num_classes);
std::vector<double> UnivariateF1Scores(const Matrix& x, std::span<const int> y, int num_classes);

class Selector {
 public:
  Selector() = default;
  // Keeps the k highest scores; ties go to the lower column index. The
  // selected indices are stored in ascending order.
  Selector(std::vector<double> scores, std::size_t k);

  const std::vector<double>& scores() const { return scores_; }
  const std::vector<std::size_t>& selected() const { return selected_; }
  std::size_t k() const { return selected_.size(); }
  std::size_t input_dim() const { return scores_.size(); }

  Matrix Apply(const SparseRows& x) const;
  Matrix Apply(const Matrix& x) const;
  std::vector<std::string> Apply(std::span<const std::string> names) const;

 private:
  std::vector<double> scores_;
  std::vector<std::size_t> selected_;
};

// Throws InvalidArgument when k is outside [1, columns] or fewer than two
// classes occur in y.
Selector FitSelector(const SparseRows& x, std::span<const int> y, int num_classes, std::size_t k,
                     ScoreFunction score = ScoreFunction::kAnovaF);
Selector FitSelector(const Matrix& x, std::span<const int> y, int num_classes, std::size_t k,
                     ScoreFunction score = ScoreFunction::kAnovaF);

// {1%, 5%, 10%, 25%, 50%, 100%} of dim, each at least 1, deduplicated.
std::vector<std::size_t> DefaultGrid(std::size_t dim);

// Argmax of evaluator over grid; ties -> smallest k. A k whose evaluation
// throws is skipped with a warning; if all fail the call throws.
std::size_t GridSearchK(std::span<const std::size_t> grid,
                        const std::function<double(std::size_t)>& evaluator);

// Per-column z-score with the population (ddof = 0) standard deviation.
class Standardizer {
 public:
  static Standardizer Fit(const Matrix& development);

  Matrix Apply(const Matrix& x) const;
  const Vector& mean() const { return mean_; }
  const Vector& stddev() const { return std_; }

  Standardizer() = default;
  Standardizer(Vector mean, Vector stddev) : mean_(std::move(mean)), std_(std::move(stddev)) {}

 private:
  Vector mean_;
  Vector std_;
};

}  // namespace polfuse

#endif  // POLFUSE_SELECTION_HPP_
