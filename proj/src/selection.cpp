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

#include "polfuse/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "polfuse/common.hpp"

namespace polfuse {
namespace {

// Uniform row access: fn(col, value) for each stored entry of row r.
struct SparseAccess {
  const SparseRows& x;
  std::size_t rows() const { return x.rows.size(); }
  std::size_t cols() const { return x.dim; }
  template <typename Fn>
  void ForEach(std::size_t r, Fn&& fn) const {
    const auto& row = x.rows[r];
    for (std::size_t i = 0; i < row.nnz(); ++i) fn(row.indices[i], row.values[i]);
  }
};

struct DenseAccess {
  const Matrix& x;
  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }
  template <typename Fn>
  void ForEach(std::size_t r, Fn&& fn) const {
    for (Eigen::Index c = 0; c < x.cols(); ++c) fn(static_cast<std::size_t>(c), x(static_cast<Eigen::Index>(r), c));
  }
};

void CheckLabels(std::size_t rows, std::span<const int> y, int num_classes) {
  if (y.size() != rows) throw InvalidArgument("label count does not match row count");
  if (num_classes < 2) throw InvalidArgument("feature scoring needs at least two classes");
  for (int v : y) {
    if (v < 0 || v >= num_classes) throw InvalidArgument("label index out of range");
  }
}

template <typename Access>
std::vector<double> AnovaImpl(const Access& x, std::span<const int> y, int num_classes) {
  CheckLabels(x.rows(), y, num_classes);
  const std::size_t d = x.cols();
  const auto g = static_cast<std::size_t>(num_classes);
  std::vector<double> n_class(g, 0.0);
  for (int v : y) n_class[static_cast<std::size_t>(v)] += 1.0;

  // Column-major per-class accumulators: index col * g + class.
  std::vector<double> sum(d * g, 0.0);
  std::vector<double> nnz(d * g, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto cls = static_cast<std::size_t>(y[r]);
    x.ForEach(r, [&](std::size_t c, double v) {
      sum[c * g + cls] += v;
      nnz[c * g + cls] += 1.0;
    });
  }
  std::vector<double> mean(d * g, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t k = 0; k < g; ++k) {
      if (n_class[k] > 0) mean[c * g + k] = sum[c * g + k] / n_class[k];
    }
  }
  std::vector<double> ssw(d, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto cls = static_cast<std::size_t>(y[r]);
    x.ForEach(r, [&](std::size_t c, double v) {
      const double dev = v - mean[c * g + cls];
      ssw[c] += dev * dev;
    });
  }
  std::size_t present = 0;
  for (double n : n_class) present += n > 0 ? 1 : 0;
  const double total_n = static_cast<double>(x.rows());

  std::vector<double> scores(d, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double grand = 0.0;
    for (std::size_t k = 0; k < g; ++k) grand += sum[c * g + k];
    grand /= total_n;
    double ssb = 0.0;
    for (std::size_t k = 0; k < g; ++k) {
      if (n_class[k] == 0) continue;
      const double m = mean[c * g + k];
      ssw[c] += (n_class[k] - nnz[c * g + k]) * m * m;  // implicit zeros
      ssb += n_class[k] * (m - grand) * (m - grand);
    }
    const double total = ssb + ssw[c];
    if (!(total > 0.0) || present < 2) {
      scores[c] = 0.0;
    } else if (ssw[c] <= 1e-12 * total) {
      scores[c] = INFINITY;
    } else {
      const double df_between = static_cast<double>(present - 1);
      const double df_within = total_n - static_cast<double>(present);
      scores[c] = df_within > 0 ? (ssb / df_between) / (ssw[c] / df_within) : INFINITY;
    }
  }
  return scores;
}

double MacroF1(const std::vector<std::size_t>& tp, const std::vector<std::size_t>& fp,
               const std::vector<std::size_t>& fn) {
  double total = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    const double p = tp[k] + fp[k] ? static_cast<double>(tp[k]) / static_cast<double>(tp[k] + fp[k]) : 0.0;
    const double r = tp[k] + fn[k] ? static_cast<double>(tp[k]) / static_cast<double>(tp[k] + fn[k]) : 0.0;
    total += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  return total / static_cast<double>(tp.size());
}

template <typename Access>
std::vector<double> UnivariateF1Impl(const Access& x, std::span<const int> y, int num_classes) {
  CheckLabels(x.rows(), y, num_classes);
  const std::size_t d = x.cols();
  const auto g = static_cast<std::size_t>(num_classes);
  std::vector<double> n_class(g, 0.0);
  for (int v : y) n_class[static_cast<std::size_t>(v)] += 1.0;

  // Per column: list of (row, value) for stored entries.
  std::vector<std::vector<std::pair<std::size_t, double>>> columns(d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    x.ForEach(r, [&](std::size_t c, double v) { columns[c].emplace_back(r, v); });
  }
  auto nearest = [&](const std::vector<double>& means, double v) {
    std::size_t best = 0;
    double best_dist = INFINITY;
    for (std::size_t k = 0; k < g; ++k) {
      if (n_class[k] == 0) continue;
      const double dist = std::abs(v - means[k]);
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    return best;
  };

  std::vector<double> scores(d, 0.0);
  std::vector<double> means(g);
  std::vector<int> pred(x.rows());
  for (std::size_t c = 0; c < d; ++c) {
    std::fill(means.begin(), means.end(), 0.0);
    for (const auto& [r, v] : columns[c]) means[static_cast<std::size_t>(y[r])] += v;
    for (std::size_t k = 0; k < g; ++k) {
      if (n_class[k] > 0) means[k] /= n_class[k];
    }
    const auto zero_pred = static_cast<int>(nearest(means, 0.0));
    std::fill(pred.begin(), pred.end(), zero_pred);
    for (const auto& [r, v] : columns[c]) pred[r] = static_cast<int>(nearest(means, v));
    std::vector<std::size_t> tp(g, 0), fp(g, 0), fn(g, 0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto gold = static_cast<std::size_t>(y[r]);
      const auto p = static_cast<std::size_t>(pred[r]);
      if (gold == p) {
        ++tp[gold];
      } else {
        ++fp[p];
        ++fn[gold];
      }
    }
    scores[c] = MacroF1(tp, fp, fn);
  }
  return scores;
}

void CheckSelectable(std::size_t cols, std::span<const int> y, std::size_t k) {
  if (k < 1 || k > cols) {
    throw InvalidArgument("k = " + std::to_string(k) + " is outside [1, " + std::to_string(cols) + "]");
  }
  std::set<int> distinct(y.begin(), y.end());
  if (distinct.size() < 2) throw InvalidArgument("feature selection needs at least two classes in y");
}

}  // namespace

EngineeredMatrix ConcatColumns(const EngineeredMatrix& a, const EngineeredMatrix& b) {
  if (a.cols() == 0) return b;
  if (b.cols() == 0) return a;
  if (a.rows() != b.rows()) throw InvalidArgument("engineered blocks have different row counts");
  EngineeredMatrix out;
  out.values.resize(a.values.rows(), a.values.cols() + b.values.cols());
  out.values << a.values, b.values;
  out.column_names = a.column_names;
  out.column_names.insert(out.column_names.end(), b.column_names.begin(), b.column_names.end());
  out.channels = a.channels;
  out.channels.insert(out.channels.end(), b.channels.begin(), b.channels.end());
  return out;
}

ScoreFunction ParseScoreFunction(std::string_view name) {
  if (name == "anova_f") return ScoreFunction::kAnovaF;
  if (name == "univariate_f1") return ScoreFunction::kUnivariateF1;
  throw ConfigError("unknown selection score '" + std::string(name) + "' (anova_f, univariate_f1)");
}

std::string_view ScoreFunctionName(ScoreFunction f) {
  return f == ScoreFunction::kAnovaF ? "anova_f" : "univariate_f1";
}

std::vector<double> AnovaFScores(const SparseRows& x, std::span<const int> y, int num_classes) {
  return AnovaImpl(SparseAccess{x}, y, num_classes);
}
std::vector<double> AnovaFScores(const Matrix& x, std::span<const int> y, int num_classes) {
  return AnovaImpl(DenseAccess{x}, y, num_classes);
}
std::vector<double> UnivariateF1Scores(const SparseRows& x, std::span<const int> y, int num_classes) {
  return UnivariateF1Impl(SparseAccess{x}, y, num_classes);
}
std::vector<double> UnivariateF1Scores(const Matrix& x, std::span<const int> y, int num_classes) {
  return UnivariateF1Impl(DenseAccess{x}, y, num_classes);
}

Selector::Selector(std::vector<double> scores, std::size_t k) : scores_(std::move(scores)) {
  if (k < 1 || k > scores_.size()) throw InvalidArgument("selector: k out of range");
  std::vector<std::size_t> order(scores_.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores_[a] > scores_[b]; });
  selected_.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(selected_.begin(), selected_.end());
}

Matrix Selector::Apply(const SparseRows& x) const {
  if (x.dim != scores_.size()) throw InvalidArgument("selector: input dimensionality mismatch");
  std::vector<long> position(scores_.size(), -1);
  for (std::size_t j = 0; j < selected_.size(); ++j) position[selected_[j]] = static_cast<long>(j);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(k()));
  for (std::size_t r = 0; r < x.size(); ++r) {
    const auto& row = x.rows[r];
    for (std::size_t i = 0; i < row.nnz(); ++i) {
      const long p = position[row.indices[i]];
      if (p >= 0) out(static_cast<Eigen::Index>(r), p) = row.values[i];
    }
  }
  return out;
}

Matrix Selector::Apply(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != scores_.size()) {
    throw InvalidArgument("selector: input dimensionality mismatch");
  }
  Matrix out(x.rows(), static_cast<Eigen::Index>(k()));
  for (std::size_t j = 0; j < selected_.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(selected_[j]));
  }
  return out;
}

std::vector<std::string> Selector::Apply(std::span<const std::string> names) const {
  if (names.size() != scores_.size()) throw InvalidArgument("selector: name count mismatch");
  std::vector<std::string> out;
  out.reserve(selected_.size());
  for (std::size_t c : selected_) out.push_back(names[c]);
  return out;
}

Selector FitSelector(const SparseRows& x, std::span<const int> y, int num_classes, std::size_t k,
                     ScoreFunction score) {
  CheckSelectable(x.dim, y, k);
  return Selector(score == ScoreFunction::kAnovaF ? AnovaFScores(x, y, num_classes)
                                                  : UnivariateF1Scores(x, y, num_classes),
                  k);
}

Selector FitSelector(const Matrix& x, std::span<const int> y, int num_classes, std::size_t k,
                     ScoreFunction score) {
  CheckSelectable(static_cast<std::size_t>(x.cols()), y, k);
  return Selector(score == ScoreFunction::kAnovaF ? AnovaFScores(x, y, num_classes)
                                                  : UnivariateF1Scores(x, y, num_classes),
                  k);
}

std::vector<std::size_t> DefaultGrid(std::size_t dim) {
  if (dim == 0) return {};
  std::vector<std::size_t> grid;
  for (double f : {0.01, 0.05, 0.10, 0.25, 0.50, 1.0}) {
    grid.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(dim)))));
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

std::size_t GridSearchK(std::span<const std::size_t> grid,
                        const std::function<double(std::size_t)>& evaluator) {
  if (grid.empty()) throw InvalidArgument("grid search: empty grid");
  std::vector<std::size_t> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  bool any = false;
  std::size_t best_k = 0;
  double best = -INFINITY;
  std::string last_error;
  for (std::size_t k : sorted) {
    double score;
    try {
      score = evaluator(k);
    } catch (const std::exception& e) {
      Warn("grid search: k = " + std::to_string(k) + " skipped: " + e.what());
      last_error = e.what();
      continue;
    }
    if (std::isnan(score)) {
      Warn("grid search: k = " + std::to_string(k) + " skipped: evaluator returned NaN");
      continue;
    }
    if (!any || score > best) {
      best = score;
      best_k = k;
      any = true;
    }
  }
  if (!any) throw NumericalError("grid search: every k failed to evaluate (" + last_error + ")");
  return best_k;
}

Standardizer Standardizer::Fit(const Matrix& development) {
  if (development.rows() == 0 || development.cols() == 0) {
    throw InvalidArgument("standardizer: empty matrix");
  }
  Vector mean = development.colwise().mean().transpose();
  Vector stddev(development.cols());
  for (Eigen::Index c = 0; c < development.cols(); ++c) {
    const double var = (development.col(c).array() - mean(c)).square().mean();
    stddev(c) = std::sqrt(var);
    // Rounding noise on a constant column is not spread.
    if (stddev(c) <= 1e-12 * std::max(1.0, std::abs(mean(c)))) stddev(c) = 0.0;
  }
  return Standardizer(std::move(mean), std::move(stddev));
}

Matrix Standardizer::Apply(const Matrix& x) const {
  if (x.cols() != mean_.size()) throw InvalidArgument("standardizer: column count mismatch");
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    if (std_(c) > 0.0) {
      out.col(c) = (x.col(c).array() - mean_(c)) / std_(c);
    } else {
      out.col(c).setZero();
    }
  }
  return out;
}

}  // namespace polfuse
