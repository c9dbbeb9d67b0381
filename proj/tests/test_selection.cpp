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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "polfuse/common.hpp"
#include "polfuse/selection.hpp"

using namespace polfuse;

namespace {

// One-way ANOVA F of a single column, written out from group sums.
double AnovaOracle(const std::vector<double>& x, const std::vector<int>& y, int k) {
  const double n = static_cast<double>(x.size());
  double grand = 0;
  for (double v : x) grand += v;
  grand /= n;
  double ssb = 0, ssw = 0;
  int groups = 0;
  for (int c = 0; c < k; ++c) {
    double s = 0, m = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (y[i] == c) {
        s += x[i];
        m += 1;
      }
    if (m == 0) continue;
    ++groups;
    const double mean = s / m;
    ssb += m * (mean - grand) * (mean - grand);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (y[i] == c) ssw += (x[i] - mean) * (x[i] - mean);
  }
  return (ssb / (groups - 1)) / (ssw / (n - groups));
}

struct Planted {
  Matrix x;
  std::vector<int> y;
  std::size_t column;
};

Planted PlantedMatrix(std::uint64_t seed, std::size_t rows, std::size_t cols) {
  Rng rng(seed);
  Planted p{Matrix(rows, cols), std::vector<int>(rows), rng.Below(cols)};
  for (std::size_t i = 0; i < rows; ++i) {
    p.y[i] = static_cast<int>(i % 2);
    for (std::size_t j = 0; j < cols; ++j) p.x(i, j) = rng.Normal();
    p.x(i, p.column) = p.y[i] + 0.05 * rng.Normal();
  }
  return p;
}

}  // namespace

TEST_SUITE("selection") {

TEST_CASE("anova scores match the oracle") {
  Rng rng(3);
  Matrix x(30, 4);
  std::vector<int> y(30);
  for (int i = 0; i < 30; ++i) {
    y[i] = i % 3;
    for (int j = 0; j < 4; ++j) x(i, j) = rng.Normal() + (j == 2 ? y[i] : 0);
  }
  const std::vector<double> s = AnovaFScores(x, y, 3);
  for (int j = 0; j < 4; ++j) {
    std::vector<double> col(30);
    for (int i = 0; i < 30; ++i) col[i] = x(i, j);
    CHECK(s[j] == doctest::Approx(AnovaOracle(col, y, 3)).epsilon(1e-10));
  }
  // Sparse and dense agree.
  SparseRows sp;
  sp.dim = 4;
  for (int i = 0; i < 30; ++i) {
    SparseFeatureVector v;
    v.dim = 4;
    for (int j = 0; j < 4; ++j) {
      v.indices.push_back(j);
      v.values.push_back(x(i, j));
    }
    sp.rows.push_back(v);
  }
  const std::vector<double> t = AnovaFScores(sp, y, 3);
  for (int j = 0; j < 4; ++j) CHECK(t[j] == doctest::Approx(s[j]).epsilon(1e-10));
}

TEST_CASE("constant column scores zero") {
  Matrix x(6, 2);
  std::vector<int> y = {0, 0, 0, 1, 1, 1};
  for (int i = 0; i < 6; ++i) {
    x(i, 0) = 5.0;
    x(i, 1) = y[i] + 0.1 * (i % 2);
  }
  const std::vector<double> s = AnovaFScores(x, y, 2);
  CHECK(s[0] == 0.0);
  CHECK(s[1] > 0.0);
  CHECK(FitSelector(x, y, 2, 1).selected() == std::vector<std::size_t>{1});
}

TEST_CASE("label column beats noise") {
  // A = label indicator, B = noise uncorrelated with the label.
  Matrix x(4, 2);
  x << 0, 1, 0, 2, 1, 1, 1, 2;
  std::vector<int> y = {0, 0, 1, 1};
  const std::vector<double> s = AnovaFScores(x, y, 2);
  CHECK(std::isinf(s[0]));
  CHECK(s[1] == 0.0);
  const Selector sel = FitSelector(x, y, 2, 1);
  CHECK(sel.selected() == std::vector<std::size_t>{0});
  const Selector all = FitSelector(x, y, 2, 2);
  CHECK(all.selected() == std::vector<std::size_t>{0, 1});
  CHECK(all.Apply(x) == x);
}

TEST_CASE("ties go to the lower index") {
  const Selector s({1.0, 3.0, 3.0, 2.0}, 2);
  CHECK(s.selected() == std::vector<std::size_t>{1, 2});
  const Selector t({3.0, 1.0, 3.0, 3.0}, 2);
  CHECK(t.selected() == std::vector<std::size_t>{0, 2});
}

TEST_CASE("selector errors") {
  Matrix x = Matrix::Ones(4, 3);
  std::vector<int> y = {0, 1, 0, 1};
  CHECK_THROWS_AS(FitSelector(x, y, 2, 0), Error);
  CHECK_THROWS_AS(FitSelector(x, y, 2, 4), Error);
  std::vector<int> single = {1, 1, 1, 1};
  CHECK_THROWS_AS(FitSelector(x, single, 2, 1), Error);
}

TEST_CASE("selector is invariant to row order") {
  Planted p = PlantedMatrix(9, 40, 12);
  const Selector a = FitSelector(p.x, p.y, 2, 4);
  std::vector<int> order(40);
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  Matrix xr(40, 12);
  std::vector<int> yr(40);
  for (int i = 0; i < 40; ++i) {
    xr.row(i) = p.x.row(order[i]);
    yr[i] = p.y[order[i]];
  }
  CHECK(FitSelector(xr, yr, 2, 4).selected() == a.selected());
}

TEST_CASE("planted column is selected") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Planted p = PlantedMatrix(seed, 60, 30);
    for (std::size_t k : {1u, 3u, 10u}) {
      const Selector s = FitSelector(p.x, p.y, 2, k);
      CHECK(std::find(s.selected().begin(), s.selected().end(), p.column) != s.selected().end());
    }
  }
}

TEST_CASE("default grid") {
  CHECK(DefaultGrid(1000) == std::vector<std::size_t>{10, 50, 100, 250, 500, 1000});
  CHECK(DefaultGrid(10) == std::vector<std::size_t>{1, 3, 5, 10});
  CHECK(DefaultGrid(1) == std::vector<std::size_t>{1});
}

TEST_CASE("grid search") {
  const std::vector<std::size_t> grid = {1, 5, 10, 25};
  CHECK(GridSearchK(grid, [](std::size_t) { return 0.7; }) == 1);
  const std::vector<std::size_t> single = {7};
  CHECK(GridSearchK(single, [](std::size_t) { return 0.1; }) == 7);

  // Evaluator = planted informative columns retained, minus a tiny size
  // penalty; the best k is the planted count.
  Rng rng(2);
  Matrix x(80, 40);
  std::vector<int> y(80);
  const std::vector<std::size_t> planted = {3, 11, 17, 29, 33};
  for (int i = 0; i < 80; ++i) {
    y[i] = i % 2;
    for (int j = 0; j < 40; ++j) x(i, j) = rng.Normal();
    for (std::size_t j : planted) x(i, j) = 3.0 * y[i] + 0.2 * rng.Normal();
  }
  auto eval = [&](std::size_t k) {
    const Selector s = FitSelector(x, y, 2, k);
    double hits = 0;
    for (std::size_t j : planted)
      hits += std::count(s.selected().begin(), s.selected().end(), j) ? 1.0 : 0.0;
    return hits - 1e-3 * static_cast<double>(k);
  };
  const std::vector<std::size_t> ks = {1, 2, 3, 4, 5, 6, 8, 10, 20, 40};
  CHECK(GridSearchK(ks, eval) == planted.size());

  std::vector<std::string> warnings;
  SetWarningSink([&](std::string_view m) { warnings.emplace_back(m); });
  const std::size_t best = GridSearchK(grid, [](std::size_t k) {
    if (k == 1) throw std::runtime_error("boom");
    return k == 10 ? 1.0 : 0.0;
  });
  SetWarningSink(nullptr);
  CHECK(best == 10);
  CHECK(warnings.size() == 1);
  CHECK_THROWS(GridSearchK(grid, [](std::size_t) -> double { throw std::runtime_error("x"); }));
  CHECK_THROWS(GridSearchK(std::vector<std::size_t>{}, [](std::size_t) { return 0.0; }));
}

TEST_CASE("standardizer") {
  Matrix x(2, 2);
  x << 1, 4, 3, 4;
  const Standardizer s = Standardizer::Fit(x);
  CHECK(s.mean()(0) == 2.0);
  CHECK(s.stddev()(0) == 1.0);
  const Matrix z = s.Apply(x);
  CHECK(z(0, 0) == -1.0);
  CHECK(z(1, 0) == 1.0);
  CHECK(z(0, 1) == 0.0);
  CHECK(z(1, 1) == 0.0);
  CHECK_THROWS_AS(Standardizer::Fit(Matrix(0, 3)), Error);
}

TEST_CASE("standardised development columns") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Matrix x(50, 8);
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 8; ++j) x(i, j) = j == 5 ? 2.5 : 100.0 * rng.Normal() + 7.0 * j;
    const Matrix z = Standardizer::Fit(x).Apply(x);
    for (int j = 0; j < 8; ++j) {
      const double m = z.col(j).mean();
      const double sd = std::sqrt((z.col(j).array() - m).square().mean());
      CHECK(std::abs(m) < 1e-9);
      if (j == 5) {
        CHECK(sd == 0.0);
      } else {
        CHECK(std::abs(sd - 1.0) < 1e-9);
      }
    }
  }
}

}  // TEST_SUITE
