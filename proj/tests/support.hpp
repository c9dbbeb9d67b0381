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

// Shared test helpers and the independent oracles the library is checked
// against. Nothing here calls into the code under test.

#ifndef POLFUSE_TESTS_SUPPORT_HPP_
#define POLFUSE_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef POLFUSE_SOURCE_DIR
#error "POLFUSE_SOURCE_DIR must be defined"
#endif

namespace testing {

inline std::filesystem::path SourceDir() { return POLFUSE_SOURCE_DIR; }
inline std::filesystem::path Fixture(const std::string& rel) {
  return SourceDir() / "tests" / "fixtures" / rel;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "polfuse") {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string ReadText(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------
// Metrics by brute force: per-class counts from a double loop over classes
// and items, no confusion matrix.

struct OracleMetrics {
  double accuracy = 0, macro_f1 = 0, macro_precision = 0, macro_recall = 0;
};

inline OracleMetrics MetricsOracle(const std::vector<int>& gold, const std::vector<int>& pred, int k) {
  OracleMetrics m;
  const double n = static_cast<double>(gold.size());
  double hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += gold[i] == pred[i] ? 1 : 0;
  m.accuracy = hits / n;
  for (int c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == c && gold[i] == c) tp += 1;
      if (pred[i] == c && gold[i] != c) fp += 1;
      if (pred[i] != c && gold[i] == c) fn += 1;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    m.macro_precision += p / k;
    m.macro_recall += r / k;
    m.macro_f1 += f / k;
  }
  return m;
}

// Closed-form chi-square upper tails for the degrees of freedom used here.
inline double ChiSquareTailDf1(double x) { return std::erfc(std::sqrt(x / 2.0)); }
inline double ChiSquareTailDf2(double x) { return std::exp(-x / 2.0); }

// McNemar straight from the definition.
struct OracleTest {
  double statistic = 0, p = 1;
};

inline OracleTest McNemarOracle(const std::vector<int>& gold, const std::vector<int>& a,
                                const std::vector<int>& b) {
  double nb = 0, nc = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool ra = a[i] == gold[i], rb = b[i] == gold[i];
    if (ra && !rb) nb += 1;
    if (!ra && rb) nc += 1;
  }
  if (nb + nc == 0) return {};
  const double d = std::max(std::abs(nb - nc) - 1.0, 0.0);
  const double s = d * d / (nb + nc);
  return {s, ChiSquareTailDf1(s)};
}

// Fleiss-Everitt closed form of the 3x3 Stuart-Maxwell statistic.
inline OracleTest FleissEveritt3(const double n[3][3]) {
  double row[3] = {0, 0, 0}, col[3] = {0, 0, 0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      row[i] += n[i][j];
      col[j] += n[i][j];
    }
  const double d1 = row[0] - col[0], d2 = row[1] - col[1], d3 = row[2] - col[2];
  const double m12 = (n[0][1] + n[1][0]) / 2, m13 = (n[0][2] + n[2][0]) / 2, m23 = (n[1][2] + n[2][1]) / 2;
  const double den = 2 * (m12 * m23 + m12 * m13 + m13 * m23);
  if (den == 0) return {};
  const double s = (m23 * d1 * d1 + m13 * d2 * d2 + m12 * d3 * d3) / den;
  return {s, ChiSquareTailDf2(s)};
}

// Smoothed TF-IDF, one document's L2-normalised vector keyed by term.
inline std::map<std::string, double> TfidfOracle(const std::vector<std::vector<std::string>>& corpus,
                                                 const std::vector<std::string>& doc) {
  const double n = static_cast<double>(corpus.size());
  std::map<std::string, double> out;
  for (const auto& t : doc) {
    double df = 0;
    for (const auto& d : corpus) {
      if (std::find(d.begin(), d.end(), t) != d.end()) df += 1;
    }
    if (df == 0) continue;  // unseen terms have no column
    out[t] += std::log((1 + n) / (1 + df)) + 1;
  }
  double norm = 0;
  for (const auto& [t, v] : out) norm += v * v;
  norm = std::sqrt(norm);
  for (auto& [t, v] : out) v /= norm;
  return out;
}

}  // namespace testing

#endif  // POLFUSE_TESTS_SUPPORT_HPP_
