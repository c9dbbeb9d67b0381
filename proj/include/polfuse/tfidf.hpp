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

#ifndef POLFUSE_TFIDF_HPP_
#define POLFUSE_TFIDF_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace polfuse {

// A multiset of terms (order irrelevant, repeats count).
using TermBag = std::vector<std::string>;

struct SparseFeatureVector {
  std::size_t dim = 0;
  std::vector<std::uint32_t> indices;  // strictly increasing, < dim
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
  double Norm() const;
  std::vector<double> ToDense() const;
};

// Rows of sparse vectors sharing a dimensionality.
struct SparseRows {
  std::size_t dim = 0;
  std::vector<SparseFeatureVector> rows;

  std::size_t size() const { return rows.size(); }
};

// Term-frequency x smoothed-idf vector space with per-document L2
// normalisation:
//   idf(t) = ln((1 + N) / (1 + df(t))) + 1
//   value(t) = count(t) * idf(t), then scaled to unit norm.
// Vocabulary columns are sorted lexicographically (byte order).
class TfidfModel {
 public:
  TfidfModel() = default;

  static TfidfModel Fit(std::span<const TermBag> corpus);

  bool fitted() const { return fitted_; }
  std::size_t dim() const { return vocabulary_.size(); }
  std::size_t num_documents() const { return num_documents_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const std::vector<double>& idf() const { return idf_; }
  // -1 when absent.
  std::int64_t Column(const std::string& term) const;

  // Unseen terms are dropped.
  SparseFeatureVector Transform(const TermBag& terms) const;
  SparseRows TransformAll(std::span<const TermBag> docs) const;

  // Free-form fit metadata persisted with the model (adapter name, ...).
  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const {
    return metadata_;
  }

  // Versioned text format; idf weights are written as hex floats so a
  // save/load round trip is bit-exact.
  void Save(const std::filesystem::path& path) const;
  static TfidfModel Load(const std::filesystem::path& path);

  bool operator==(const TfidfModel& other) const;

 private:
  void BuildIndex();

  bool fitted_ = false;
  std::size_t num_documents_ = 0;
  std::vector<std::string> vocabulary_;
  std::vector<double> idf_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace polfuse

#endif  // POLFUSE_TFIDF_HPP_
