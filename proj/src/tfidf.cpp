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

#include "polfuse/tfidf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "polfuse/common.hpp"

namespace polfuse {
namespace {

constexpr const char* kMagic = "polfuse-tfidf";
constexpr int kFormatVersion = 1;

std::string HexFloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

void CheckField(const std::string& s, const char* what) {
  if (s.find_first_of("\t\n\r") != std::string::npos) {
    throw InvalidArgument(std::string("tfidf model: ") + what +
                          " contains a tab or newline: " + s);
  }
}

}  // namespace

double SparseFeatureVector::Norm() const {
  double sum = 0.0;
  for (double v : values) sum += v * v;
  return std::sqrt(sum);
}

std::vector<double> SparseFeatureVector::ToDense() const {
  std::vector<double> dense(dim, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) dense[indices[i]] = values[i];
  return dense;
}

TfidfModel TfidfModel::Fit(std::span<const TermBag> corpus) {
  if (corpus.empty()) throw InvalidArgument("tfidf fit: empty corpus");
  std::map<std::string, std::size_t> df;
  for (const TermBag& doc : corpus) {
    std::set<std::string_view> seen(doc.begin(), doc.end());
    for (std::string_view t : seen) ++df[std::string(t)];
  }
  TfidfModel model;
  model.fitted_ = true;
  model.num_documents_ = corpus.size();
  model.vocabulary_.reserve(df.size());
  model.idf_.reserve(df.size());
  const double n = static_cast<double>(corpus.size());
  for (const auto& [term, count] : df) {
    model.vocabulary_.push_back(term);
    model.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  model.BuildIndex();
  return model;
}

void TfidfModel::BuildIndex() {
  index_.clear();
  index_.reserve(vocabulary_.size());
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    index_.emplace(vocabulary_[i], static_cast<std::uint32_t>(i));
  }
}

std::int64_t TfidfModel::Column(const std::string& term) const {
  auto it = index_.find(term);
  return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

SparseFeatureVector TfidfModel::Transform(const TermBag& terms) const {
  if (!fitted_) throw InvalidArgument("tfidf transform: model is not fitted");
  std::map<std::uint32_t, double> counts;
  for (const std::string& t : terms) {
    auto it = index_.find(t);
    if (it != index_.end()) counts[it->second] += 1.0;
  }
  SparseFeatureVector out;
  out.dim = vocabulary_.size();
  out.indices.reserve(counts.size());
  out.values.reserve(counts.size());
  double norm2 = 0.0;
  for (const auto& [col, count] : counts) {
    const double v = count * idf_[col];
    out.indices.push_back(col);
    out.values.push_back(v);
    norm2 += v * v;
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : out.values) v *= inv;
  }
  return out;
}

SparseRows TfidfModel::TransformAll(std::span<const TermBag> docs) const {
  SparseRows rows;
  rows.dim = dim();
  rows.rows.reserve(docs.size());
  for (const TermBag& d : docs) rows.rows.push_back(Transform(d));
  return rows;
}

void TfidfModel::Save(const std::filesystem::path& path) const {
  if (!fitted_) throw InvalidArgument("tfidf save: model is not fitted");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << kMagic << ' ' << kFormatVersion << '\n';
  out << "documents " << num_documents_ << '\n';
  for (const auto& [key, value] : metadata_) {
    CheckField(key, "metadata key");
    CheckField(value, "metadata value");
    if (key.find(' ') != std::string::npos) {
      throw InvalidArgument("tfidf model: metadata key contains a space");
    }
    out << "meta " << key << '\t' << value << '\n';
  }
  out << "vocabulary " << vocabulary_.size() << '\n';
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    CheckField(vocabulary_[i], "term");
    out << HexFloat(idf_[i]) << '\t' << vocabulary_[i] << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

TfidfModel TfidfModel::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  auto fail = [&](std::size_t line, const std::string& why) {
    return DataError(path.string() + ":" + std::to_string(line) + ": " + why);
  };
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    return true;
  };

  if (!next()) throw fail(1, "empty file");
  {
    std::istringstream hdr(line);
    std::string magic;
    int version = 0;
    hdr >> magic >> version;
    if (magic != kMagic) throw fail(lineno, "not a tfidf model file");
    if (version != kFormatVersion) {
      throw fail(lineno, "unsupported format version " + std::to_string(version));
    }
  }
  TfidfModel model;
  if (!next() || line.rfind("documents ", 0) != 0) throw fail(lineno, "expected 'documents'");
  model.num_documents_ = std::stoull(line.substr(10));
  std::size_t vocab_size = 0;
  while (true) {
    if (!next()) throw fail(lineno, "missing 'vocabulary'");
    if (line.rfind("meta ", 0) == 0) {
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw fail(lineno, "malformed meta line");
      model.metadata_[line.substr(5, tab - 5)] = line.substr(tab + 1);
    } else if (line.rfind("vocabulary ", 0) == 0) {
      vocab_size = std::stoull(line.substr(11));
      break;
    } else {
      throw fail(lineno, "unexpected line");
    }
  }
  model.vocabulary_.reserve(vocab_size);
  model.idf_.reserve(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) {
    if (!next()) throw fail(lineno, "truncated vocabulary");
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw fail(lineno, "malformed vocabulary row");
    const std::string num = line.substr(0, tab);
    char* end = nullptr;
    const double idf = std::strtod(num.c_str(), &end);
    if (end == num.c_str() || *end != '\0') throw fail(lineno, "bad idf value");
    std::string term = line.substr(tab + 1);
    if (!model.vocabulary_.empty() && !(model.vocabulary_.back() < term)) {
      throw fail(lineno, "vocabulary is not strictly sorted");
    }
    model.vocabulary_.push_back(std::move(term));
    model.idf_.push_back(idf);
  }
  model.fitted_ = true;
  model.BuildIndex();
  return model;
}

bool TfidfModel::operator==(const TfidfModel& other) const {
  if (fitted_ != other.fitted_ || num_documents_ != other.num_documents_ ||
      vocabulary_ != other.vocabulary_ || metadata_ != other.metadata_ ||
      idf_.size() != other.idf_.size()) {
    return false;
  }
  // Bitwise comparison of the weights.
  for (std::size_t i = 0; i < idf_.size(); ++i) {
    if (std::memcmp(&idf_[i], &other.idf_[i], sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace polfuse
