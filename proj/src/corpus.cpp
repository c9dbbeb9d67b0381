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

#include "polfuse/corpus.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "polfuse/common.hpp"
#include "polfuse/text.hpp"

namespace polfuse {
namespace {

using nlohmann::json;

std::vector<TaskSpec> BuildRegistry() {
  const std::vector<std::string> hp = {"hyperpartisan", "neutral"};
  const std::vector<std::string> lr = {"left", "right"};
  const std::vector<std::string> lcr = {"left", "centre", "right"};
  return {
      {"T1", Level::kText, Arity::kBinary, hp},
      {"T2", Level::kText, Arity::kBinary, lr},
      {"T2", Level::kText, Arity::kTernary, lcr},
      {"T3", Level::kAuthor, Arity::kBinary, hp},
      {"T4", Level::kAuthor, Arity::kBinary, lr},
      {"T4", Level::kAuthor, Arity::kTernary, lcr},
      {"T5", Level::kAuthor, Arity::kBinary, {"against", "for"}},
  };
}

const std::vector<TaskSpec>& Registry() {
  static const std::vector<TaskSpec> registry = BuildRegistry();
  return registry;
}

bool HasTwoArities(std::string_view id) { return id == "T2" || id == "T4"; }

std::optional<std::string> OptionalString(const json& obj, const char* key,
                                          std::size_t lineno) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw DataError("line " + std::to_string(lineno) + ": field '" + key +
                    "' must be a string");
  }
  return it->get<std::string>();
}

Document ParseRecord(const std::string& line, std::size_t lineno) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError("line " + std::to_string(lineno) + ": malformed JSON: " +
                    e.what());
  }
  if (!obj.is_object()) {
    throw DataError("line " + std::to_string(lineno) + ": expected a JSON object");
  }
  Document doc;
  auto id = OptionalString(obj, "id", lineno);
  auto text = OptionalString(obj, "text", lineno);
  if (!id) throw DataError("line " + std::to_string(lineno) + ": missing 'id'");
  if (!text) throw DataError("line " + std::to_string(lineno) + ": missing 'text'");
  doc.id = *id;
  doc.text = *text;
  if (SplitWhitespace(doc.text).empty()) {
    throw DataError("line " + std::to_string(lineno) + ": empty 'text' for id " + doc.id);
  }
  doc.label = OptionalString(obj, "label", lineno);
  doc.group_key = OptionalString(obj, "group_key", lineno);
  doc.topic = OptionalString(obj, "topic", lineno);
  if (auto it = obj.find("stance"); it != obj.end() && !it->is_null()) {
    if (!it->is_number()) {
      throw DataError("line " + std::to_string(lineno) + ": 'stance' must be numeric");
    }
    doc.stance = it->get<double>();
  }
  if (auto it = obj.find("is_retweet"); it != obj.end() && !it->is_null()) {
    if (!it->is_boolean()) {
      throw DataError("line " + std::to_string(lineno) + ": 'is_retweet' must be boolean");
    }
    doc.is_retweet = it->get<bool>();
  }
  return doc;
}

const std::vector<std::string> kLiberal = {"same-sex marriage", "abortion",
                                           "drug legalisation", "racial quotas"};
const std::vector<std::string> kConservative = {
    "death penalty", "gun possession", "lowering of criminal age",
    "tax exemptions for churches"};

std::string NormalizeTopic(std::string_view topic) {
  std::string t = ToLower(topic);
  std::replace(t.begin(), t.end(), '_', ' ');
  // Accept the American spelling used by some exports.
  if (t == "drug legalization") t = "drug legalisation";
  return t;
}

std::string FormatPercent(double pct) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << pct;
  return os.str();
}

}  // namespace

int TaskSpec::ClassIndex(std::string_view label) const {
  for (std::size_t i = 0; i < class_set.size(); ++i) {
    if (class_set[i] == label) return static_cast<int>(i);
  }
  return -1;
}

std::string TaskSpec::name() const {
  if (!HasTwoArities(task_id)) return task_id;
  return task_id + (arity == Arity::kTernary ? "-ternary" : "-binary");
}

TaskSpec LookupTask(std::string_view name) {
  std::string id(name);
  Arity arity = Arity::kBinary;
  if (auto dash = id.find('-'); dash != std::string::npos) {
    const std::string suffix = id.substr(dash + 1);
    id = id.substr(0, dash);
    if (suffix == "ternary") {
      arity = Arity::kTernary;
    } else if (suffix != "binary") {
      throw ConfigError("unknown task arity '" + suffix + "' in " + std::string(name));
    }
  }
  for (const TaskSpec& t : Registry()) {
    if (t.task_id == id && t.arity == arity) return t;
  }
  throw ConfigError("unknown task '" + std::string(name) + "' (known: T1, T2-binary, " +
                    "T2-ternary, T3, T4-binary, T4-ternary, T5)");
}

std::vector<std::string> TaskNames() {
  std::vector<std::string> names;
  for (const TaskSpec& t : Registry()) names.push_back(t.name());
  return names;
}

std::string_view SplitName(SplitTag tag) {
  switch (tag) {
    case SplitTag::kDevelopment:
      return "development";
    case SplitTag::kTest:
      return "test";
    case SplitTag::kUnsplit:
      break;
  }
  return "unsplit";
}

std::vector<int> LabeledDataset::LabelIndices() const {
  std::vector<int> y;
  y.reserve(documents.size());
  for (const Document& d : documents) {
    if (!d.label) throw DataError("document " + d.id + " has no label");
    const int idx = task.ClassIndex(*d.label);
    if (idx < 0) throw DataError("document " + d.id + " has unknown label '" + *d.label + "'");
    y.push_back(idx);
  }
  return y;
}

std::vector<Document> ReadDocuments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      docs.push_back(ParseRecord(line, lineno));
    } catch (const Error& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return docs;
}

LabeledDataset LoadJsonl(const std::filesystem::path& path, const TaskSpec& task,
                         SplitTag split) {
  LabeledDataset ds;
  ds.task = task;
  ds.split = split;
  ds.documents = ReadDocuments(path);
  std::unordered_set<std::string> ids;
  for (const Document& d : ds.documents) {
    if (!ids.insert(d.id).second) {
      throw DataError(path.string() + ": duplicate id '" + d.id + "'");
    }
    if (d.label && task.ClassIndex(*d.label) < 0) {
      std::string known;
      for (const auto& c : task.class_set) known += (known.empty() ? "" : ", ") + c;
      throw DataError(path.string() + ": document " + d.id + " has label '" + *d.label +
                      "' which is not in the " + task.name() + " class set {" + known + "}");
    }
  }
  return ds;
}

void WriteJsonl(const std::filesystem::path& path, std::span<const Document> documents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const Document& d : documents) {
    json obj = {{"id", d.id}, {"text", d.text}};
    if (d.label) obj["label"] = *d.label;
    if (d.group_key) obj["group_key"] = *d.group_key;
    if (d.topic) obj["topic"] = *d.topic;
    if (d.stance) obj["stance"] = *d.stance;
    if (d.is_retweet) obj["is_retweet"] = true;
    out << obj.dump() << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

std::pair<LabeledDataset, LabeledDataset> SplitDevTest(const LabeledDataset& dataset,
                                                       double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw InvalidArgument("split ratio must be in (0, 1)");
  }
  if (dataset.split != SplitTag::kUnsplit) {
    throw InvalidArgument("dataset is already split");
  }
  if (dataset.documents.empty()) throw DataError("cannot split an empty dataset");

  const std::size_t n = dataset.documents.size();
  const auto n_dev = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(DeriveSeed(seed, "split"));
  rng.Shuffle(std::span<std::size_t>(order));

  std::vector<char> in_dev(n, 0);
  for (std::size_t i = 0; i < n_dev; ++i) in_dev[order[i]] = 1;

  LabeledDataset dev{dataset.task, {}, SplitTag::kDevelopment};
  LabeledDataset test{dataset.task, {}, SplitTag::kTest};
  dev.documents.reserve(n_dev);
  test.documents.reserve(n - n_dev);
  for (std::size_t i = 0; i < n; ++i) {
    (in_dev[i] ? dev : test).documents.push_back(dataset.documents[i]);
  }
  return {std::move(dev), std::move(test)};
}

const std::vector<std::string>& LiberalTopics() { return kLiberal; }
const std::vector<std::string>& ConservativeTopics() { return kConservative; }

bool IsLiberalTopic(std::string_view topic) {
  const std::string t = NormalizeTopic(topic);
  return std::find(kLiberal.begin(), kLiberal.end(), t) != kLiberal.end();
}

bool IsConservativeTopic(std::string_view topic) {
  const std::string t = NormalizeTopic(topic);
  return std::find(kConservative.begin(), kConservative.end(), t) != kConservative.end();
}

std::string OpinionLabel(const StanceScore& stance) {
  if (!(stance.scale_max > 0.0)) throw InvalidArgument("stance scale_max must be positive");
  if (stance.value < 0.0 || stance.value > stance.scale_max) {
    throw InvalidArgument("stance value outside [0, " + std::to_string(stance.scale_max) + "]");
  }
  const bool liberal = IsLiberalTopic(stance.topic);
  if (!liberal && !IsConservativeTopic(stance.topic)) {
    throw InvalidArgument("unknown essay topic '" + stance.topic + "'");
  }
  const double mid = stance.scale_max / 2.0;
  if (stance.value == mid) return "centre";
  const bool in_favour = stance.value > mid;
  return (in_favour == liberal) ? "left" : "right";
}

std::string_view UserStanceLabel(UserStance stance) {
  switch (stance) {
    case UserStance::kFor:
      return "for";
    case UserStance::kAgainst:
      return "against";
    case UserStance::kDiscard:
      break;
  }
  return "discard";
}

std::string NormalizeHashtag(std::string_view tag) {
  std::string t = ToLower(tag);
  if (t.empty() || t.front() != '#') t.insert(t.begin(), '#');
  return t;
}

namespace {

// Calls fn(begin, end) for each hashtag byte range [begin, end) in text.
template <typename Fn>
void ForEachHashtag(std::string_view text, Fn&& fn) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (c != '#') continue;
    int32_t end = i;
    while (end < length) {
      int32_t j = end;
      UChar32 d;
      U8_NEXT(s, j, length, d);
      if (d < 0 || !(u_isalnum(d) || d == '_')) break;
      end = j;
    }
    if (end > i) {
      fn(static_cast<std::size_t>(start), static_cast<std::size_t>(end));
      i = end;
    }
  }
}

}  // namespace

std::vector<std::string> ExtractHashtags(std::string_view text) {
  std::vector<std::string> tags;
  ForEachHashtag(text, [&](std::size_t b, std::size_t e) {
    tags.push_back(NormalizeHashtag(text.substr(b, e - b)));
  });
  return tags;
}

UserStance AssignUserStance(std::span<const Document> user_tweets,
                            const std::set<std::string>& supportive_tags,
                            const std::set<std::string>& opposing_tags) {
  std::set<std::string> supportive, opposing;
  for (const auto& t : supportive_tags) supportive.insert(NormalizeHashtag(t));
  for (const auto& t : opposing_tags) opposing.insert(NormalizeHashtag(t));
  bool uses_supportive = false;
  bool uses_opposing = false;
  for (const Document& tweet : user_tweets) {
    for (const std::string& tag : ExtractHashtags(tweet.text)) {
      if (supportive.count(tag)) uses_supportive = true;
      if (opposing.count(tag)) uses_opposing = true;
    }
  }
  if (uses_supportive && !uses_opposing) return UserStance::kFor;
  if (uses_opposing && !uses_supportive) return UserStance::kAgainst;
  return UserStance::kDiscard;
}

std::optional<Document> CleanTweet(const Document& doc, std::size_t min_words) {
  std::string stripped;
  std::size_t last = 0;
  ForEachHashtag(doc.text, [&](std::size_t b, std::size_t e) {
    stripped.append(doc.text, last, b - last);
    stripped.push_back(' ');
    last = e;
  });
  stripped.append(doc.text, last, std::string::npos);

  const std::vector<std::string> words = SplitWhitespace(stripped);
  if (words.size() < min_words) return std::nullopt;
  Document out = doc;
  out.text.clear();
  for (const std::string& w : words) {
    if (!out.text.empty()) out.text.push_back(' ');
    out.text += w;
  }
  return out;
}

void PoliticalFilter::Fit(std::span<const std::string> reference_texts) {
  if (reference_texts.empty()) throw DataError("political filter: empty reference corpus");
  std::vector<TermBag> bags;
  bags.reserve(reference_texts.size());
  for (const std::string& t : reference_texts) bags.push_back(WordTokens(t));
  model_ = TfidfModel::Fit(bags);
  model_.metadata()["space"] = "unigram";
  centroid_.assign(model_.dim(), 0.0);
  for (const TermBag& bag : bags) {
    const SparseFeatureVector v = model_.Transform(bag);
    for (std::size_t i = 0; i < v.nnz(); ++i) centroid_[v.indices[i]] += v.values[i];
  }
  double norm2 = 0.0;
  for (double& c : centroid_) {
    c /= static_cast<double>(bags.size());
    norm2 += c * c;
  }
  centroid_norm_ = std::sqrt(norm2);
}

double PoliticalFilter::Score(std::string_view text) const {
  if (!fitted()) throw InvalidArgument("political filter: reference model is not fitted");
  const SparseFeatureVector v = model_.Transform(WordTokens(text));
  const double norm = v.Norm();
  if (norm == 0.0 || centroid_norm_ == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < v.nnz(); ++i) dot += v.values[i] * centroid_[v.indices[i]];
  return std::clamp(dot / (norm * centroid_norm_), 0.0, 1.0);
}

double CalibrateThreshold(const std::map<std::string, std::vector<double>>& user_scores,
                          double target_per_user) {
  if (user_scores.empty()) throw InvalidArgument("calibrate threshold: no users");
  std::vector<double> all;
  for (const auto& [user, scores] : user_scores) all.insert(all.end(), scores.begin(), scores.end());
  std::sort(all.begin(), all.end());
  const double users = static_cast<double>(user_scores.size());

  std::vector<double> candidates = all;
  candidates.push_back(0.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  auto mean_retained = [&](double t) {
    const auto kept = all.end() - std::lower_bound(all.begin(), all.end(), t);
    return static_cast<double>(kept) / users;
  };

  double best_diff = INFINITY;
  for (double t : candidates) best_diff = std::min(best_diff, std::abs(mean_retained(t) - target_per_user));

  constexpr double kTieTolerance = 1e-12;
  std::optional<double> best_meeting;  // highest tied threshold meeting target
  std::optional<double> best_short;    // lowest tied threshold below target
  for (double t : candidates) {
    const double m = mean_retained(t);
    if (std::abs(m - target_per_user) > best_diff + kTieTolerance) continue;
    if (m >= target_per_user) {
      best_meeting = t;  // candidates ascend
    } else if (!best_short) {
      best_short = t;
    }
  }
  return best_meeting ? *best_meeting : *best_short;
}

std::vector<ClassCount> ClassDistribution(const LabeledDataset& dataset) {
  std::vector<ClassCount> out;
  for (const std::string& c : dataset.task.class_set) out.push_back({c, 0, 0.0});
  for (const Document& d : dataset.documents) {
    if (!d.label) continue;
    const int idx = dataset.task.ClassIndex(*d.label);
    if (idx < 0) throw DataError("document " + d.id + " has unknown label '" + *d.label + "'");
    ++out[static_cast<std::size_t>(idx)].count;
  }
  std::size_t total = 0;
  for (const auto& c : out) total += c.count;
  for (auto& c : out) {
    c.percent = total == 0 ? 0.0 : 100.0 * static_cast<double>(c.count) / static_cast<double>(total);
  }
  return out;
}

namespace {

std::string SetTitle(SplitTag tag) {
  switch (tag) {
    case SplitTag::kDevelopment:
      return "Development";
    case SplitTag::kTest:
      return "Test";
    case SplitTag::kUnsplit:
      break;
  }
  return "All";
}

}  // namespace

std::string DistributionCsv(std::span<const LabeledDataset> sets) {
  std::ostringstream os;
  os << "set,class,count,percent\n";
  for (const LabeledDataset& ds : sets) {
    std::size_t total = 0;
    for (const ClassCount& c : ClassDistribution(ds)) {
      os << SplitName(ds.split) << ',' << c.label << ',' << c.count << ','
         << FormatPercent(c.percent) << '\n';
      total += c.count;
    }
    os << SplitName(ds.split) << ",Total," << total << ",100.0\n";
  }
  return os.str();
}

std::string DistributionTable(std::span<const LabeledDataset> sets) {
  if (sets.empty()) return {};
  const auto& classes = sets.front().task.class_set;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"Set"};
  header.insert(header.end(), classes.begin(), classes.end());
  header.push_back("Total");
  rows.push_back(header);
  for (const LabeledDataset& ds : sets) {
    std::vector<std::string> row = {SetTitle(ds.split)};
    std::size_t total = 0;
    for (const ClassCount& c : ClassDistribution(ds)) {
      row.push_back(std::to_string(c.count) + " (" + FormatPercent(c.percent) + "%)");
      total += c.count;
    }
    row.push_back(std::to_string(total));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      os << r[i];
      if (i + 1 < r.size()) os << std::string(width[i] - r[i].size() + 3, ' ');
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace polfuse
