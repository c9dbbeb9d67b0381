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

#include "polfuse/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "polfuse/evaluation.hpp"
#include "polfuse/text.hpp"
#include "polfuse/tfidf.hpp"

#ifndef POLFUSE_DEFAULT_HELPER_DIR
#define POLFUSE_DEFAULT_HELPER_DIR "tools"
#endif

namespace polfuse {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kEngineeredMagic[8] = {'P', 'F', 'E', 'N', 'G', '\0', '\0', '\1'};

std::string Hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string ReadFile(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

void WriteJson(const fs::path& path, const json& j) { WriteFile(path, j.dump(2) + "\n"); }

json ReadJson(const fs::path& path) {
  try {
    return json::parse(ReadFile(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// Strict reader for one config object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  template <typename T>
  std::optional<T> Get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return std::nullopt;
    try {
      return it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(Path(key) + " has the wrong type");
    }
  }

  const json* Child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string Path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void Finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + Path(key) + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

fs::path Resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  if (path.is_absolute()) return path.lexically_normal();
  return (base / path).lexically_normal();
}

void WriteMatrices(const fs::path& path, const std::vector<std::pair<std::string, const Matrix*>>& ms) {
  std::string out(kEngineeredMagic, sizeof(kEngineeredMagic));
  auto put32 = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
  put32(static_cast<std::uint32_t>(ms.size()));
  for (const auto& [name, m] : ms) {
    put32(static_cast<std::uint32_t>(name.size()));
    out += name;
    put32(static_cast<std::uint32_t>(m->rows()));
    put32(static_cast<std::uint32_t>(m->cols()));
    out.append(reinterpret_cast<const char*>(m->data()), sizeof(double) * static_cast<std::size_t>(m->size()));
  }
  WriteFile(path, out);
}

std::map<std::string, Matrix> ReadMatrices(const fs::path& path) {
  const std::string bytes = ReadFile(path);
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t len) {
    if (pos + len > bytes.size()) throw DataError("truncated " + path.string());
    std::memcpy(dst, bytes.data() + pos, len);
    pos += len;
  };
  char magic[8];
  take(magic, 8);
  if (std::memcmp(magic, kEngineeredMagic, 8) != 0) throw DataError(path.string() + ": bad magic");
  std::uint32_t count;
  take(&count, 4);
  std::map<std::string, Matrix> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len, rows, cols;
    take(&len, 4);
    std::string name(len, '\0');
    take(name.data(), len);
    take(&rows, 4);
    take(&cols, 4);
    Matrix m(rows, cols);
    take(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    if (!m.allFinite()) throw DataError(path.string() + ": non-finite values in " + name);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

std::string Fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

double Accuracy(std::span<const int> gold, std::span<const int> pred) {
  if (gold.empty()) return 0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += gold[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

Matrix SelectRows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

SparseRows SelectRows(const SparseRows& x, std::span<const std::size_t> rows) {
  SparseRows out;
  out.dim = x.dim;
  for (std::size_t r : rows) out.rows.push_back(x.rows[r]);
  return out;
}

template <typename T>
std::vector<T> Pick(std::span<const T> v, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v[r]);
  return out;
}

// Mean k-fold accuracy of a softmax regression on the top-k standardized
// columns. Selection and scaling are refit inside each fold.
template <typename X>
double CrossValidatedAccuracy(const X& x, std::span<const int> y, int classes, std::size_t k,
                              ScoreFunction score, std::size_t folds, std::uint64_t seed) {
  const std::size_t n = y.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.Shuffle(std::span<std::size_t>(order));
  double total = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < n; ++i) (i % folds == f ? val : train).push_back(order[i]);
    const auto xt = SelectRows(x, train);
    const auto yt = Pick(y, std::span<const std::size_t>(train));
    const Selector sel = FitSelector(xt, yt, classes, k, score);
    const Matrix st = sel.Apply(xt);
    const Standardizer scale = Standardizer::Fit(st);
    const auto clf = SoftmaxRegression::Fit(scale.Apply(st), yt, classes);
    const auto pred = clf.PredictLabels(scale.Apply(sel.Apply(SelectRows(x, val))));
    const auto yv = Pick(y, std::span<const std::size_t>(val));
    total += Accuracy(yv, pred);
  }
  return total / static_cast<double>(folds);
}

struct ChannelSelection {
  Selector selector;
  Standardizer scale;
  std::vector<std::size_t> grid;
  std::map<std::size_t, double> grid_scores;
  bool searched = false;
};

template <typename X>
ChannelSelection SelectChannel(const std::string& channel, const X& dev, std::size_t dim,
                               std::span<const int> y, int classes, const SelectionConfig& config,
                               std::optional<std::size_t> fixed_k, std::uint64_t seed) {
  ChannelSelection out;
  if (dim == 0) throw DataError(channel + " channel: no features in the development set");
  std::size_t k;
  if (fixed_k) {
    k = *fixed_k;
    if (k == 0) throw ConfigError("selection." + channel + "_k must be >= 1");
    if (k > dim) {
      Warn(channel + ": k = " + std::to_string(k) + " exceeds the " + std::to_string(dim) +
           " available columns; keeping all");
      k = dim;
    }
  } else {
    for (std::size_t g : config.grid.empty() ? DefaultGrid(dim) : config.grid) {
      if (g >= 1 && g <= dim) out.grid.push_back(g);
    }
    if (out.grid.empty()) out.grid.push_back(dim);
    std::sort(out.grid.begin(), out.grid.end());
    out.grid.erase(std::unique(out.grid.begin(), out.grid.end()), out.grid.end());
    if (y.size() < 2 * config.folds) {
      Warn(channel + ": too few development documents for cross-validation; using k = " +
           std::to_string(out.grid.back()));
      k = out.grid.back();
    } else {
      out.searched = true;
      k = GridSearchK(out.grid, [&](std::size_t kk) {
        const double s = CrossValidatedAccuracy(dev, y, classes, kk, config.score, config.folds,
                                                DeriveSeed(seed, "cv"));
        out.grid_scores[kk] = s;
        return s;
      });
    }
  }
  out.selector = FitSelector(dev, y, classes, k, config.score);
  out.scale = Standardizer::Fit(out.selector.Apply(dev));
  return out;
}

json SelectionToJson(const ChannelSelection& s, std::span<const std::string> names) {
  json grid = json::array();
  for (std::size_t g : s.grid) {
    json e = {{"k", g}};
    if (auto it = s.grid_scores.find(g); it != s.grid_scores.end()) e["cv_accuracy"] = it->second;
    grid.push_back(e);
  }
  json cols = json::array();
  for (std::size_t i = 0; i < s.selector.selected().size(); ++i) {
    const std::size_t c = s.selector.selected()[i];
    cols.push_back({{"column", c},
                    {"name", names[c]},
                    {"score", s.selector.scores()[c]},
                    {"mean", s.scale.mean()(static_cast<Eigen::Index>(i))},
                    {"std", s.scale.stddev()(static_cast<Eigen::Index>(i))}});
  }
  return {{"k", s.selector.k()}, {"input_dim", s.selector.input_dim()}, {"grid", grid},
          {"grid_searched", s.searched}, {"selected", cols}};
}

std::vector<std::string> ReadReferenceTexts(const fs::path& path) {
  std::vector<std::string> out;
  if (path.extension() == ".jsonl") {
    for (const Document& d : ReadDocuments(path)) out.push_back(d.text);
    return out;
  }
  std::istringstream in(ReadFile(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

TfidfModel FitWordModel(const LabeledDataset& dev) {
  std::vector<TermBag> bags;
  for (const Document& d : dev.documents) bags.push_back(WordTokens(d.text));
  return TfidfModel::Fit(bags);
}

SparseRows WordRows(const TfidfModel& model, const LabeledDataset& ds) {
  std::vector<TermBag> bags;
  for (const Document& d : ds.documents) bags.push_back(WordTokens(d.text));
  return model.TransformAll(bags);
}

std::string ResultsTable(const std::vector<std::pair<std::string, EvaluationReport>>& rows) {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.first.size());
  std::string out;
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
  out += pad("Model") + "Acc   F1    P     R\n";
  for (const auto& [name, r] : rows) {
    out += pad(name) + Fixed(r.accuracy, 2) + "  " + Fixed(r.macro_f1, 2) + "  " +
           Fixed(r.macro_precision, 2) + "  " + Fixed(r.macro_recall, 2) + "\n";
  }
  return out;
}

std::string ResultsCsv(const std::vector<std::pair<std::string, EvaluationReport>>& rows) {
  std::string out = "model,n,accuracy,macro_f1,macro_precision,macro_recall\n";
  char buf[256];
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof(buf), ",%zu,%.17g,%.17g,%.17g,%.17g\n", r.n, r.accuracy, r.macro_f1,
                  r.macro_precision, r.macro_recall);
    out += name + buf;
  }
  return out;
}

struct StoredPredictions {
  std::vector<std::string> ids;
  std::vector<int> gold;
  std::vector<int> pred;
};

StoredPredictions ReadPredictions(const fs::path& path, const TaskSpec& task) {
  StoredPredictions out;
  std::istringstream in(ReadFile(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const int g = task.ClassIndex(j.at("gold").get<std::string>());
      const int p = task.ClassIndex(j.at("pred").get<std::string>());
      if (g < 0 || p < 0) throw DataError("label outside the class set");
      out.ids.push_back(j.at("id").get<std::string>());
      out.gold.push_back(g);
      out.pred.push_back(p);
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::string EmbeddingKey(const Document& doc) { return doc.id + "@" + Hex16(Fnv1a64(doc.text)); }

const std::vector<std::string>& VariantNames() {
  static const std::vector<std::string> names = {
      "reference", "bert.baseline", "bert", "sngram", "psych", "bert+sngram", "bert+psych",
      "bert+sngram+psych"};
  return names;
}

Variant LookupVariant(const std::string& name) {
  Variant v;
  if (name == kReferenceVariant) {
    v.name = name;
    v.reference = true;
    return v;
  }
  if (name == "bert.baseline") {
    v.name = name;
    v.channels = ChannelSet{kChannelBert};
    v.architecture = Architecture::kPooledBaseline;
    return v;
  }
  try {
    v.channels = ChannelSet::Parse(name);
  } catch (const Error&) {
    std::string known;
    for (const auto& n : VariantNames()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown variant '" + name + "' (expected one of " + known + ")");
  }
  v.name = v.channels.Name();
  return v;
}

ExperimentConfig ParseConfig(const json& doc, const fs::path& base_dir, const ConfigOverrides& overrides) {
  ExperimentConfig c;
  c.source = doc;
  Section top(doc, "");
  c.name = top.Get<std::string>("name").value_or("experiment");
  const std::string task = overrides.task ? *overrides.task : top.Get<std::string>("task").value_or("");
  if (task.empty()) throw ConfigError("config: 'task' is required");
  if (overrides.task) top.Get<std::string>("task");
  c.task = LookupTask(task);
  c.seed = top.Get<std::uint64_t>("seed").value_or(0);
  if (overrides.seed) c.seed = *overrides.seed;
  c.split_ratio = top.Get<double>("split_ratio").value_or(0.8);
  if (!(c.split_ratio > 0 && c.split_ratio < 1)) throw ConfigError("split_ratio must be in (0, 1)");

  if (const json* d = top.Child("data")) {
    Section s(*d, "data");
    c.dataset = Resolve(base_dir, s.Get<std::string>("dataset").value_or(""));
    c.development = Resolve(base_dir, s.Get<std::string>("development").value_or(""));
    c.test = Resolve(base_dir, s.Get<std::string>("test").value_or(""));
    s.Finish();
    if (c.development.empty() != c.test.empty()) {
      throw ConfigError("data.development and data.test must be given together");
    }
  }

  if (const json* d = top.Child("corpus")) {
    Section s(*d, "corpus");
    c.corpus.kind = s.Get<std::string>("kind").value_or("jsonl");
    if (c.corpus.kind != "jsonl" && c.corpus.kind != "brmoral" && c.corpus.kind != "govbr") {
      throw ConfigError("corpus.kind must be jsonl, brmoral or govbr");
    }
    c.corpus.source = Resolve(base_dir, s.Get<std::string>("source").value_or(""));
    c.corpus.reference = Resolve(base_dir, s.Get<std::string>("reference").value_or(""));
    for (const auto& t : s.Get<std::vector<std::string>>("supportive_tags").value_or(std::vector<std::string>{})) {
      c.corpus.supportive_tags.insert(NormalizeHashtag(t));
    }
    for (const auto& t : s.Get<std::vector<std::string>>("opposing_tags").value_or(std::vector<std::string>{})) {
      c.corpus.opposing_tags.insert(NormalizeHashtag(t));
    }
    c.corpus.target_per_user = s.Get<double>("target_per_user").value_or(kDefaultTweetsPerUser);
    c.corpus.threshold = s.Get<double>("threshold");
    c.corpus.min_words = s.Get<std::size_t>("min_words").value_or(kMinTweetWords);
    c.corpus.sample_size = s.Get<std::size_t>("sample_size").value_or(0);
    c.corpus.scale_max = s.Get<double>("scale_max").value_or(4.0);
    s.Finish();
  }

  if (const json* v = top.Child("variants")) {
    if (v->is_string() && v->get<std::string>() == "all") {
      c.variants = VariantNames();
    } else if (v->is_array()) {
      for (const auto& e : *v) {
        if (!e.is_string()) throw ConfigError("variants must be strings");
        c.variants.push_back(LookupVariant(e.get<std::string>()).name);
      }
    } else {
      throw ConfigError("variants must be \"all\" or a list of names");
    }
  } else {
    c.variants = VariantNames();
  }
  if (overrides.channels) c.variants = {LookupVariant(*overrides.channels).name};
  if (c.variants.empty()) throw ConfigError("variants is empty");
  {
    std::set<std::string> seen;
    for (const auto& v : c.variants) {
      if (!seen.insert(v).second) throw ConfigError("variant '" + v + "' listed twice");
    }
  }

  if (const json* e = top.Child("embedder")) {
    Section s(*e, "embedder");
    c.embedder = EmbedderPreset(s.Get<std::string>("preset").value_or("stub"));
    if (auto v = s.Get<std::string>("name")) c.embedder.name = *v;
    if (auto v = s.Get<std::size_t>("embed_dim")) c.embedder.embed_dim = *v;
    if (auto v = s.Get<std::size_t>("max_len")) c.embedder.max_len = *v;
    if (auto v = s.Get<std::size_t>("window")) c.embedder.window = *v;
    if (auto v = s.Get<std::uint64_t>("seed")) c.embedder.seed = *v;
    if (auto v = s.Get<std::string>("snapshot")) c.embedder.snapshot = *v;
    if (auto v = s.Get<std::string>("casing")) {
      if (*v == "uncased") {
        c.embedder.casing = Casing::kUncased;
      } else if (*v == "cased") {
        c.embedder.casing = Casing::kCased;
      } else {
        throw ConfigError("embedder.casing must be cased or uncased");
      }
    }
    if (auto v = s.Get<std::string>("language_profile")) {
      if (*v == "en") {
        c.embedder.language_profile = LanguageProfile::kEnBase;
      } else if (*v == "multilingual") {
        c.embedder.language_profile = LanguageProfile::kMultilingual;
      } else {
        throw ConfigError("embedder.language_profile must be en or multilingual");
      }
    }
    c.fine_tune_epochs = s.Get<int>("fine_tune_epochs").value_or(0);
    if (c.fine_tune_epochs < 0) throw ConfigError("embedder.fine_tune_epochs must be >= 0");
    s.Finish();
  }
  if (c.embedder.embed_dim == 0 || c.embedder.max_len == 0) {
    throw ConfigError("embedder.embed_dim and embedder.max_len must be >= 1");
  }

  c.parser.helper_dir = POLFUSE_DEFAULT_HELPER_DIR;
  if (const char* env = std::getenv("POLFUSE_HELPER_DIR"); env && *env) c.parser.helper_dir = env;
  if (const json* p = top.Child("parser")) {
    Section s(*p, "parser");
    c.parser.adapter = s.Get<std::string>("adapter").value_or("stub");
    if (c.parser.adapter.rfind("conllu:", 0) == 0) {
      c.parser.adapter = "conllu:" + Resolve(base_dir, c.parser.adapter.substr(7)).string();
    }
    if (auto v = s.Get<std::string>("helper_dir")) c.parser.helper_dir = Resolve(base_dir, *v);
    c.sngram.include_relation = s.Get<bool>("include_relation").value_or(false);
    s.Finish();
  }

  if (const json* p = top.Child("psych")) {
    Section s(*p, "psych");
    c.psych.language = ParseLanguage(s.Get<std::string>("language").value_or("en"));
    c.psych.liwc = Resolve(base_dir, s.Get<std::string>("liwc").value_or(""));
    c.psych.mrc = Resolve(base_dir, s.Get<std::string>("mrc").value_or(""));
    c.psych.expected_width = s.Get<std::size_t>("expected_width");
    s.Finish();
  }

  if (const json* p = top.Child("selection")) {
    Section s(*p, "selection");
    c.selection.score = ParseScoreFunction(s.Get<std::string>("score").value_or("anova_f"));
    c.selection.grid = s.Get<std::vector<std::size_t>>("grid").value_or(std::vector<std::size_t>{});
    c.selection.sngram_k = s.Get<std::size_t>("sngram_k");
    c.selection.psych_k = s.Get<std::size_t>("psych_k");
    c.selection.folds = s.Get<std::size_t>("folds").value_or(3);
    if (c.selection.folds < 2) throw ConfigError("selection.folds must be >= 2");
    s.Finish();
  }

  if (const json* m = top.Child("model")) c.model = ModelConfigFromJson(*m);
  c.model.classes = c.task.num_classes();
  c.model.seed = DeriveSeed(c.seed, "model");

  if (const json* e = top.Child("evaluation")) {
    Section s(*e, "evaluation");
    c.alpha = s.Get<double>("alpha").value_or(0.05);
    if (!(c.alpha > 0 && c.alpha < 1)) throw ConfigError("evaluation.alpha must be in (0, 1)");
    s.Finish();
  }
  if (const json* e = top.Child("explain")) {
    Section s(*e, "explain");
    c.explain_repeats = s.Get<int>("repeats").value_or(5);
    c.explain_tail = s.Get<std::size_t>("tail").value_or(10);
    c.explain_variant = s.Get<std::string>("variant").value_or("");
    if (c.explain_repeats < 1) throw ConfigError("explain.repeats must be >= 1");
    s.Finish();
  }

  const std::string out = top.Get<std::string>("output_dir").value_or("runs/" + c.name);
  c.output_dir = overrides.output_dir ? fs::absolute(*overrides.output_dir).lexically_normal()
                                      : Resolve(base_dir, out);
  if (auto v = top.Get<std::string>("cache_dir")) {
    c.cache_dir = Resolve(base_dir, *v);
  } else if (const char* env = std::getenv("POLFUSE_CACHE_ROOT"); env && *env) {
    c.cache_dir = fs::absolute(env).lexically_normal();
  } else {
    c.cache_dir = c.output_dir / "cache";
  }
  top.Finish();
  c.model.Validate();
  return c;
}

ExperimentConfig LoadConfig(const fs::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const fs::path abs = fs::absolute(path).lexically_normal();
  ExperimentConfig c = ParseConfig(doc, abs.parent_path(), overrides);
  c.config_path = abs;
  return c;
}

EngineeredMatrix FeatureSet::Engineered(ChannelSet channels, bool development) const {
  EngineeredMatrix out;
  const std::size_t n = development ? dev_ids.size() : test_ids.size();
  out.values = Matrix(static_cast<Eigen::Index>(n), 0);
  if (channels.has(kChannelSngram)) {
    const auto& m = development ? dev_sngram : test_sngram;
    if (m.cols() == 0) throw DataError("sngram features are missing; rerun extract-features");
    out = ConcatColumns(out, m);
  }
  if (channels.has(kChannelPsych)) {
    const auto& m = development ? dev_psych : test_psych;
    if (m.cols() == 0) throw DataError("psych features are missing; rerun extract-features");
    out = ConcatColumns(out, m);
  }
  return out;
}

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {}

fs::path Experiment::ModelDir(const std::string& variant) const {
  return config_.output_dir / "models" / variant;
}

EmbedderSpec Experiment::ResolvedEmbedder() const { return config_.embedder; }

void Experiment::Run(const std::string& command) {
  if (command == "build-corpus") return BuildCorpus();
  if (command == "extract-features") return ExtractFeatures();
  if (command == "train") return Train();
  if (command == "evaluate") return Evaluate();
  if (command == "explain") return Explain();
  throw InvalidArgument("unknown command '" + command + "'");
}

std::pair<LabeledDataset, LabeledDataset> Experiment::LoadSplits() const {
  if (!config_.development.empty()) {
    return {LoadJsonl(config_.development, config_.task, SplitTag::kDevelopment),
            LoadJsonl(config_.test, config_.task, SplitTag::kTest)};
  }
  const fs::path corpus = config_.output_dir / "corpus";
  if (fs::exists(corpus / "development.jsonl") && fs::exists(corpus / "test.jsonl")) {
    return {LoadJsonl(corpus / "development.jsonl", config_.task, SplitTag::kDevelopment),
            LoadJsonl(corpus / "test.jsonl", config_.task, SplitTag::kTest)};
  }
  if (!config_.dataset.empty()) {
    return SplitDevTest(LoadJsonl(config_.dataset, config_.task), config_.split_ratio, config_.seed);
  }
  throw ConfigError("no data: set data.development and data.test, or data.dataset, or run build-corpus");
}

void Experiment::BuildCorpus() {
  const CorpusConfig& cc = config_.corpus;
  const TaskSpec& task = config_.task;
  LabeledDataset full;
  full.task = task;
  json report = {{"kind", cc.kind}, {"task", task.name()}, {"seed", config_.seed}};

  fs::path source = cc.source.empty() ? config_.dataset : cc.source;
  if (source.empty()) throw ConfigError("corpus.source (or data.dataset) is required for build-corpus");

  if (cc.kind == "jsonl") {
    full = LoadJsonl(source, task);
  } else if (cc.kind == "brmoral") {
    std::size_t dropped = 0;
    for (Document d : ReadDocuments(source)) {
      if (!d.label) {
        if (!d.stance || !d.topic) {
          throw DataError("record '" + d.id + "' has neither a label nor topic and stance");
        }
        d.label = OpinionLabel(StanceScore{*d.stance, cc.scale_max, *d.topic});
      }
      if (task.ClassIndex(*d.label) < 0) {
        ++dropped;
        continue;
      }
      full.documents.push_back(std::move(d));
    }
    report["dropped_out_of_class_set"] = dropped;
  } else {
    if (cc.supportive_tags.empty() || cc.opposing_tags.empty()) {
      throw ConfigError("corpus.supportive_tags and corpus.opposing_tags are required for govbr");
    }
    if (cc.reference.empty()) throw ConfigError("corpus.reference (political news texts) is required for govbr");
    std::size_t tweets = 0, retweets = 0;
    std::map<std::string, std::vector<Document>> users;
    for (Document d : ReadDocuments(source)) {
      ++tweets;
      if (d.is_retweet) {
        ++retweets;
        continue;
      }
      if (!d.group_key) throw DataError("tweet '" + d.id + "' has no user (group_key)");
      users[*d.group_key].push_back(std::move(d));
    }
    std::size_t users_for = 0, users_against = 0, users_discarded = 0, short_rejected = 0;
    std::map<std::string, std::vector<Document>> cleaned;
    std::map<std::string, std::string> stance_of;
    for (const auto& [user, docs] : users) {
      const UserStance stance = AssignUserStance(docs, cc.supportive_tags, cc.opposing_tags);
      if (stance == UserStance::kDiscard) {
        ++users_discarded;
        continue;
      }
      (stance == UserStance::kFor ? users_for : users_against)++;
      stance_of[user] = std::string(UserStanceLabel(stance));
      for (const Document& d : docs) {
        if (auto c = CleanTweet(d, cc.min_words)) {
          cleaned[user].push_back(std::move(*c));
        } else {
          ++short_rejected;
        }
      }
    }
    PoliticalFilter filter;
    filter.Fit(ReadReferenceTexts(cc.reference));
    std::map<std::string, std::vector<double>> scores;
    for (const auto& [user, docs] : cleaned) {
      for (const Document& d : docs) scores[user].push_back(filter.Score(d.text));
    }
    const double threshold = cc.threshold ? *cc.threshold : CalibrateThreshold(scores, cc.target_per_user);
    std::size_t filter_rejected = 0;
    for (const auto& [user, docs] : cleaned) {
      for (std::size_t i = 0; i < docs.size(); ++i) {
        if (scores[user][i] < threshold) {
          ++filter_rejected;
          continue;
        }
        Document d = docs[i];
        d.label = stance_of[user];
        full.documents.push_back(std::move(d));
      }
    }
    report["tweets"] = tweets;
    report["retweets_dropped"] = retweets;
    report["users"] = users.size();
    report["users_for"] = users_for;
    report["users_against"] = users_against;
    report["users_discarded"] = users_discarded;
    report["short_rejected"] = short_rejected;
    report["filter_rejected"] = filter_rejected;
    report["threshold"] = threshold;
    report["threshold_calibrated"] = !cc.threshold.has_value();
  }

  if (cc.sample_size > 0) {
    const int k = task.num_classes();
    const std::size_t per_class = cc.sample_size / static_cast<std::size_t>(k);
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
    const auto labels = full.LabelIndices();
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    Rng rng(DeriveSeed(config_.seed, "sample"));
    std::vector<std::size_t> keep;
    for (int cls = 0; cls < k; ++cls) {
      auto& rows = by_class[static_cast<std::size_t>(cls)];
      if (rows.size() < per_class) {
        Warn("balanced sample: class '" + task.class_set[static_cast<std::size_t>(cls)] + "' has only " +
             std::to_string(rows.size()) + " documents, " + std::to_string(per_class) + " requested");
      }
      rng.Shuffle(std::span<std::size_t>(rows));
      rows.resize(std::min(rows.size(), per_class));
      keep.insert(keep.end(), rows.begin(), rows.end());
    }
    std::sort(keep.begin(), keep.end());
    std::vector<Document> sampled;
    for (std::size_t i : keep) sampled.push_back(full.documents[i]);
    full.documents = std::move(sampled);
    report["sample_size"] = full.size();
  }
  if (full.size() < 2) throw DataError("corpus has fewer than two labelled documents");

  auto [dev, test] = SplitDevTest(full, config_.split_ratio, config_.seed);
  const fs::path dir = config_.output_dir / "corpus";
  fs::create_directories(dir);
  WriteJsonl(dir / "development.jsonl", dev.documents);
  WriteJsonl(dir / "test.jsonl", test.documents);
  const std::vector<LabeledDataset> sets = {dev, test, full};
  WriteFile(dir / "distribution.csv", DistributionCsv(sets));
  WriteFile(dir / "distribution.txt", DistributionTable(sets));
  report["development"] = dev.size();
  report["test"] = test.size();
  WriteJson(dir / "report.json", report);
  Info("build-corpus: " + std::to_string(dev.size()) + " development, " + std::to_string(test.size()) +
       " test documents in " + dir.string());
}

void Experiment::ExtractFeatures() {
  auto [dev, test] = LoadSplits();
  const int classes = config_.task.num_classes();
  const auto dev_y = dev.LabelIndices();
  test.LabelIndices();  // labels must be valid before any work

  ChannelSet needed;
  for (const auto& name : config_.variants) needed.bits |= LookupVariant(name).channels.bits;

  const fs::path dir = config_.output_dir / "features";
  const fs::path manifest_path = dir / "manifest.json";

  // Input fingerprint: documents, the config sections that shape features,
  // and lexicon / parse file contents.
  std::uint64_t fp = Fnv1a64(config_.task.name());
  auto mix = [&](std::string_view s) { fp = Fnv1a64(s, fp ^ 0x9e3779b97f4a7c15ULL); };
  for (const auto* ds : {&dev, &test}) {
    for (const Document& d : ds->documents) {
      mix(d.id);
      mix(d.text);
      mix(d.label.value_or(""));
    }
    mix("|");
  }
  mix(std::to_string(needed.bits));
  mix(std::to_string(config_.seed));
  for (const char* key : {"parser", "psych", "selection"}) {
    mix(config_.source.contains(key) ? config_.source[key].dump() : "null");
  }
  if (needed.has(kChannelPsych)) {
    for (const auto& p : {config_.psych.liwc, config_.psych.mrc}) {
      if (!p.empty() && fs::exists(p)) mix(ReadFile(p));
    }
  }
  if (needed.has(kChannelSngram) && config_.parser.adapter.rfind("conllu:", 0) == 0) {
    const fs::path p = config_.parser.adapter.substr(7);
    if (fs::exists(p)) mix(ReadFile(p));
  }
  const std::string fingerprint = Hex16(fp);

  bool fresh = false;
  if (fs::exists(manifest_path) && fs::exists(dir / "engineered.bin")) {
    try {
      fresh = ReadJson(manifest_path).value("fingerprint", "") == fingerprint;
    } catch (const Error&) {
      fresh = false;
    }
  }

  if (fresh) {
    Info("extract-features: engineered features up to date (" + fingerprint + ")");
  } else {
    json manifest = {{"version", 1},
                     {"fingerprint", fingerprint},
                     {"task", config_.task.name()},
                     {"seed", config_.seed},
                     {"channels", needed.Name()},
                     {"score_function", ScoreFunctionName(config_.selection.score)},
                     {"folds", config_.selection.folds},
                     {"standardizer_ddof", 0}};
    json selection_doc = json::object();
    json columns = json::object();
    Matrix dev_sngram(static_cast<Eigen::Index>(dev.size()), 0), test_sngram(static_cast<Eigen::Index>(test.size()), 0);
    Matrix dev_psych(static_cast<Eigen::Index>(dev.size()), 0), test_psych(static_cast<Eigen::Index>(test.size()), 0);
    std::vector<std::string> sngram_names, psych_names;

    if (needed.has(kChannelSngram)) {
      const auto parser = MakeParser(config_.parser);
      std::vector<TermBag> dev_bags, test_bags;
      for (const Document& d : dev.documents) dev_bags.push_back(DocumentSngrams(*parser, d.text, d.id, config_.sngram));
      for (const Document& d : test.documents) test_bags.push_back(DocumentSngrams(*parser, d.text, d.id, config_.sngram));
      const TfidfModel model = FitSngramModel(dev_bags, *parser, config_.sngram);
      fs::create_directories(dir);
      model.Save(dir / "sngram.tfidf");
      const SparseRows dv = model.TransformAll(dev_bags);
      const SparseRows tv = model.TransformAll(test_bags);
      std::vector<std::string> names;
      for (const auto& term : model.vocabulary()) names.push_back("sngram:" + term);
      const auto sel = SelectChannel("sngram", dv, model.dim(), dev_y, classes, config_.selection,
                                     config_.selection.sngram_k, DeriveSeed(config_.seed, "sngram"));
      dev_sngram = sel.scale.Apply(sel.selector.Apply(dv));
      test_sngram = sel.scale.Apply(sel.selector.Apply(tv));
      sngram_names = sel.selector.Apply(std::span<const std::string>(names));
      selection_doc["sngram"] = SelectionToJson(sel, names);
      manifest["sngram_k"] = sel.selector.k();
      manifest["sngram_vocabulary"] = model.dim();
      manifest["parser"] = parser->name();
      manifest["include_relation"] = config_.sngram.include_relation;
    }

    if (needed.has(kChannelPsych)) {
      if (config_.psych.liwc.empty() || config_.psych.mrc.empty()) {
        throw ConfigError("psych channel needs psych.liwc and psych.mrc lexicon paths in the config");
      }
      for (const auto& [key, p] : {std::pair{"psych.liwc", config_.psych.liwc}, std::pair{"psych.mrc", config_.psych.mrc}}) {
        if (!fs::exists(p)) {
          throw ConfigError(std::string(key) + ": lexicon file not found: " + p.string() +
                            " (point " + key + " at the licensed lexicon)");
        }
      }
      PsychLexicons lex{LoadLexicon(config_.psych.liwc, LexiconKind::kLiwc, config_.psych.language),
                        LoadLexicon(config_.psych.mrc, LexiconKind::kMrc, config_.psych.language)};
      const std::size_t expected = config_.psych.expected_width.value_or(ExpectedPsychWidth(config_.psych.language));
      if (lex.width() != expected) {
        throw ConfigError("psych lexicons give " + std::to_string(lex.width()) + " columns (" +
                          std::to_string(lex.liwc.num_categories()) + " LIWC + " +
                          std::to_string(lex.mrc.num_categories()) + " MRC), expected " +
                          std::to_string(expected) + " for " + std::string(LanguageName(config_.psych.language)) +
                          "; set psych.expected_width to accept this lexicon");
      }
      auto profiles = [&](const LabeledDataset& ds) {
        Matrix m(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(lex.width()));
        for (std::size_t i = 0; i < ds.size(); ++i) {
          const auto p = lex.Profile(WordTokens(ds.documents[i].text));
          for (std::size_t j = 0; j < p.dim(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p.values[j];
        }
        return m;
      };
      const Matrix dv = profiles(dev), tv = profiles(test);
      const auto names = lex.ColumnNames();
      const auto sel = SelectChannel("psych", dv, lex.width(), dev_y, classes, config_.selection,
                                     config_.selection.psych_k, DeriveSeed(config_.seed, "psych"));
      dev_psych = sel.scale.Apply(sel.selector.Apply(dv));
      test_psych = sel.scale.Apply(sel.selector.Apply(tv));
      psych_names = sel.selector.Apply(std::span<const std::string>(names));
      selection_doc["psych"] = SelectionToJson(sel, names);
      manifest["psych_k"] = sel.selector.k();
      manifest["psych_width"] = lex.width();
      manifest["language"] = LanguageName(config_.psych.language);
    }

    columns["sngram"] = sngram_names;
    columns["psych"] = psych_names;
    manifest["columns"] = columns;
    json dev_ids = json::array(), test_ids = json::array(), dev_keys = json::array(), test_keys = json::array();
    for (const Document& d : dev.documents) {
      dev_ids.push_back(d.id);
      dev_keys.push_back(EmbeddingKey(d));
    }
    for (const Document& d : test.documents) {
      test_ids.push_back(d.id);
      test_keys.push_back(EmbeddingKey(d));
    }
    manifest["development"] = {{"ids", dev_ids}, {"keys", dev_keys}, {"labels", dev_y}};
    manifest["test"] = {{"ids", test_ids}, {"keys", test_keys}, {"labels", test.LabelIndices()}};

    WriteMatrices(dir / "engineered.bin", {{"dev.sngram", &dev_sngram},
                                           {"test.sngram", &test_sngram},
                                           {"dev.psych", &dev_psych},
                                           {"test.psych", &test_psych}});
    WriteJson(dir / "selection.json", selection_doc);
    WriteJson(manifest_path, manifest);
    Info("extract-features: wrote " + dir.string());
  }

  if (needed.bert()) {
    const EmbedderSpec spec = ResolvedEmbedder();
    auto embedder = MakeEmbedder(spec);
    if (config_.fine_tune_epochs > 0) embedder->FineTune(dev, config_.fine_tune_epochs);
    EmbeddingCache cache(config_.cache_dir, spec);
    std::size_t added = 0, missing = 0;
    std::string requests;
    for (const auto* ds : {&dev, &test}) {
      for (const Document& d : ds->documents) {
        const std::string key = EmbeddingKey(d);
        if (cache.Contains(key)) continue;
        if (!embedder->available()) {
          const TokenSequence seq = PrepareSequence(d.text, spec);
          const std::vector<std::string> real(seq.tokens.begin(), seq.tokens.begin() + static_cast<std::ptrdiff_t>(seq.real_length));
          requests += json({{"key", key}, {"file", EmbeddingCache::EntryFileName(key)}, {"tokens", real},
                            {"max_len", spec.max_len}})
                          .dump() +
                      "\n";
          ++missing;
          continue;
        }
        cache.Put(key, embedder->Embed(PrepareSequence(d.text, spec)));
        ++added;
      }
    }
    if (added > 0) cache.Flush();
    if (missing > 0) {
      const fs::path req = cache.directory() / "requests.jsonl";
      WriteFile(req, requests);
      throw CapabilityError(std::to_string(missing) + " documents have no cached embeddings for '" + spec.name +
                            "'; run tools/hf_embed.py " + req.string() +
                            " to populate the cache, or use the stub embedder");
    }
    Info("extract-features: embedding cache " + cache.directory().string() + " (" + std::to_string(added) +
         " new)");
  }
}

FeatureSet Experiment::LoadFeatures() const {
  const fs::path dir = config_.output_dir / "features";
  if (!fs::exists(dir / "manifest.json")) {
    throw DataError("no features in " + dir.string() + "; run extract-features first");
  }
  const json m = ReadJson(dir / "manifest.json");
  auto mats = ReadMatrices(dir / "engineered.bin");
  FeatureSet f;
  try {
    f.dev_ids = m.at("development").at("ids").get<std::vector<std::string>>();
    f.dev_keys = m.at("development").at("keys").get<std::vector<std::string>>();
    f.dev_labels = m.at("development").at("labels").get<std::vector<int>>();
    f.test_ids = m.at("test").at("ids").get<std::vector<std::string>>();
    f.test_keys = m.at("test").at("keys").get<std::vector<std::string>>();
    f.test_labels = m.at("test").at("labels").get<std::vector<int>>();
    f.sngram_k = m.value("sngram_k", std::size_t{0});
    f.psych_k = m.value("psych_k", std::size_t{0});
    const auto sn = m.at("columns").at("sngram").get<std::vector<std::string>>();
    const auto ps = m.at("columns").at("psych").get<std::vector<std::string>>();
    auto fill = [&](EngineeredMatrix& e, const char* key, const std::vector<std::string>& names,
                    const char* channel) {
      e.values = mats.at(key);
      if (e.cols() != names.size()) throw DataError(std::string(key) + ": column count mismatch");
      e.column_names = names;
      e.channels.assign(names.size(), channel);
    };
    fill(f.dev_sngram, "dev.sngram", sn, "sngram");
    fill(f.test_sngram, "test.sngram", sn, "sngram");
    fill(f.dev_psych, "dev.psych", ps, "psych");
    fill(f.test_psych, "test.psych", ps, "psych");
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/manifest.json: " + e.what());
  } catch (const std::out_of_range&) {
    throw DataError(dir.string() + "/engineered.bin is incomplete; rerun extract-features");
  }
  if (f.dev_sngram.rows() != f.dev_ids.size() || f.test_sngram.rows() != f.test_ids.size()) {
    throw DataError(dir.string() + ": feature rows do not match the manifest");
  }
  return f;
}

std::vector<TokenEmbeddingMatrix> Experiment::LoadEmbeddings(std::span<const std::string> keys) const {
  EmbeddingCache cache(config_.cache_dir, ResolvedEmbedder());
  std::vector<TokenEmbeddingMatrix> out;
  out.reserve(keys.size());
  for (const std::string& key : keys) {
    auto m = cache.Get(key);
    if (!m) {
      throw DataError("no cached embedding for '" + key + "' in " + cache.directory().string() +
                      "; run extract-features first");
    }
    out.push_back(std::move(*m));
  }
  return out;
}

void Experiment::TrainReference(const fs::path& dir) const {
  auto [dev, test] = LoadSplits();
  const TfidfModel model = FitWordModel(dev);
  const SparseRows x = WordRows(model, dev);
  const auto y = dev.LabelIndices();
  const Selector sel = FitSelector(x, y, config_.task.num_classes(), std::min<std::size_t>(1000, model.dim()),
                                   ScoreFunction::kAnovaF);
  SoftmaxRegression::Options opts;
  opts.l2 = 1e-4;
  const auto clf = SoftmaxRegression::Fit(sel.Apply(x), y, config_.task.num_classes(), opts);
  fs::create_directories(dir);
  model.Save(dir / "reference.tfidf");
  json w = json::array();
  for (Eigen::Index r = 0; r < clf.weights().rows(); ++r) {
    std::vector<double> row(clf.weights().row(r).begin(), clf.weights().row(r).end());
    w.push_back(row);
  }
  std::vector<double> b(clf.bias().begin(), clf.bias().end());
  WriteJson(dir / "reference.json", {{"format", "polfuse-reference"},
                                     {"version", 1},
                                     {"classes", config_.task.num_classes()},
                                     {"selected", sel.selected()},
                                     {"weights", w},
                                     {"bias", b}});
}

std::vector<int> Experiment::PredictVariant(const std::string& name, const FeatureSet& features,
                                            const LabeledDataset& test) const {
  const Variant v = LookupVariant(name);
  const fs::path dir = ModelDir(v.name);
  if (v.reference) {
    if (!fs::exists(dir / "reference.json")) throw DataError("reference has not been trained; run train first");
    const TfidfModel model = TfidfModel::Load(dir / "reference.tfidf");
    const json j = ReadJson(dir / "reference.json");
    const auto selected = j.at("selected").get<std::vector<std::size_t>>();
    const auto w = j.at("weights").get<std::vector<std::vector<double>>>();
    const auto b = j.at("bias").get<std::vector<double>>();
    const SparseRows x = WordRows(model, test);
    std::vector<int> pred;
    std::vector<std::int64_t> position(model.dim(), -1);
    for (std::size_t i = 0; i < selected.size(); ++i) position[selected[i]] = static_cast<std::int64_t>(i);
    for (const auto& row : x.rows) {
      std::vector<double> logits = b;
      for (std::size_t t = 0; t < row.nnz(); ++t) {
        const std::int64_t p = position[row.indices[t]];
        if (p < 0) continue;
        for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += w[c][static_cast<std::size_t>(p)] * row.values[t];
      }
      pred.push_back(static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()));
    }
    return pred;
  }
  if (!fs::exists(dir / "model.json")) {
    throw DataError("variant '" + v.name + "' has not been trained; run train first");
  }
  const FusionModel model = FusionModel::Load(dir);
  std::vector<TokenEmbeddingMatrix> emb;
  if (v.channels.bert()) emb = LoadEmbeddings(features.test_keys);
  Matrix eng;
  if (v.channels.engineered()) eng = features.Engineered(v.channels, false).values;
  std::vector<int> pred;
  for (const Prediction& p : model.Predict(emb, eng)) pred.push_back(p.label);
  return pred;
}

void Experiment::Train() {
  const FeatureSet features = LoadFeatures();
  const json fmanifest = ReadJson(config_.output_dir / "features" / "manifest.json");
  for (const std::string& name : config_.variants) {
    const Variant v = LookupVariant(name);
    const fs::path dir = ModelDir(v.name);
    json manifest = {{"version", 1},
                     {"variant", v.name},
                     {"task", config_.task.name()},
                     {"seed", config_.seed},
                     {"features_fingerprint", fmanifest.value("fingerprint", "")}};
    if (v.reference) {
      TrainReference(dir);
      manifest["model"] = "unigram tf-idf, anova top-1000, softmax regression";
    } else {
      ModelConfig mc = Ablate(config_.model, v.channels);
      mc.architecture = v.architecture;
      std::vector<TokenEmbeddingMatrix> emb;
      std::size_t embed_dim = 0;
      if (v.channels.bert()) {
        emb = LoadEmbeddings(features.dev_keys);
        embed_dim = emb.empty() ? 0 : emb.front().cols;
      }
      Matrix eng;
      if (v.channels.engineered()) eng = features.Engineered(v.channels, true).values;
      FusionModel model = FusionModel::Build(mc, embed_dim, static_cast<std::size_t>(eng.cols()));
      model.Train(emb, eng, features.dev_labels);
      fs::create_directories(dir);
      model.Save(dir);
      manifest["channels"] = v.channels.Name();
      manifest["architecture"] = ArchitectureName(v.architecture);
      manifest["num_weights"] = model.num_weights();
      manifest["final_loss"] = model.history().loss.empty() ? 0.0 : model.history().loss.back();
      if (v.channels.has(kChannelSngram)) manifest["sngram_k"] = features.sngram_k;
      if (v.channels.has(kChannelPsych)) manifest["psych_k"] = features.psych_k;
      if (v.channels.bert()) {
        manifest["embedder"] = {{"name", config_.embedder.name},
                                {"fingerprint", config_.embedder.Fingerprint()},
                                {"snapshot", config_.embedder.snapshot}};
      }
    }
    WriteJson(dir / "manifest.json", manifest);
    Info("train: " + v.name + " -> " + dir.string());
  }
}

void Experiment::Evaluate() {
  const FeatureSet features = LoadFeatures();
  auto [dev, test] = LoadSplits();
  if (test.size() != features.test_ids.size()) {
    throw DataError("test split differs from the extracted features; rerun extract-features");
  }
  std::vector<std::pair<std::string, EvaluationReport>> rows;
  for (const std::string& name : config_.variants) {
    const Variant v = LookupVariant(name);
    const auto pred = PredictVariant(v.name, features, test);
    const EvaluationReport r = ComputeMetrics(features.test_labels, pred, config_.task.num_classes());
    EvaluationReport named = r;
    named.class_set = config_.task.class_set;
    const fs::path dir = ModelDir(v.name);
    WriteJson(dir / "metrics.json", ReportToJson(named));
    std::string lines;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      lines += json({{"id", features.test_ids[i]},
                     {"gold", config_.task.class_set[static_cast<std::size_t>(features.test_labels[i])]},
                     {"pred", config_.task.class_set[static_cast<std::size_t>(pred[i])]}})
                   .dump() +
               "\n";
    }
    WriteFile(dir / "predictions.jsonl", lines);
    rows.emplace_back(v.name, named);
  }
  const fs::path dir = config_.output_dir / "evaluation";
  WriteFile(dir / "results.txt", config_.task.name() + "\n" + ResultsTable(rows));
  WriteFile(dir / "results.csv", ResultsCsv(rows));
  Info("evaluate: results in " + (dir / "results.txt").string());
}

void Experiment::Explain() {
  std::string name = config_.explain_variant;
  if (name.empty()) {
    for (const auto& v : config_.variants) {
      if (LookupVariant(v).channels.engineered()) {
        name = v;
        if (LookupVariant(v).channels.has(kChannelSngram) && LookupVariant(v).channels.has(kChannelPsych)) break;
      }
    }
  }
  if (name.empty()) throw ConfigError("explain needs a variant with sngram or psych features");
  const Variant v = LookupVariant(name);
  if (!v.channels.engineered()) throw ConfigError("explain: variant '" + v.name + "' has no engineered features");
  const fs::path mdir = ModelDir(v.name);
  if (!fs::exists(mdir / "model.json")) throw DataError("variant '" + v.name + "' has not been trained; run train first");
  const FeatureSet features = LoadFeatures();
  const FusionModel model = FusionModel::Load(mdir);
  std::vector<TokenEmbeddingMatrix> emb;
  if (v.channels.bert()) emb = LoadEmbeddings(features.test_keys);
  const EngineeredMatrix eng = features.Engineered(v.channels, false);
  const auto& gold = features.test_labels;
  auto score = [&](const Matrix& x) {
    std::vector<int> pred;
    for (const Prediction& p : model.Predict(emb, x)) pred.push_back(p.label);
    return Accuracy(gold, pred);
  };
  const ImportanceReport report = PermutationImportance(score, eng.values, eng.column_names, config_.explain_repeats,
                                                        DeriveSeed(config_.seed, "explain"));
  const fs::path dir = config_.output_dir / "explain" / v.name;
  WriteFile(dir / "importance.txt", config_.task.name() + " " + v.name + "\n" +
                                        ImportanceTable(report, config_.explain_tail));
  WriteFile(dir / "importance.csv", ImportanceCsv(report));
  Info("explain: " + (dir / "importance.txt").string());
}

void Compare(std::span<Experiment* const> experiments, const fs::path& out_dir) {
  if (experiments.empty()) throw InvalidArgument("compare: no experiments");
  const TaskSpec task = experiments.front()->config().task;
  std::vector<std::string> ids;
  std::vector<int> gold;
  std::vector<ModelPredictions> models;
  std::vector<ChannelSet> channels;
  std::map<std::string, int> name_count;
  for (Experiment* e : experiments) {
    for (const auto& v : e->config().variants) ++name_count[v];
  }
  for (Experiment* e : experiments) {
    if (e->config().task.class_set != task.class_set) {
      throw DataError("compare: experiments have different class sets");
    }
    for (const auto& vname : e->config().variants) {
      const fs::path p = e->ModelDir(vname) / "predictions.jsonl";
      if (!fs::exists(p)) throw DataError("compare: no predictions for '" + vname + "'; run evaluate first");
      StoredPredictions sp = ReadPredictions(p, task);
      if (ids.empty() && gold.empty()) {
        ids = sp.ids;
        gold = sp.gold;
      } else if (sp.ids != ids || sp.gold != gold) {
        throw DataError("compare: '" + vname + "' in " + e->config().name +
                        " was evaluated on a different test set");
      }
      const std::string label = name_count[vname] > 1 ? e->config().name + "/" + vname : vname;
      models.push_back({label, std::move(sp.pred)});
      channels.push_back(LookupVariant(vname).channels);
    }
  }
  std::optional<std::string> reference;
  for (const auto& m : models) {
    if (m.name == kReferenceVariant) reference = m.name;
  }
  const double alpha = experiments.front()->config().alpha;
  const HomogeneousGroups groups = GroupModels(models, gold, task.num_classes(), alpha, reference);

  std::map<std::string, std::size_t> rank;
  for (std::size_t i = 0; i < groups.models.size(); ++i) rank[groups.models[i].name] = i;
  json checks = json::array();
  std::size_t violations = 0;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const ChannelSet fused = channels[i];
    if (std::popcount(fused.bits) < 2) continue;
    for (std::size_t j = 0; j < models.size(); ++j) {
      const ChannelSet part = channels[j];
      if (i == j || part.empty() || (part.bits & ~fused.bits) != 0 || part == fused) continue;
      if (LookupVariant(models[j].name.substr(models[j].name.rfind('/') + 1)).architecture !=
          Architecture::kFusionCnn) {
        continue;
      }
      const std::size_t a = rank[models[i].name], b = rank[models[j].name];
      const double p = groups.p_values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      const bool worse = groups.models[a].accuracy < groups.models[b].accuracy && p < alpha;
      violations += worse;
      checks.push_back({{"fused", models[i].name},
                        {"component", models[j].name},
                        {"fused_accuracy", groups.models[a].accuracy},
                        {"component_accuracy", groups.models[b].accuracy},
                        {"p_value", p},
                        {"significantly_worse", worse}});
    }
  }

  json gj = {{"task", task.name()},
             {"test_name", groups.test_name},
             {"alpha", alpha},
             {"num_groups", groups.num_groups},
             {"n", gold.size()},
             {"component_checks", checks},
             {"fused_significantly_worse", violations}};
  if (reference) gj["reference"] = *reference;
  json ms = json::array();
  for (const auto& m : groups.models) {
    ms.push_back({{"name", m.name}, {"accuracy", m.accuracy}, {"group", m.group}, {"beats_reference", m.beats_reference}});
  }
  gj["models"] = ms;
  const fs::path dir = out_dir / "comparison";
  WriteFile(dir / "groups.txt", task.name() + "\n" + GroupsTable(groups));
  WriteJson(dir / "groups.json", gj);
  WriteFile(dir / "pairwise.csv", PairwiseCsv(groups));
  Info("compare: " + std::to_string(models.size()) + " models in " + std::to_string(groups.num_groups) +
       " groups, " + (dir / "groups.txt").string());
}

}  // namespace polfuse
