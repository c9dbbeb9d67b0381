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
#include <string>
#include <vector>

#include "doctest.h"
#include "polfuse/common.hpp"
#include "polfuse/embedder.hpp"
#include "polfuse/fusion_model.hpp"
#include "support.hpp"

using namespace polfuse;

namespace {

ModelConfig Tiny(const std::string& channels = "bert+sngram+psych") {
  ModelConfig c;
  c.filters = 4;
  c.projection_units = 3;
  c.seed = 3;
  c.channels = ChannelSet::Parse(channels);
  return c;
}

TokenEmbeddingMatrix RandomMatrix(Rng& rng, std::size_t rows, std::size_t cols, std::size_t real) {
  TokenEmbeddingMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.data.resize(rows * cols);
  m.mask.assign(rows, 0);
  for (std::size_t i = 0; i < real; ++i) m.mask[i] = 1;
  for (float& v : m.data) v = static_cast<float>(rng.Uniform(-1, 1));
  return m;
}

void Randomise(FusionModel& m, std::uint64_t seed) {
  Rng r(seed);
  for (auto& t : m.parameters())
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = r.Uniform(-1, 1);
  for (auto& t : m.buffers())
    for (Eigen::Index i = 0; i < t.value.size(); ++i)
      t.value.data()[i] = t.name.find("var") != std::string::npos ? r.Uniform(0.5, 2) : r.Uniform(-.5, .5);
}

// Separable toy set: class 0 documents contain "red", class 1 "blue";
// engineered column 0 carries the label with noise.
struct ToySet {
  std::vector<TokenEmbeddingMatrix> emb;
  Matrix eng;
  std::vector<int> y;
};

ToySet MakeToy(std::size_t n, std::size_t dim, int classes = 2) {
  EmbedderSpec spec;
  spec.embed_dim = dim;
  spec.max_len = 12;
  StubEmbedder e(spec);
  Rng rng(77);
  const std::vector<std::string> marks = {"red", "blue", "green"};
  ToySet t;
  t.eng.resize(static_cast<Eigen::Index>(n), 3);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
    std::string text;
    for (int w = 0; w < 8; ++w) text += "f" + std::to_string(rng.Below(30)) + " ";
    text += marks[static_cast<std::size_t>(y)];
    t.emb.push_back(e.Embed(PrepareSequence(text, spec)));
    t.eng(static_cast<Eigen::Index>(i), 0) = y + 0.1 * rng.Normal();
    t.eng(static_cast<Eigen::Index>(i), 1) = rng.Normal();
    t.eng(static_cast<Eigen::Index>(i), 2) = rng.Normal();
    t.y.push_back(y);
  }
  return t;
}

double TrainAccuracy(const FusionModel& m, const ToySet& t) {
  const auto preds = m.Predict(t.emb, t.eng);
  double hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i].label == t.y[i] ? 1 : 0;
  return hits / static_cast<double>(preds.size());
}

}  // namespace

TEST_SUITE("fusion_model") {

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.Validate());
  c.conv_widths = {2, 3, 4};
  CHECK_THROWS_AS(c.Validate(), Error);
  c = ModelConfig{};
  c.dropout = 0.3;
  CHECK_THROWS_AS(c.Validate(), Error);
  c = ModelConfig{};
  c.classes = 4;
  CHECK_THROWS_AS(c.Validate(), Error);
  c = ModelConfig{};
  nlohmann::json j = ModelConfigToJson(c);
  CHECK(ModelConfigFromJson(j).conv_widths == c.conv_widths);
  j["bogus"] = 1;
  CHECK_THROWS_AS(ModelConfigFromJson(j), Error);
}

TEST_CASE("architecture audit") {
  ModelConfig c;
  const FusionModel m = FusionModel::Build(c, 768, 40);
  CHECK(m.output_dim() == 2);
  for (std::size_t b = 0; b < 5; ++b) {
    const Tensor& w = m.parameter("conv" + std::to_string(b + 1) + ".weight");
    CHECK(w.value.rows() == 128);
    CHECK(static_cast<std::size_t>(w.value.cols()) == c.conv_widths[b] * 768);
  }
  CHECK(m.parameter("proj.weight").value.rows() == 128);
  CHECK(m.parameter("proj.weight").value.cols() == 40);
  CHECK(m.parameter("head.weight").value.cols() == 5 * 128 + 128);
  ModelConfig t = c;
  t.classes = 3;
  CHECK(FusionModel::Build(t, 768, 40).parameter("head.weight").value.rows() == 3);
}

TEST_CASE("ablation wiring") {
  const ModelConfig base = Tiny();
  const FusionModel bert = FusionModel::Build(Ablate(base, ChannelSet::Parse("bert")), 8, 0);
  CHECK_THROWS(bert.parameter("proj.weight"));
  CHECK(bert.parameter("head.weight").value.cols() == 5 * 4);

  const FusionModel eng = FusionModel::Build(Ablate(base, ChannelSet::Parse("sngram+psych")), 0, 5);
  CHECK_THROWS(eng.parameter("conv1.weight"));
  CHECK(eng.parameter("head.weight").value.cols() == 3);

  const FusionModel full = FusionModel::Build(Ablate(base, ChannelSet::Parse("psych,bert,sngram")), 8, 5);
  CHECK(full.parameter("head.weight").value.cols() == 5 * 4 + 3);
  CHECK_THROWS_AS(Ablate(base, ChannelSet{}), Error);
  CHECK(ChannelSet::Parse("psych+bert").Name() == "bert+psych");
  CHECK_THROWS_AS(FusionModel::Build(base, 8, 0), Error);
}

TEST_CASE("untrained model predicts the uniform distribution") {
  Rng rng(1);
  const FusionModel m = FusionModel::Build(Tiny(), 8, 5);
  std::vector<TokenEmbeddingMatrix> zeros(3, RandomMatrix(rng, 10, 8, 10));
  for (auto& z : zeros) std::fill(z.data.begin(), z.data.end(), 0.0f);
  const auto preds = m.Predict(zeros, Matrix::Zero(3, 5));
  for (const auto& p : preds) {
    REQUIRE(p.probabilities.size() == 2);
    CHECK(p.probabilities[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p.probabilities[0] + p.probabilities[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("predictions are normalised, ternary and deterministic per row") {
  Rng rng(2);
  ModelConfig c = Tiny();
  c.classes = 3;
  FusionModel m = FusionModel::Build(c, 8, 5);
  Randomise(m, 4);
  std::vector<TokenEmbeddingMatrix> emb;
  Matrix eng(50, 5);
  for (int i = 0; i < 50; ++i) {
    emb.push_back(RandomMatrix(rng, 10, 8, 1 + rng.Below(10)));
    for (int j = 0; j < 5; ++j) eng(i, j) = 3 * rng.Normal();
  }
  emb[7] = emb[3];
  eng.row(7) = eng.row(3);
  const auto preds = m.Predict(emb, eng);
  for (const auto& p : preds) {
    REQUIRE(p.probabilities.size() == 3);
    double s = 0;
    for (double v : p.probabilities) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
    CHECK(p.label == std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin());
  }
  CHECK(preds[7].probabilities == preds[3].probabilities);
}

TEST_CASE("dimension mismatch names the channel") {
  Rng rng(3);
  const FusionModel m = FusionModel::Build(Tiny(), 8, 5);
  std::vector<TokenEmbeddingMatrix> wrong = {RandomMatrix(rng, 10, 6, 10)};
  try {
    m.Predict(wrong, Matrix::Zero(1, 5));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("bert") != std::string::npos);
  }
  std::vector<TokenEmbeddingMatrix> ok = {RandomMatrix(rng, 10, 8, 10)};
  try {
    m.Predict(ok, Matrix::Zero(1, 4));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("engineered") != std::string::npos);
  }
}

TEST_CASE("gradient check") {
  // embed_dim 8, 10 tokens, 4 filters; dropout off and batch norm on
  // running statistics, plus the batch-statistics and other layouts.
  struct Mode {
    const char* name;
    bool batch_stats;
    ConvLayout layout;
    Architecture arch;
    const char* channels;
  };
  const Mode modes[] = {
      {"parallel inference", false, ConvLayout::kParallel, Architecture::kFusionCnn, "bert+sngram+psych"},
      {"parallel batch stats", true, ConvLayout::kParallel, Architecture::kFusionCnn, "bert+sngram+psych"},
      {"sequential", false, ConvLayout::kSequential, Architecture::kFusionCnn, "bert+sngram"},
      {"pooled baseline", false, ConvLayout::kParallel, Architecture::kPooledBaseline, "bert"},
      {"engineered only", true, ConvLayout::kParallel, Architecture::kFusionCnn, "psych"},
  };
  for (const Mode& mode : modes) {
    CAPTURE(mode.name);
    ModelConfig c = Tiny(mode.channels);
    c.layout = mode.layout;
    c.architecture = mode.arch;
    if (mode.layout == ConvLayout::kSequential) c.conv_widths = {1, 2, 2, 1, 2};
    FusionModel m = FusionModel::Build(c, 8, 5);
    Randomise(m, 11);
    Rng r(5);
    std::vector<TokenEmbeddingMatrix> e;
    for (int d = 0; d < 4; ++d) e.push_back(RandomMatrix(r, 10, 8, 9));
    Matrix eng(4, 5);
    for (Eigen::Index i = 0; i < eng.size(); ++i) eng.data()[i] = r.Uniform(-1, 1);
    const std::vector<int> y = {0, 1, 1, 0};
    const ForwardOptions o{mode.batch_stats, false, nullptr};
    m.LossAndGradients(e, eng, y, o);
    std::vector<Matrix> grads;
    for (const auto& t : m.parameters()) grads.push_back(t.grad);
    double worst = 0;
    for (std::size_t ti = 0; ti < m.parameters().size(); ++ti) {
      Tensor& t = m.parameters()[ti];
      for (Eigen::Index i = 0; i < t.value.size(); ++i) {
        const double v = t.value.data()[i], h = 1e-5;
        t.value.data()[i] = v + h;
        const double lp = m.LossAndGradients(e, eng, y, o);
        t.value.data()[i] = v - h;
        const double lm = m.LossAndGradients(e, eng, y, o);
        t.value.data()[i] = v;
        const double fd = (lp - lm) / (2 * h), an = grads[ti].data()[i];
        worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
      }
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("max pooling and token order") {
  Rng rng(8);
  std::vector<TokenEmbeddingMatrix> docs = {RandomMatrix(rng, 10, 8, 10)};
  TokenEmbeddingMatrix reversed = docs[0];
  for (std::size_t r = 0; r < 10; ++r)
    std::copy(docs[0].row(9 - r), docs[0].row(9 - r) + 8, reversed.data.begin() + static_cast<long>(r * 8));
  std::vector<TokenEmbeddingMatrix> rev = {reversed};

  ModelConfig unigram = Tiny("bert");
  unigram.conv_widths = {1, 1, 1, 1, 1};
  FusionModel u = FusionModel::Build(unigram, 8, 0);
  Randomise(u, 6);
  CHECK(u.PredictProba(docs, Matrix()) == u.PredictProba(rev, Matrix()));

  ModelConfig bigram = Tiny("bert");
  bigram.conv_widths = {2, 2, 2, 2, 2};
  FusionModel b = FusionModel::Build(bigram, 8, 0);
  Randomise(b, 6);
  const Matrix pa = b.PredictProba(docs, Matrix()), pb = b.PredictProba(rev, Matrix());
  CHECK((pa - pb).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("training separates a separable set") {
  const ToySet t = MakeToy(64, 16);
  ModelConfig c = Tiny("bert");
  c.filters = 8;
  c.epochs = 30;
  c.batch_size = 16;
  FusionModel m = FusionModel::Build(c, 16, 0);
  m.Train(t.emb, Matrix(), t.y);
  CHECK(m.history().loss.size() == 30);
  CHECK(m.history().loss.back() < m.history().loss.front());
  CHECK(TrainAccuracy(m, t) >= 0.95);

  ModelConfig e = Tiny("psych");
  e.epochs = 30;
  e.batch_size = 16;
  FusionModel me = FusionModel::Build(e, 0, 3);
  me.Train({}, t.eng, t.y);
  CHECK(TrainAccuracy(me, t) >= 0.95);
}

TEST_CASE("zero epochs leaves the uniform prediction") {
  const ToySet t = MakeToy(16, 8);
  ModelConfig c = Tiny();
  c.epochs = 0;
  FusionModel m = FusionModel::Build(c, 8, 3);
  m.Train(t.emb, t.eng, t.y);
  for (const auto& p : m.Predict(t.emb, t.eng)) CHECK(p.probabilities[1] == doctest::Approx(0.5));
}

TEST_CASE("fixed seed training is bit reproducible") {
  const ToySet t = MakeToy(40, 8, 3);
  ModelConfig c = Tiny();
  c.classes = 3;
  c.epochs = 4;
  c.batch_size = 8;
  FusionModel a = FusionModel::Build(c, 8, 3), b = FusionModel::Build(c, 8, 3);
  a.Train(t.emb, t.eng, t.y);
  b.Train(t.emb, t.eng, t.y);
  CHECK(a.history().loss == b.history().loss);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    CHECK(a.parameters()[i].value == b.parameters()[i].value);

  ModelConfig other = c;
  other.seed = 99;
  FusionModel d = FusionModel::Build(other, 8, 3);
  d.Train(t.emb, t.eng, t.y);
  CHECK(d.history().loss != a.history().loss);
}

TEST_CASE("save and load") {
  testing::TempDir dir;
  const ToySet t = MakeToy(24, 8);
  ModelConfig c = Tiny();
  c.epochs = 2;
  FusionModel m = FusionModel::Build(c, 8, 3);
  m.Train(t.emb, t.eng, t.y);
  m.Save(dir.path());
  const FusionModel back = FusionModel::Load(dir.path());
  CHECK(back.PredictProba(t.emb, t.eng) == m.PredictProba(t.emb, t.eng));
  CHECK(back.history().loss == m.history().loss);
  CHECK(ModelConfigToJson(back.config()) == ModelConfigToJson(m.config()));
}

TEST_CASE("diverging training stops with a numerical error") {
  const ToySet t = MakeToy(32, 8);
  ModelConfig c = Tiny("psych");
  c.learning_rate = 1e300;
  c.epochs = 5;
  FusionModel m = FusionModel::Build(c, 0, 3);
  Matrix big = t.eng * 1e150;
  try {
    m.Train({}, big, t.y);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumerical);
    CHECK(std::string(e.what()).find("learning") != std::string::npos);
  }
}

TEST_CASE("softmax regression") {
  const ToySet t = MakeToy(60, 8);
  const SoftmaxRegression r = SoftmaxRegression::Fit(t.eng, t.y, 2);
  const std::vector<int> labels = r.PredictLabels(t.eng);
  double hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += labels[i] == t.y[i] ? 1 : 0;
  CHECK(hits / 60.0 >= 0.95);
  const Matrix p = r.PredictProba(t.eng);
  for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
}

}  // TEST_SUITE
