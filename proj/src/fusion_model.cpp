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

#include "polfuse/fusion_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace polfuse {

using Eigen::Index;
using RowVec = Eigen::RowVectorXd;
using IndexMatrix = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

static_assert(std::endian::native == std::endian::little,
              "weight files are read and written as little-endian");

constexpr char kWeightsMagic[8] = {'P', 'F', 'W', 'T', 'S', '\0', '\0', '\1'};
constexpr int kModelFormatVersion = 1;

std::string Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

// All length-`width` windows of x as rows of one (L x width*cols) matrix,
// without copying: consecutive windows overlap in memory.
Eigen::Map<const Matrix, Eigen::Unaligned, Eigen::OuterStride<>> Windows(const Matrix& x,
                                                                          std::size_t width) {
  const Index w = static_cast<Index>(width);
  return {x.data(), x.rows() - w + 1, w * x.cols(), Eigen::OuterStride<>(x.cols())};
}

struct ConvBnCache {
  std::size_t width = 1;
  bool batch_stats = true;
  double positions = 0;
  RowVec mean, var, inv_std;
  std::vector<Matrix> zhat;
};

// Convolution (no bias) followed by batch normalisation over every output
// position of every document in the batch.
std::vector<Matrix> ConvBnForward(const std::vector<Matrix>& in, std::size_t width,
                                  const Matrix& w, const Matrix& gamma, const Matrix& beta,
                                  const Matrix& running_mean, const Matrix& running_var,
                                  bool batch_stats, double eps, ConvBnCache& c) {
  const Index f = w.rows();
  std::vector<Matrix> z(in.size());
  RowVec sum = RowVec::Zero(f);
  double positions = 0;
  for (std::size_t d = 0; d < in.size(); ++d) {
    z[d].noalias() = Windows(in[d], width) * w.transpose();
    sum += z[d].colwise().sum();
    positions += static_cast<double>(z[d].rows());
  }
  c.width = width;
  c.batch_stats = batch_stats;
  c.positions = positions;
  if (batch_stats) {
    c.mean = sum / positions;
    RowVec sq = RowVec::Zero(f);
    for (const Matrix& zd : z) sq += (zd.rowwise() - c.mean).array().square().matrix().colwise().sum();
    c.var = sq / positions;
  } else {
    c.mean = running_mean.row(0);
    c.var = running_var.row(0);
  }
  c.inv_std = (c.var.array() + eps).rsqrt().matrix();
  const RowVec g = gamma.row(0);
  const RowVec b = beta.row(0);
  std::vector<Matrix> y(in.size());
  c.zhat.resize(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) {
    c.zhat[d] = ((z[d].rowwise() - c.mean).array().rowwise() * c.inv_std.array()).matrix();
    y[d] = ((c.zhat[d].array().rowwise() * g.array()).rowwise() + b.array()).matrix();
  }
  return y;
}

void ConvBnBackward(const std::vector<Matrix>& in, const std::vector<Matrix>& dy,
                    const Matrix& w, const Matrix& gamma, const ConvBnCache& c, Matrix& dw,
                    Matrix& dgamma, Matrix& dbeta, std::vector<Matrix>* din) {
  const Index f = w.rows();
  const RowVec g = gamma.row(0);
  std::vector<Matrix> dzhat(in.size());
  RowVec s1 = RowVec::Zero(f);
  RowVec s2 = RowVec::Zero(f);
  for (std::size_t d = 0; d < in.size(); ++d) {
    dgamma.row(0) += (dy[d].array() * c.zhat[d].array()).matrix().colwise().sum();
    dbeta.row(0) += dy[d].colwise().sum();
    dzhat[d] = (dy[d].array().rowwise() * g.array()).matrix();
    if (c.batch_stats) {
      s1 += dzhat[d].colwise().sum();
      s2 += (dzhat[d].array() * c.zhat[d].array()).matrix().colwise().sum();
    }
  }
  if (din) din->resize(in.size());
  const Index width = static_cast<Index>(c.width);
  for (std::size_t d = 0; d < in.size(); ++d) {
    Matrix dz;
    if (c.batch_stats) {
      const double n = c.positions;
      dz = ((((dzhat[d] * n).rowwise() - s1).array() -
             (c.zhat[d].array().rowwise() * s2.array())).rowwise() *
            (c.inv_std.array() / n))
               .matrix();
    } else {
      dz = (dzhat[d].array().rowwise() * c.inv_std.array()).matrix();
    }
    dw.noalias() += dz.transpose() * Windows(in[d], c.width);
    if (din) {
      const Index cols = in[d].cols();
      Matrix dwin = dz * w;
      Matrix& out = (*din)[d];
      out = Matrix::Zero(in[d].rows(), cols);
      for (Index l = 0; l < dwin.rows(); ++l) {
        for (Index k = 0; k < width; ++k) out.row(l + k) += dwin.block(l, k * cols, 1, cols);
      }
    }
  }
}

// Column-wise max over the token axis; ties go to the first position.
void GlobalMaxPool(const std::vector<Matrix>& y, Matrix& pooled, Index col0, IndexMatrix& argmax) {
  const Index f = y.empty() ? 0 : y.front().cols();
  argmax.resize(static_cast<Index>(y.size()), f);
  for (std::size_t d = 0; d < y.size(); ++d) {
    for (Index j = 0; j < f; ++j) {
      Index best = 0;
      double v = y[d](0, j);
      for (Index l = 1; l < y[d].rows(); ++l) {
        if (y[d](l, j) > v) {
          v = y[d](l, j);
          best = l;
        }
      }
      pooled(static_cast<Index>(d), col0 + j) = v;
      argmax(static_cast<Index>(d), j) = best;
    }
  }
}

Matrix DropoutMask(Index rows, Index cols, double p, Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.Uniform() < p ? 0.0 : keep;
  }
  return m;
}

// Row-wise log-softmax.
Matrix LogSoftmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

void GlorotUniform(Matrix& w, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) w(i, j) = rng.Uniform(-limit, limit);
  }
}

Tensor MakeTensor(std::string name, Index rows, Index cols, double fill) {
  Tensor t;
  t.name = std::move(name);
  t.value = Matrix::Constant(rows, cols, fill);
  t.grad = Matrix::Zero(rows, cols);
  t.adam_m = Matrix::Zero(rows, cols);
  t.adam_v = Matrix::Zero(rows, cols);
  return t;
}

void AdamUpdate(Tensor& t, double lr, double b1, double b2, double eps, int step) {
  t.adam_m = b1 * t.adam_m + (1.0 - b1) * t.grad;
  t.adam_v = b2 * t.adam_v + (1.0 - b2) * t.grad.cwiseProduct(t.grad);
  const double c1 = 1.0 - std::pow(b1, step);
  const double c2 = 1.0 - std::pow(b2, step);
  t.value.array() -= lr * (t.adam_m.array() / c1) / ((t.adam_v.array() / c2).sqrt() + eps);
}

Matrix ToDouble(const TokenEmbeddingMatrix& e) {
  using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const FloatMatrix>(e.data.data(), static_cast<Index>(e.rows),
                                       static_cast<Index>(e.cols))
      .cast<double>();
}

template <typename T>
T JsonGet(const nlohmann::json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("model config: bad value for '" + key + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.

ChannelSet ChannelSet::Parse(std::string_view spec) {
  ChannelSet set;
  std::string token;
  auto flush = [&] {
    const std::string name = Trim(token);
    token.clear();
    if (name.empty()) return;
    if (name == "bert") {
      set.bits |= kChannelBert;
    } else if (name == "sngram") {
      set.bits |= kChannelSngram;
    } else if (name == "psych") {
      set.bits |= kChannelPsych;
    } else {
      throw ConfigError("unknown channel '" + name + "' (expected bert, sngram or psych)");
    }
  };
  for (char ch : spec) {
    if (ch == '+' || ch == ',') {
      flush();
    } else {
      token.push_back(ch);
    }
  }
  flush();
  if (set.empty()) throw ConfigError("empty channel set '" + std::string(spec) + "'");
  return set;
}

std::string ChannelSet::Name() const {
  std::string out;
  auto add = [&](Channel c, const char* name) {
    if (!has(c)) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(kChannelBert, "bert");
  add(kChannelSngram, "sngram");
  add(kChannelPsych, "psych");
  return out;
}

std::string_view ArchitectureName(Architecture a) {
  return a == Architecture::kFusionCnn ? "fusion_cnn" : "pooled_baseline";
}

std::string_view ConvLayoutName(ConvLayout l) {
  return l == ConvLayout::kParallel ? "parallel" : "sequential";
}

void ModelConfig::Validate() const {
  auto fail = [](const std::string& why) { return ConfigError("model config: " + why); };
  if (conv_widths.size() != 5) {
    throw fail("conv_widths must list exactly 5 kernel widths, got " +
               std::to_string(conv_widths.size()));
  }
  for (std::size_t w : conv_widths) {
    if (w == 0) throw fail("conv_widths must be positive");
  }
  if (filters == 0) throw fail("filters must be positive");
  if (projection_units == 0) throw fail("projection_units must be positive");
  if (dropout != 0.5) throw fail("dropout is fixed at 0.5");
  if (classes != 2 && classes != 3) throw fail("classes must be 2 or 3");
  if (epochs < 0) throw fail("epochs must be >= 0");
  if (batch_size == 0) throw fail("batch_size must be positive");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw fail("learning_rate must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0)) throw fail("adam_epsilon must be positive");
  if (!(bn_momentum > 0 && bn_momentum <= 1)) throw fail("bn_momentum must lie in (0, 1]");
  if (!(bn_epsilon > 0)) throw fail("bn_epsilon must be positive");
  if (channels.empty()) throw fail("no channels wired");
  if (architecture == Architecture::kPooledBaseline && channels.bits != kChannelBert) {
    throw fail("the pooled baseline takes the bert channel only");
  }
}

nlohmann::json ModelConfigToJson(const ModelConfig& c) {
  return {
      {"conv_widths", c.conv_widths},
      {"filters", c.filters},
      {"projection_units", c.projection_units},
      {"dropout", c.dropout},
      {"classes", c.classes},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_epsilon", c.adam_epsilon},
      {"bn_momentum", c.bn_momentum},
      {"bn_epsilon", c.bn_epsilon},
      {"seed", c.seed},
      {"channels", c.channels.Name()},
      {"architecture", ArchitectureName(c.architecture)},
      {"layout", ConvLayoutName(c.layout)},
  };
}

ModelConfig ModelConfigFromJson(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "conv_widths") {
      c.conv_widths = JsonGet<std::vector<std::size_t>>(j, key);
    } else if (key == "filters") {
      c.filters = JsonGet<std::size_t>(j, key);
    } else if (key == "projection_units") {
      c.projection_units = JsonGet<std::size_t>(j, key);
    } else if (key == "dropout") {
      c.dropout = JsonGet<double>(j, key);
    } else if (key == "classes") {
      c.classes = JsonGet<int>(j, key);
    } else if (key == "epochs") {
      c.epochs = JsonGet<int>(j, key);
    } else if (key == "batch_size") {
      c.batch_size = JsonGet<std::size_t>(j, key);
    } else if (key == "learning_rate") {
      c.learning_rate = JsonGet<double>(j, key);
    } else if (key == "adam_beta1") {
      c.adam_beta1 = JsonGet<double>(j, key);
    } else if (key == "adam_beta2") {
      c.adam_beta2 = JsonGet<double>(j, key);
    } else if (key == "adam_epsilon") {
      c.adam_epsilon = JsonGet<double>(j, key);
    } else if (key == "bn_momentum") {
      c.bn_momentum = JsonGet<double>(j, key);
    } else if (key == "bn_epsilon") {
      c.bn_epsilon = JsonGet<double>(j, key);
    } else if (key == "seed") {
      c.seed = JsonGet<std::uint64_t>(j, key);
    } else if (key == "channels") {
      c.channels = ChannelSet::Parse(JsonGet<std::string>(j, key));
    } else if (key == "architecture") {
      const auto s = JsonGet<std::string>(j, key);
      if (s == "fusion_cnn") {
        c.architecture = Architecture::kFusionCnn;
      } else if (s == "pooled_baseline") {
        c.architecture = Architecture::kPooledBaseline;
      } else {
        throw ConfigError("model config: unknown architecture '" + s + "'");
      }
    } else if (key == "layout") {
      const auto s = JsonGet<std::string>(j, key);
      if (s == "parallel") {
        c.layout = ConvLayout::kParallel;
      } else if (s == "sequential") {
        c.layout = ConvLayout::kSequential;
      } else {
        throw ConfigError("model config: unknown layout '" + s + "'");
      }
    } else {
      throw ConfigError("unknown config key 'model." + key + "'");
    }
  }
  return c;
}

ModelConfig Ablate(const ModelConfig& config, ChannelSet channels) {
  if (channels.empty()) throw ConfigError("ablation needs at least one channel");
  ModelConfig out = config;
  out.channels = channels;
  return out;
}

// ---------------------------------------------------------------------------
// Fusion model.

struct FusionModel::Cache {
  std::vector<Matrix> x;                  // embeddings as double, per document
  std::vector<std::vector<Matrix>> relu;  // sequential layout: layer outputs after ReLU
  std::vector<ConvBnCache> conv;
  std::vector<IndexMatrix> argmax;
  ConvBnCache proj;
  Matrix mask1, mask2;
  Matrix h2;
  Matrix log_probs;
  std::size_t bert_width = 0;
};

std::size_t FusionModel::head_inputs() const {
  std::size_t h = 0;
  if (config_.channels.bert()) {
    if (config_.architecture == Architecture::kPooledBaseline) {
      h += embed_dim_;
    } else {
      h += config_.layout == ConvLayout::kParallel ? config_.conv_widths.size() * config_.filters
                                                    : config_.filters;
    }
  }
  if (config_.channels.engineered()) h += config_.projection_units;
  return h;
}

FusionModel FusionModel::Build(const ModelConfig& config, std::size_t embed_dim,
                               std::size_t engineered_dim) {
  config.Validate();
  if (config.channels.bert() && embed_dim == 0) {
    throw ConfigError("bert channel is wired but embed_dim is 0");
  }
  if (config.channels.engineered() && engineered_dim == 0) {
    throw ConfigError("engineered (" + config.channels.Name() +
                      ") channel is wired but has no feature columns");
  }
  FusionModel m;
  m.config_ = config;
  m.embed_dim_ = config.channels.bert() ? embed_dim : 0;
  m.engineered_dim_ = config.channels.engineered() ? engineered_dim : 0;

  const Index f = static_cast<Index>(config.filters);
  auto add_param = [&](std::string name, Index r, Index c, double fill) {
    m.params_.push_back(MakeTensor(std::move(name), r, c, fill));
    return m.params_.size() - 1;
  };
  auto add_buffer = [&](std::string name, Index c, double fill) {
    m.buffers_.push_back(MakeTensor(std::move(name), 1, c, fill));
    return m.buffers_.size() - 1;
  };
  if (config.channels.bert() && config.architecture == Architecture::kFusionCnn) {
    for (std::size_t b = 0; b < config.conv_widths.size(); ++b) {
      const std::string id = std::to_string(b + 1);
      const Index din = (config.layout == ConvLayout::kParallel || b == 0)
                            ? static_cast<Index>(embed_dim)
                            : f;
      m.conv_.push_back(add_param("conv" + id + ".weight", f,
                                  static_cast<Index>(config.conv_widths[b]) * din, 0.0));
      m.bn_gamma_.push_back(add_param("bn" + id + ".gamma", 1, f, 1.0));
      m.bn_beta_.push_back(add_param("bn" + id + ".beta", 1, f, 0.0));
      m.bn_mean_.push_back(add_buffer("bn" + id + ".running_mean", f, 0.0));
      m.bn_var_.push_back(add_buffer("bn" + id + ".running_var", f, 1.0));
    }
  }
  if (config.channels.engineered()) {
    const Index q = static_cast<Index>(config.projection_units);
    m.proj_ = add_param("proj.weight", q, static_cast<Index>(engineered_dim), 0.0);
    m.proj_gamma_ = add_param("proj_bn.gamma", 1, q, 1.0);
    m.proj_beta_ = add_param("proj_bn.beta", 1, q, 0.0);
    m.proj_mean_ = add_buffer("proj_bn.running_mean", q, 0.0);
    m.proj_var_ = add_buffer("proj_bn.running_var", q, 1.0);
  }
  m.head_w_ = add_param("head.weight", config.classes, static_cast<Index>(m.head_inputs()), 0.0);
  m.head_b_ = add_param("head.bias", 1, config.classes, 0.0);
  m.InitParameters();
  return m;
}

void FusionModel::InitParameters() {
  Rng rng(DeriveSeed(config_.seed, "init"));
  for (std::size_t b = 0; b < conv_.size(); ++b) {
    Matrix& w = params_[conv_[b]].value;
    const double width = static_cast<double>(config_.conv_widths[b]);
    const double din = static_cast<double>(w.cols()) / width;
    GlorotUniform(w, width * din, width * static_cast<double>(config_.filters), rng);
  }
  if (config_.channels.engineered()) {
    Matrix& v = params_[proj_].value;
    GlorotUniform(v, static_cast<double>(v.cols()), static_cast<double>(v.rows()), rng);
  }
  // The head starts at zero, so an untrained model predicts the uniform
  // distribution exactly.
}

const Tensor& FusionModel::parameter(std::string_view name) const {
  for (const Tensor& t : params_) {
    if (t.name == name) return t;
  }
  throw InvalidArgument("no parameter named '" + std::string(name) + "'");
}

std::size_t FusionModel::num_weights() const {
  std::size_t n = 0;
  for (const Tensor& t : params_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

std::size_t FusionModel::CheckInputs(std::span<const TokenEmbeddingMatrix> embeddings,
                                     const Matrix& engineered) const {
  if (params_.empty()) throw InvalidArgument("model has not been built");
  std::size_t n = 0;
  bool have_rows = false;
  if (config_.channels.bert()) {
    n = embeddings.size();
    have_rows = true;
    std::size_t min_len = 1;
    if (config_.architecture == Architecture::kFusionCnn) {
      if (config_.layout == ConvLayout::kParallel) {
        min_len = *std::max_element(config_.conv_widths.begin(), config_.conv_widths.end());
      } else {
        for (std::size_t w : config_.conv_widths) min_len += w - 1;
      }
    }
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
      const TokenEmbeddingMatrix& e = embeddings[i];
      if (e.cols != embed_dim_) {
        throw InvalidArgument("bert channel: document " + std::to_string(i) + " has embedding width " +
                              std::to_string(e.cols) + ", model expects " + std::to_string(embed_dim_));
      }
      if (e.data.size() != e.rows * e.cols || e.mask.size() != e.rows) {
        throw InvalidArgument("bert channel: document " + std::to_string(i) + " has a malformed matrix");
      }
      if (e.rows < min_len) {
        throw InvalidArgument("bert channel: document " + std::to_string(i) + " has " +
                              std::to_string(e.rows) + " positions, the convolutions need at least " +
                              std::to_string(min_len));
      }
    }
  }
  if (config_.channels.engineered()) {
    if (static_cast<std::size_t>(engineered.cols()) != engineered_dim_) {
      throw InvalidArgument("engineered (sngram/psych) channel: got " +
                            std::to_string(engineered.cols()) + " columns, model expects " +
                            std::to_string(engineered_dim_));
    }
    const auto rows = static_cast<std::size_t>(engineered.rows());
    if (have_rows && rows != n) {
      throw InvalidArgument("bert channel has " + std::to_string(n) +
                            " documents but the engineered (sngram/psych) channel has " +
                            std::to_string(rows));
    }
    n = rows;
  }
  return n;
}

FusionModel::Batch FusionModel::MakeBatch(std::span<const TokenEmbeddingMatrix> embeddings,
                                          const Matrix& engineered,
                                          std::span<const std::size_t> rows) const {
  Batch b;
  b.rows = rows.size();
  if (config_.channels.bert()) {
    for (std::size_t r : rows) b.embeddings.push_back(&embeddings[r]);
  }
  if (config_.channels.engineered()) {
    b.engineered.resize(static_cast<Index>(rows.size()), engineered.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      b.engineered.row(static_cast<Index>(i)) = engineered.row(static_cast<Index>(rows[i]));
    }
  }
  return b;
}

Matrix FusionModel::Forward(const Batch& batch, const ForwardOptions& options, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  const Index n = static_cast<Index>(batch.rows);
  const bool drop = options.dropout && config_.dropout > 0;
  if (drop && options.rng == nullptr) throw InvalidArgument("dropout requires a random source");
  const double eps = config_.bn_epsilon;

  Matrix hb(n, 0);
  if (config_.channels.bert()) {
    c.x.resize(batch.embeddings.size());
    for (std::size_t d = 0; d < batch.embeddings.size(); ++d) c.x[d] = ToDouble(*batch.embeddings[d]);
    if (config_.architecture == Architecture::kPooledBaseline) {
      hb = Matrix::Zero(n, static_cast<Index>(embed_dim_));
      for (std::size_t d = 0; d < c.x.size(); ++d) {
        const auto& mask = batch.embeddings[d]->mask;
        double count = 0;
        for (std::size_t t = 0; t < mask.size(); ++t) {
          if (!mask[t]) continue;
          hb.row(static_cast<Index>(d)) += c.x[d].row(static_cast<Index>(t));
          count += 1;
        }
        if (count > 0) hb.row(static_cast<Index>(d)) /= count;
      }
    } else {
      const Index f = static_cast<Index>(config_.filters);
      const std::size_t layers = config_.conv_widths.size();
      c.conv.assign(layers, {});
      if (config_.layout == ConvLayout::kParallel) {
        hb.resize(n, f * static_cast<Index>(layers));
        c.argmax.assign(layers, {});
        for (std::size_t b = 0; b < layers; ++b) {
          const auto y = ConvBnForward(c.x, config_.conv_widths[b], params_[conv_[b]].value,
                                       params_[bn_gamma_[b]].value, params_[bn_beta_[b]].value,
                                       buffers_[bn_mean_[b]].value, buffers_[bn_var_[b]].value,
                                       options.batch_stats, eps, c.conv[b]);
          GlobalMaxPool(y, hb, static_cast<Index>(b) * f, c.argmax[b]);
        }
      } else {
        hb.resize(n, f);
        c.argmax.assign(1, {});
        c.relu.assign(layers - 1, {});
        const std::vector<Matrix>* in = &c.x;
        for (std::size_t b = 0; b < layers; ++b) {
          auto y = ConvBnForward(*in, config_.conv_widths[b], params_[conv_[b]].value,
                                 params_[bn_gamma_[b]].value, params_[bn_beta_[b]].value,
                                 buffers_[bn_mean_[b]].value, buffers_[bn_var_[b]].value,
                                 options.batch_stats, eps, c.conv[b]);
          if (b + 1 < layers) {
            for (Matrix& m : y) m = m.cwiseMax(0.0);
            c.relu[b] = std::move(y);
            in = &c.relu[b];
          } else {
            GlobalMaxPool(y, hb, 0, c.argmax[0]);
          }
        }
      }
      if (drop) {
        c.mask1 = DropoutMask(hb.rows(), hb.cols(), config_.dropout, *options.rng);
        hb = hb.cwiseProduct(c.mask1);
      } else {
        c.mask1.resize(0, 0);
      }
    }
  }
  c.bert_width = static_cast<std::size_t>(hb.cols());

  Matrix he(n, 0);
  if (config_.channels.engineered()) {
    const std::vector<Matrix> in{batch.engineered};
    he = ConvBnForward(in, 1, params_[proj_].value, params_[proj_gamma_].value,
                       params_[proj_beta_].value, buffers_[proj_mean_].value,
                       buffers_[proj_var_].value, options.batch_stats, eps, c.proj)[0];
  }

  Matrix h(n, hb.cols() + he.cols());
  h << hb, he;
  if (drop) {
    c.mask2 = DropoutMask(h.rows(), h.cols(), config_.dropout, *options.rng);
    h = h.cwiseProduct(c.mask2);
  } else {
    c.mask2.resize(0, 0);
  }
  Matrix logits = h * params_[head_w_].value.transpose();
  logits.rowwise() += params_[head_b_].value.row(0);
  c.log_probs = LogSoftmax(logits);
  c.h2 = std::move(h);
  return c.log_probs.array().exp().matrix();
}

double FusionModel::Backward(const Batch& batch, const Cache& c, std::span<const int> labels) {
  for (Tensor& t : params_) t.grad.setZero();
  const Index n = static_cast<Index>(batch.rows);
  double loss = 0;
  Matrix dlogits = c.log_probs.array().exp().matrix();
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    loss -= c.log_probs(i, y);
    dlogits(i, y) -= 1.0;
  }
  loss /= static_cast<double>(n);
  dlogits /= static_cast<double>(n);

  const Matrix& wh = params_[head_w_].value;
  params_[head_w_].grad.noalias() = dlogits.transpose() * c.h2;
  params_[head_b_].grad.row(0) = dlogits.colwise().sum();
  Matrix dh = dlogits * wh;
  if (c.mask2.size() > 0) dh = dh.cwiseProduct(c.mask2);

  const Index hb_cols = static_cast<Index>(c.bert_width);
  if (config_.channels.engineered()) {
    const std::vector<Matrix> in{batch.engineered};
    const std::vector<Matrix> dy{dh.rightCols(dh.cols() - hb_cols)};
    ConvBnBackward(in, dy, params_[proj_].value, params_[proj_gamma_].value, c.proj,
                   params_[proj_].grad, params_[proj_gamma_].grad, params_[proj_beta_].grad,
                   nullptr);
  }
  if (config_.channels.bert() && config_.architecture == Architecture::kFusionCnn) {
    Matrix dpool = dh.leftCols(hb_cols);
    if (c.mask1.size() > 0) dpool = dpool.cwiseProduct(c.mask1);
    const Index f = static_cast<Index>(config_.filters);
    const std::size_t layers = config_.conv_widths.size();
    if (config_.layout == ConvLayout::kParallel) {
      for (std::size_t b = 0; b < layers; ++b) {
        // Documents may differ in length; unpool per document.
        std::vector<Matrix> dy(c.x.size());
        for (std::size_t d = 0; d < c.x.size(); ++d) {
          const Index len = c.x[d].rows() - static_cast<Index>(config_.conv_widths[b]) + 1;
          dy[d] = Matrix::Zero(len, f);
          for (Index j = 0; j < f; ++j) {
            dy[d](c.argmax[b](static_cast<Index>(d), j), j) =
                dpool(static_cast<Index>(d), static_cast<Index>(b) * f + j);
          }
        }
        ConvBnBackward(c.x, dy, params_[conv_[b]].value, params_[bn_gamma_[b]].value, c.conv[b],
                       params_[conv_[b]].grad, params_[bn_gamma_[b]].grad,
                       params_[bn_beta_[b]].grad, nullptr);
      }
    } else {
      const std::vector<Matrix>& last_in = layers > 1 ? c.relu[layers - 2] : c.x;
      std::vector<Matrix> dy(last_in.size());
      for (std::size_t d = 0; d < last_in.size(); ++d) {
        const Index len = last_in[d].rows() - static_cast<Index>(config_.conv_widths.back()) + 1;
        dy[d] = Matrix::Zero(len, f);
        for (Index j = 0; j < f; ++j) dy[d](c.argmax[0](static_cast<Index>(d), j), j) = dpool(static_cast<Index>(d), j);
      }
      for (std::size_t b = layers; b-- > 0;) {
        const std::vector<Matrix>& in = b > 0 ? c.relu[b - 1] : c.x;
        std::vector<Matrix> din;
        ConvBnBackward(in, dy, params_[conv_[b]].value, params_[bn_gamma_[b]].value, c.conv[b],
                       params_[conv_[b]].grad, params_[bn_gamma_[b]].grad,
                       params_[bn_beta_[b]].grad, b > 0 ? &din : nullptr);
        if (b == 0) break;
        for (std::size_t d = 0; d < din.size(); ++d) {
          dy[d] = din[d].cwiseProduct((in[d].array() > 0.0).cast<double>().matrix());
        }
      }
    }
  }
  return loss;
}

void FusionModel::UpdateRunningStats(const Cache& c) {
  const double m = config_.bn_momentum;
  auto update = [m](Tensor& mean, Tensor& var, const ConvBnCache& cc) {
    if (!cc.batch_stats) return;
    const double unbias = cc.positions > 1 ? cc.positions / (cc.positions - 1) : 1.0;
    mean.value.row(0) = (1 - m) * mean.value.row(0) + m * cc.mean;
    var.value.row(0) = (1 - m) * var.value.row(0) + (m * unbias) * cc.var;
  };
  for (std::size_t b = 0; b < c.conv.size(); ++b) update(buffers_[bn_mean_[b]], buffers_[bn_var_[b]], c.conv[b]);
  if (config_.channels.engineered()) update(buffers_[proj_mean_], buffers_[proj_var_], c.proj);
}

void FusionModel::AdamStep(int step) {
  for (Tensor& t : params_) {
    AdamUpdate(t, config_.learning_rate, config_.adam_beta1, config_.adam_beta2, config_.adam_epsilon, step);
  }
}

double FusionModel::LossAndGradients(std::span<const TokenEmbeddingMatrix> embeddings,
                                     const Matrix& engineered, std::span<const int> labels,
                                     const ForwardOptions& options) {
  const std::size_t n = CheckInputs(embeddings, engineered);
  if (n == 0 || labels.size() != n) throw InvalidArgument("labels must align with a non-empty batch");
  for (int y : labels) {
    if (y < 0 || y >= config_.classes) throw InvalidArgument("label out of range");
  }
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  const Batch batch = MakeBatch(embeddings, engineered, rows);
  Cache cache;
  Forward(batch, options, &cache);
  return Backward(batch, cache, labels);
}

void FusionModel::Train(std::span<const TokenEmbeddingMatrix> embeddings, const Matrix& engineered,
                        std::span<const int> labels) {
  const std::size_t n = CheckInputs(embeddings, engineered);
  if (labels.size() != n) {
    throw InvalidArgument("got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                          " documents");
  }
  if (n < 2) throw InvalidArgument("training needs at least 2 documents");
  for (int y : labels) {
    if (y < 0 || y >= config_.classes) throw InvalidArgument("label " + std::to_string(y) + " out of range");
  }
  history_ = {};
  for (Tensor& t : params_) {
    t.adam_m.setZero();
    t.adam_v.setZero();
  }
  Rng dropout_rng(DeriveSeed(config_.seed, "dropout"));
  const std::uint64_t shuffle_seed = DeriveSeed(config_.seed, "shuffle");
  int step = 0;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(DeriveSeed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    shuffle.Shuffle(std::span<std::size_t>(order));

    std::vector<std::pair<std::size_t, std::size_t>> chunks;
    for (std::size_t s = 0; s < n; s += config_.batch_size) {
      chunks.emplace_back(s, std::min(n, s + config_.batch_size));
    }
    // A one-document batch has no batch statistics; fold it into the previous one.
    if (chunks.size() > 1 && chunks.back().second - chunks.back().first == 1) {
      chunks[chunks.size() - 2].second = n;
      chunks.pop_back();
    }

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t bi = 0; bi < chunks.size(); ++bi) {
      const auto [s, e] = chunks[bi];
      const std::span<const std::size_t> rows(order.data() + s, e - s);
      std::vector<int> y;
      for (std::size_t r : rows) y.push_back(labels[r]);
      const Batch batch = MakeBatch(embeddings, engineered, rows);
      Cache cache;
      const Matrix probs = Forward(batch, {true, true, &dropout_rng}, &cache);
      const double loss = Backward(batch, cache, y);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch + 1 << ", batch " << bi + 1
           << "; lower the learning rate (currently " << config_.learning_rate << ")";
        throw NumericalError(os.str());
      }
      UpdateRunningStats(cache);
      AdamStep(++step);
      loss_sum += loss * static_cast<double>(rows.size());
      const auto pred = ArgmaxRows(probs);
      for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
    }
    history_.loss.push_back(loss_sum / static_cast<double>(n));
    history_.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
  }
}

Matrix FusionModel::PredictProba(std::span<const TokenEmbeddingMatrix> embeddings,
                                 const Matrix& engineered) const {
  const std::size_t n = CheckInputs(embeddings, engineered);
  Matrix out(static_cast<Index>(n), config_.classes);
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < n; s += kChunk) {
    std::vector<std::size_t> rows(std::min(kChunk, n - s));
    std::iota(rows.begin(), rows.end(), s);
    const Batch batch = MakeBatch(embeddings, engineered, rows);
    out.middleRows(static_cast<Index>(s), static_cast<Index>(rows.size())) =
        Forward(batch, {false, false, nullptr}, nullptr);
  }
  return out;
}

std::vector<Prediction> FusionModel::Predict(std::span<const TokenEmbeddingMatrix> embeddings,
                                             const Matrix& engineered) const {
  const Matrix probs = PredictProba(embeddings, engineered);
  const auto labels = ArgmaxRows(probs);
  std::vector<Prediction> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.row(static_cast<Index>(i));
    out[i].probabilities.assign(row.data(), row.data() + row.size());
    out[i].label = labels[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence.

void FusionModel::Save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::string bytes(kWeightsMagic, sizeof(kWeightsMagic));
  auto put_u32 = [&](std::uint32_t v) { bytes.append(reinterpret_cast<const char*>(&v), sizeof(v)); };
  put_u32(static_cast<std::uint32_t>(params_.size() + buffers_.size()));
  auto put_tensor = [&](const Tensor& t) {
    put_u32(static_cast<std::uint32_t>(t.name.size()));
    bytes += t.name;
    put_u32(static_cast<std::uint32_t>(t.value.rows()));
    put_u32(static_cast<std::uint32_t>(t.value.cols()));
    bytes.append(reinterpret_cast<const char*>(t.value.data()),
                 static_cast<std::size_t>(t.value.size()) * sizeof(double));
  };
  for (const Tensor& t : params_) put_tensor(t);
  for (const Tensor& t : buffers_) put_tensor(t);
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write " + (dir / "weights.bin").string());
  }
  nlohmann::json j;
  j["format"] = "polfuse-fusion-model";
  j["version"] = kModelFormatVersion;
  j["config"] = ModelConfigToJson(config_);
  j["embed_dim"] = embed_dim_;
  j["engineered_dim"] = engineered_dim_;
  j["num_weights"] = num_weights();
  j["history"] = {{"loss", history_.loss}, {"accuracy", history_.accuracy}};
  std::ofstream out(dir / "model.json");
  out << j.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + (dir / "model.json").string());
}

FusionModel FusionModel::Load(const std::filesystem::path& dir) {
  std::ifstream jin(dir / "model.json");
  if (!jin) throw DataError("no model.json in " + dir.string());
  nlohmann::json j;
  try {
    jin >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt model.json in " + dir.string() + ": " + e.what());
  }
  if (j.value("format", "") != "polfuse-fusion-model" || !j.contains("version")) {
    throw DataError(dir.string() + " is not a fusion model artifact");
  }
  if (j["version"].get<int>() != kModelFormatVersion) {
    throw DataError("unsupported model version " + j["version"].dump());
  }
  FusionModel m = Build(ModelConfigFromJson(j.at("config")), j.at("embed_dim").get<std::size_t>(),
                        j.at("engineered_dim").get<std::size_t>());
  m.history_.loss = j.at("history").at("loss").get<std::vector<double>>();
  m.history_.accuracy = j.at("history").at("accuracy").get<std::vector<double>>();

  std::ifstream in(dir / "weights.bin", std::ios::binary);
  if (!in) throw DataError("no weights.bin in " + dir.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t len) {
    if (pos + len > bytes.size()) throw DataError("truncated weights.bin in " + dir.string());
    std::memcpy(dst, bytes.data() + pos, len);
    pos += len;
  };
  char magic[8];
  take(magic, sizeof(magic));
  if (std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0) {
    throw DataError("bad weights.bin magic in " + dir.string());
  }
  std::uint32_t count = 0;
  take(&count, sizeof(count));
  if (count != m.params_.size() + m.buffers_.size()) {
    throw DataError("weights.bin tensor count does not match the model config");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor& t = i < m.params_.size() ? m.params_[i] : m.buffers_[i - m.params_.size()];
    std::uint32_t len = 0, rows = 0, cols = 0;
    take(&len, sizeof(len));
    std::string name(len, '\0');
    take(name.data(), len);
    take(&rows, sizeof(rows));
    take(&cols, sizeof(cols));
    if (name != t.name || rows != t.value.rows() || cols != t.value.cols()) {
      throw DataError("weights.bin tensor '" + name + "' does not match the model config");
    }
    take(t.value.data(), static_cast<std::size_t>(t.value.size()) * sizeof(double));
  }
  if (pos != bytes.size()) throw DataError("trailing bytes in weights.bin");
  return m;
}

// ---------------------------------------------------------------------------

std::vector<int> ArgmaxRows(const Matrix& p) {
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Index i = 0; i < p.rows(); ++i) {
    Index best = 0;
    p.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

SoftmaxRegression SoftmaxRegression::Fit(const Matrix& x, std::span<const int> y, int classes,
                                         const Options& o) {
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != y.size()) {
    throw InvalidArgument("softmax regression: labels must align with a non-empty matrix");
  }
  if (classes < 2) throw InvalidArgument("softmax regression: need at least 2 classes");
  const Index n = x.rows();
  SoftmaxRegression m;
  Tensor w = MakeTensor("w", classes, x.cols(), 0.0);
  Tensor b = MakeTensor("b", 1, classes, 0.0);
  Matrix onehot = Matrix::Zero(n, classes);
  for (Index i = 0; i < n; ++i) {
    const int yi = y[static_cast<std::size_t>(i)];
    if (yi < 0 || yi >= classes) throw InvalidArgument("softmax regression: label out of range");
    onehot(i, yi) = 1.0;
  }
  for (int it = 1; it <= o.iterations; ++it) {
    Matrix logits = x * w.value.transpose();
    logits.rowwise() += b.value.row(0);
    const Matrix d = (LogSoftmax(logits).array().exp().matrix() - onehot) / static_cast<double>(n);
    w.grad.noalias() = d.transpose() * x;
    w.grad += o.l2 * w.value;
    b.grad.row(0) = d.colwise().sum();
    AdamUpdate(w, o.learning_rate, 0.9, 0.999, 1e-8, it);
    AdamUpdate(b, o.learning_rate, 0.9, 0.999, 1e-8, it);
  }
  m.w_ = std::move(w.value);
  m.b_ = b.value.row(0).transpose();
  return m;
}

Matrix SoftmaxRegression::PredictProba(const Matrix& x) const {
  if (x.cols() != w_.cols()) throw InvalidArgument("softmax regression: feature count mismatch");
  Matrix logits = x * w_.transpose();
  logits.rowwise() += b_.transpose();
  return LogSoftmax(logits).array().exp().matrix();
}

std::vector<int> SoftmaxRegression::PredictLabels(const Matrix& x) const {
  return ArgmaxRows(PredictProba(x));
}

}  // namespace polfuse
