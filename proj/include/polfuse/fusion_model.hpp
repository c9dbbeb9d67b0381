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

// Convolutional fusion classifier over a token embedding matrix and an
// engineered feature vector:
//
//   embeddings -> 5 x (conv_w -> batchnorm -> global max pool) -> concat -> dropout --+
//                                                                                     +-> concat
//   engineered -> kernel-1 conv (projection) -> batchnorm ---------------------------+
//   concat -> dropout -> dense softmax
//
// Everything is plain double-precision Eigen code and single-threaded, so a
// fixed seed gives bitwise-identical training on one machine.

#ifndef POLFUSE_FUSION_MODEL_HPP_
#define POLFUSE_FUSION_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "polfuse/common.hpp"
#include "polfuse/embedder.hpp"
#include "polfuse/selection.hpp"

namespace polfuse {

enum Channel : unsigned {
  kChannelBert = 1u,
  kChannelSngram = 2u,
  kChannelPsych = 4u,
};

struct ChannelSet {
  unsigned bits = 0;

  bool has(Channel c) const { return (bits & c) != 0; }
  bool empty() const { return bits == 0; }
  bool bert() const { return has(kChannelBert); }
  // sngram and/or psych.
  bool engineered() const { return has(kChannelSngram) || has(kChannelPsych); }
  bool operator==(const ChannelSet&) const = default;

  // "bert", "sngram+psych", ... (also accepts ',' as separator).
  static ChannelSet Parse(std::string_view spec);
  // Canonical order bert, sngram, psych joined with '+'.
  std::string Name() const;
};

enum class Architecture {
  kFusionCnn,
  // Mean of the real-token embeddings -> dropout -> dense softmax.
  kPooledBaseline,
};

enum class ConvLayout {
  kParallel,    // five branches over the embeddings, pooled and concatenated
  kSequential,  // five stacked convolutions with ReLU in between, one pool
};

struct ModelConfig {
  std::vector<std::size_t> conv_widths = {2, 3, 4, 5, 6};
  std::size_t filters = 128;
  std::size_t projection_units = 128;
  double dropout = 0.5;
  int classes = 2;
  int epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  std::uint64_t seed = 0;
  ChannelSet channels{kChannelBert | kChannelSngram | kChannelPsych};
  Architecture architecture = Architecture::kFusionCnn;
  ConvLayout layout = ConvLayout::kParallel;

  // Throws ConfigError on any violated invariant.
  void Validate() const;
};

std::string_view ArchitectureName(Architecture a);
std::string_view ConvLayoutName(ConvLayout l);

// JSON form used in configs and model artifacts. Missing keys keep the
// values of `base`; unknown keys are rejected.
nlohmann::json ModelConfigToJson(const ModelConfig& config);
ModelConfig ModelConfigFromJson(const nlohmann::json& j, ModelConfig base = {});

// Copy of `config` wired for `channels` only. Throws on an empty set.
ModelConfig Ablate(const ModelConfig& config, ChannelSet channels);

struct Prediction {
  std::vector<double> probabilities;
  int label = 0;
};

struct TrainingHistory {
  std::vector<double> loss;      // mean cross-entropy per epoch
  std::vector<double> accuracy;  // training accuracy per epoch
};

// A named weight or state tensor (row-major).
struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
};

struct ForwardOptions {
  bool batch_stats = true;  // batchnorm uses batch statistics
  bool dropout = true;
  Rng* rng = nullptr;       // required when dropout is on
};

class FusionModel {
 public:
  FusionModel() = default;

  // Throws ConfigError when a wired channel has dimension 0.
  static FusionModel Build(const ModelConfig& config, std::size_t embed_dim,
                           std::size_t engineered_dim);

  const ModelConfig& config() const { return config_; }
  std::size_t embed_dim() const { return embed_dim_; }
  std::size_t engineered_dim() const { return engineered_dim_; }
  int output_dim() const { return config_.classes; }
  const TrainingHistory& history() const { return history_; }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  // Batchnorm running means and variances.
  std::vector<Tensor>& buffers() { return buffers_; }
  const std::vector<Tensor>& buffers() const { return buffers_; }
  const Tensor& parameter(std::string_view name) const;
  std::size_t num_weights() const;

  // Unused channels may be passed empty (no rows / no columns).
  void Train(std::span<const TokenEmbeddingMatrix> embeddings, const Matrix& engineered,
             std::span<const int> labels);

  // Inference mode: running batchnorm statistics, no dropout.
  Matrix PredictProba(std::span<const TokenEmbeddingMatrix> embeddings,
                      const Matrix& engineered) const;
  std::vector<Prediction> Predict(std::span<const TokenEmbeddingMatrix> embeddings,
                                  const Matrix& engineered) const;

  // Mean cross-entropy of one batch; fills every parameter's grad.
  double LossAndGradients(std::span<const TokenEmbeddingMatrix> embeddings,
                          const Matrix& engineered, std::span<const int> labels,
                          const ForwardOptions& options);

  // <dir>/weights.bin and <dir>/model.json.
  void Save(const std::filesystem::path& dir) const;
  static FusionModel Load(const std::filesystem::path& dir);

 private:
  struct Cache;
  struct Batch {
    std::vector<const TokenEmbeddingMatrix*> embeddings;
    Matrix engineered;
    std::size_t rows = 0;
  };

  std::size_t CheckInputs(std::span<const TokenEmbeddingMatrix> embeddings,
                          const Matrix& engineered) const;
  Batch MakeBatch(std::span<const TokenEmbeddingMatrix> embeddings, const Matrix& engineered,
                  std::span<const std::size_t> rows) const;
  Matrix Forward(const Batch& batch, const ForwardOptions& options, Cache* cache) const;
  double Backward(const Batch& batch, const Cache& cache, std::span<const int> labels);
  void UpdateRunningStats(const Cache& cache);
  void InitParameters();
  void AdamStep(int step);
  std::size_t head_inputs() const;

  ModelConfig config_;
  std::size_t embed_dim_ = 0;
  std::size_t engineered_dim_ = 0;
  std::vector<Tensor> params_;
  std::vector<Tensor> buffers_;
  TrainingHistory history_;
  // Indices into params_ / buffers_.
  std::vector<std::size_t> conv_, bn_gamma_, bn_beta_, bn_mean_, bn_var_;
  std::size_t proj_ = 0, proj_gamma_ = 0, proj_beta_ = 0, proj_mean_ = 0, proj_var_ = 0;
  std::size_t head_w_ = 0, head_b_ = 0;
};

// Multinomial logistic regression with L2 penalty, trained by full-batch
// Adam. Used for the bag-of-words reference model and for scoring feature
// counts during grid search.
class SoftmaxRegression {
 public:
  struct Options {
    double l2 = 1e-3;
    int iterations = 300;
    double learning_rate = 0.05;
  };

  static SoftmaxRegression Fit(const Matrix& x, std::span<const int> y, int classes,
                               const Options& options);
  static SoftmaxRegression Fit(const Matrix& x, std::span<const int> y, int classes) {
    return Fit(x, y, classes, Options{});
  }
  Matrix PredictProba(const Matrix& x) const;
  std::vector<int> PredictLabels(const Matrix& x) const;
  const Matrix& weights() const { return w_; }  // classes x features
  const Vector& bias() const { return b_; }

 private:
  Matrix w_;
  Vector b_;
};

std::vector<int> ArgmaxRows(const Matrix& probabilities);

}  // namespace polfuse

#endif  // POLFUSE_FUSION_MODEL_HPP_
