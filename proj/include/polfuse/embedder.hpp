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

// Contextual token embeddings for the embedding channel. The core never
// depends on a transformer implementation: real models run out of process
// and hand matrices over through the embedding cache.

#ifndef POLFUSE_EMBEDDER_HPP_
#define POLFUSE_EMBEDDER_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polfuse/text.hpp"

namespace polfuse {

struct LabeledDataset;

enum class Casing { kCased, kUncased };
enum class LanguageProfile { kEnBase, kMultilingual };

struct EmbedderSpec {
  std::string name = "stub";  // "stub" or an external model name
  std::size_t embed_dim = 768;
  Casing casing = Casing::kUncased;
  LanguageProfile language_profile = LanguageProfile::kEnBase;
  std::size_t max_len = kDefaultMaxTokens;
  // Stub only: context window and seed.
  std::size_t window = 3;
  std::uint64_t seed = 0;
  // Weights snapshot the matrices come from; "base" before fine-tuning.
  std::string snapshot = "base";

  bool is_stub() const { return name == "stub"; }
  // Stable identifier of everything that affects the produced matrices.
  std::string Fingerprint() const;
};

// "stub", "bert-base-uncased" (en) and "bert-base-multilingual-uncased"
// (pt) presets.
EmbedderSpec EmbedderPreset(std::string_view name);

struct TokenEmbeddingMatrix {
  std::size_t rows = 0;  // max_len
  std::size_t cols = 0;  // embed_dim
  std::vector<float> data;           // row-major rows x cols
  std::vector<std::uint8_t> mask;    // 1 = real token

  const float* row(std::size_t r) const { return data.data() + r * cols; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool operator==(const TokenEmbeddingMatrix&) const = default;
};

// Cleaning, casing and shaping for the embedding channel.
TokenSequence PrepareSequence(std::string_view text, const EmbedderSpec& spec);

// Deterministic weakly-contextual embedding: the vector of token t at
// position i is a seeded hash of (t, i mod window) expanded into dim values
// in [-1, 1). Every value is a multiple of 2^-23, so it is exact in float32
// on every platform. Pad positions all carry the [PAD] vector of phase 0.
TokenEmbeddingMatrix StubEmbed(const TokenSequence& seq, std::size_t dim, std::uint64_t seed,
                               std::size_t window = 3);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual const EmbedderSpec& spec() const = 0;
  std::string snapshot_id() const { return spec().snapshot; }
  // Whether matrices can be computed in process.
  virtual bool available() const = 0;
  virtual TokenEmbeddingMatrix Embed(const TokenSequence& seq) const = 0;
  // Returns the new snapshot id. Zero epochs returns the current snapshot;
  // otherwise adapters without a trainable model raise a capability error.
  virtual std::string FineTune(const LabeledDataset& dataset, int epochs);
};

class StubEmbedder final : public Embedder {
 public:
  explicit StubEmbedder(EmbedderSpec spec);
  const EmbedderSpec& spec() const override { return spec_; }
  bool available() const override { return true; }
  TokenEmbeddingMatrix Embed(const TokenSequence& seq) const override;

 private:
  EmbedderSpec spec_;
};

// A transformer run by an external adapter that writes into the embedding
// cache. Embed() always raises a capability error: there is no silent
// fallback to the stub.
class ExternalEmbedder final : public Embedder {
 public:
  explicit ExternalEmbedder(EmbedderSpec spec) : spec_(std::move(spec)) {}
  const EmbedderSpec& spec() const override { return spec_; }
  bool available() const override { return false; }
  TokenEmbeddingMatrix Embed(const TokenSequence& seq) const override;

 private:
  EmbedderSpec spec_;
};

std::unique_ptr<Embedder> MakeEmbedder(const EmbedderSpec& spec);

// On-disk cache keyed by (document id, spec fingerprint, snapshot id):
//   <root>/<fingerprint>/<snapshot>/index.json   {"version":1,"entries":{id:file}}
//   <root>/<fingerprint>/<snapshot>/<file>.emb
// .emb layout (little-endian): "PFEMB\0\0\1", u32 rows, u32 cols,
// rows*cols float32, rows mask bytes. Entry files are written atomically
// (temp file + rename).
class EmbeddingCache {
 public:
  EmbeddingCache(std::filesystem::path root, const EmbedderSpec& spec);

  const std::filesystem::path& directory() const { return dir_; }
  std::optional<TokenEmbeddingMatrix> Get(const std::string& doc_id) const;
  void Put(const std::string& doc_id, const TokenEmbeddingMatrix& m);
  bool Contains(const std::string& doc_id) const { return entries_.count(doc_id) > 0; }
  std::size_t size() const { return entries_.size(); }
  // Rewrites index.json atomically.
  void Flush() const;

  static std::string EntryFileName(const std::string& doc_id);

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> entries_;
  std::string fingerprint_;
  std::string snapshot_;
};

void WriteEmbeddingFile(const std::filesystem::path& path, const TokenEmbeddingMatrix& m);
TokenEmbeddingMatrix ReadEmbeddingFile(const std::filesystem::path& path);

}  // namespace polfuse

#endif  // POLFUSE_EMBEDDER_HPP_
