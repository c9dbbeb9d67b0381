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

#include "polfuse/embedder.hpp"

#include <unistd.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "polfuse/common.hpp"

namespace polfuse {
namespace {

static_assert(std::endian::native == std::endian::little,
              "embedding files are read and written as little-endian");

constexpr char kEmbMagic[8] = {'P', 'F', 'E', 'M', 'B', '\0', '\0', '\1'};

std::string Sanitize(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    out.push_back(ok ? c : '_');
  }
  return out;
}

std::filesystem::path TempSibling(const std::filesystem::path& target) {
  static std::uint64_t counter = 0;
  return target.string() + ".tmp." + std::to_string(::getpid()) + "." + std::to_string(++counter);
}

void AtomicWrite(const std::filesystem::path& target, const std::string& bytes) {
  const auto tmp = TempSibling(target);
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace

std::string EmbedderSpec::Fingerprint() const {
  std::ostringstream os;
  os << Sanitize(name) << "-d" << embed_dim << "-L" << max_len << '-'
     << (casing == Casing::kUncased ? "uncased" : "cased") << '-'
     << (language_profile == LanguageProfile::kEnBase ? "en" : "multi");
  if (is_stub()) os << "-w" << window << "-s" << seed;
  return os.str();
}

EmbedderSpec EmbedderPreset(std::string_view name) {
  EmbedderSpec spec;
  if (name == "stub") return spec;
  if (name == "bert-base-uncased") {
    spec.name = "bert-base-uncased";
    spec.language_profile = LanguageProfile::kEnBase;
    return spec;
  }
  if (name == "bert-base-multilingual-uncased") {
    spec.name = "bert-base-multilingual-uncased";
    spec.language_profile = LanguageProfile::kMultilingual;
    return spec;
  }
  throw ConfigError("unknown embedder preset '" + std::string(name) + "'");
}

TokenSequence PrepareSequence(std::string_view text, const EmbedderSpec& spec) {
  std::string cleaned = CleanText(text);
  if (spec.casing == Casing::kUncased) cleaned = ToLower(cleaned);
  const auto tokens = SplitWhitespace(cleaned);
  return ShapeTokens(tokens, spec.max_len);
}

TokenEmbeddingMatrix StubEmbed(const TokenSequence& seq, std::size_t dim, std::uint64_t seed,
                               std::size_t window) {
  if (dim == 0) throw InvalidArgument("stub embedder: dim must be >= 1");
  if (window == 0) throw InvalidArgument("stub embedder: window must be >= 1");
  TokenEmbeddingMatrix m;
  m.rows = seq.max_len();
  m.cols = dim;
  m.data.resize(m.rows * m.cols);
  m.mask.resize(m.rows);
  const std::uint64_t seed_mix = SplitMix64(seed);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const bool pad = seq.is_pad(i);
    m.mask[i] = pad ? 0 : 1;
    const std::uint64_t phase = pad ? 0 : i % window;
    std::uint64_t state =
        SplitMix64(Fnv1a64(pad ? kPadToken : std::string_view(seq.tokens[i])) ^ seed_mix ^
                   (phase * 0x9e3779b97f4a7c15ULL));
    float* out = m.data.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      state = SplitMix64(state + j);
      const auto v = static_cast<std::int64_t>(state >> 40);  // 24 bits
      out[j] = static_cast<float>(static_cast<double>(v - (1 << 23)) * 0x1.0p-23);
    }
  }
  return m;
}

std::string Embedder::FineTune(const LabeledDataset&, int epochs) {
  if (epochs == 0) return snapshot_id();
  throw CapabilityError("embedder '" + spec().name +
                        "' cannot be fine-tuned in process; fine-tune with the external adapter "
                        "and set embedder.snapshot to the resulting snapshot id");
}

StubEmbedder::StubEmbedder(EmbedderSpec spec) : spec_(std::move(spec)) {
  if (spec_.embed_dim == 0) throw ConfigError("embedder: embed_dim must be > 0");
}

TokenEmbeddingMatrix StubEmbedder::Embed(const TokenSequence& seq) const {
  if (seq.max_len() != spec_.max_len) {
    throw InvalidArgument("stub embedder: sequence length " + std::to_string(seq.max_len()) +
                          " != max_len " + std::to_string(spec_.max_len));
  }
  return StubEmbed(seq, spec_.embed_dim, spec_.seed, spec_.window);
}

TokenEmbeddingMatrix ExternalEmbedder::Embed(const TokenSequence&) const {
  throw CapabilityError("embedder '" + spec_.name +
                        "' runs out of process; populate the embedding cache with the external "
                        "adapter before extracting features");
}

std::unique_ptr<Embedder> MakeEmbedder(const EmbedderSpec& spec) {
  if (spec.embed_dim == 0) throw ConfigError("embedder: embed_dim must be > 0");
  if (spec.max_len == 0) throw ConfigError("embedder: max_len must be > 0");
  if (spec.is_stub()) return std::make_unique<StubEmbedder>(spec);
  return std::make_unique<ExternalEmbedder>(spec);
}

void WriteEmbeddingFile(const std::filesystem::path& path, const TokenEmbeddingMatrix& m) {
  if (m.data.size() != m.rows * m.cols || m.mask.size() != m.rows) {
    throw InvalidArgument("embedding matrix has inconsistent shape");
  }
  std::string bytes(kEmbMagic, sizeof(kEmbMagic));
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)};
  bytes.append(reinterpret_cast<const char*>(dims), sizeof(dims));
  bytes.append(reinterpret_cast<const char*>(m.data.data()), m.data.size() * sizeof(float));
  bytes.append(reinterpret_cast<const char*>(m.mask.data()), m.mask.size());
  AtomicWrite(path, bytes);
}

TokenEmbeddingMatrix ReadEmbeddingFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  char magic[8];
  std::uint32_t dims[2];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || std::memcmp(magic, kEmbMagic, sizeof(magic)) != 0) {
    throw DataError("not an embedding file: " + path.string());
  }
  TokenEmbeddingMatrix m;
  m.rows = dims[0];
  m.cols = dims[1];
  m.data.resize(m.rows * m.cols);
  m.mask.resize(m.rows);
  in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(m.mask.data()), static_cast<std::streamsize>(m.mask.size()));
  if (!in) throw DataError("truncated embedding file: " + path.string());
  for (float v : m.data) {
    if (!std::isfinite(v)) throw DataError("non-finite value in embedding file " + path.string());
  }
  return m;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path root, const EmbedderSpec& spec)
    : dir_(std::move(root) / spec.Fingerprint() / Sanitize(spec.snapshot)),
      fingerprint_(spec.Fingerprint()),
      snapshot_(spec.snapshot) {
  std::filesystem::create_directories(dir_);
  const auto index = dir_ / "index.json";
  if (!std::filesystem::exists(index)) return;
  std::ifstream in(index);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt embedding cache index " + index.string() + ": " + e.what());
  }
  const nlohmann::json entries = j.value("entries", nlohmann::json::object());
  for (const auto& [id, file] : entries.items()) {
    if (!file.is_string()) throw DataError("corrupt embedding cache index " + index.string());
    entries_[id] = file.get<std::string>();
  }
}

std::string EmbeddingCache::EntryFileName(const std::string& doc_id) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(Fnv1a64(doc_id)));
  return Sanitize(doc_id.substr(0, 40)) + "-" + buf + ".emb";
}

std::optional<TokenEmbeddingMatrix> EmbeddingCache::Get(const std::string& doc_id) const {
  auto it = entries_.find(doc_id);
  if (it == entries_.end()) return std::nullopt;
  const auto path = dir_ / it->second;
  if (!std::filesystem::exists(path)) return std::nullopt;
  return ReadEmbeddingFile(path);
}

void EmbeddingCache::Put(const std::string& doc_id, const TokenEmbeddingMatrix& m) {
  const std::string file = EntryFileName(doc_id);
  WriteEmbeddingFile(dir_ / file, m);
  entries_[doc_id] = file;
}

void EmbeddingCache::Flush() const {
  nlohmann::json j;
  j["version"] = 1;
  j["fingerprint"] = fingerprint_;
  j["snapshot"] = snapshot_;
  j["entries"] = nlohmann::json::object();
  for (const auto& [id, file] : entries_) j["entries"][id] = file;
  AtomicWrite(dir_ / "index.json", j.dump(1) + "\n");
}

}  // namespace polfuse
