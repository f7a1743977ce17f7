#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "molingo/layers.hpp"

namespace molingo::text {

inline constexpr std::size_t kEmbedDim = 64;
inline constexpr std::size_t kHashRows = 8192;
inline constexpr std::uint64_t kDefaultTableSeed = 0x6d6f6c696e676fULL;

// Per-token embeddings of one prompt. The empty prompt is the null prompt: a
// single reserved row with is_null set.
struct TokenEmbeddings {
  Tensor tokens;  // [k, E]
  bool is_null = false;

  std::size_t count() const { return tokens.dim(0); }
  std::size_t dim() const { return tokens.dim(1); }
  bool operator==(const TokenEmbeddings&) const = default;
};

std::vector<std::string> tokenize(const std::string& prompt);

// Frozen hashed-token encoder. Each lower-cased token hashes into a seeded
// table, optionally refined by an additive per-word vector, plus a sinusoidal
// position code.
class ToyTextEncoder {
 public:
  explicit ToyTextEncoder(std::uint64_t seed = kDefaultTableSeed, std::size_t dim = kEmbedDim);

  TokenEmbeddings encode(const std::string& prompt) const;
  // Mean of the token rows: one vector per label string.
  std::vector<double> pooled(const std::string& prompt) const;
  std::size_t dim() const { return dim_; }
  std::size_t row_of(const std::string& token) const;

  void set_refinement(const std::string& word, std::vector<double> delta);
  const std::map<std::string, std::vector<double>>& refinements() const { return refinement_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  Tensor table_;     // [kHashRows, E]
  Tensor null_row_;  // [1, E]
  std::map<std::string, std::vector<double>> refinement_;
};

// Encodes with the process-wide default toy encoder.
TokenEmbeddings toy_encode(const std::string& prompt);
const ToyTextEncoder& default_encoder();

using EmbeddingMap = std::map<std::string, TokenEmbeddings>;

inline constexpr char kEmbeddingMagic[] = "MLEMBEDS";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

void export_embeddings(const std::filesystem::path& path, const EmbeddingMap& embeddings);
// expected_dim = 0 accepts any width; otherwise a mismatch names both widths.
EmbeddingMap import_embeddings(const std::filesystem::path& path, std::size_t expected_dim = 0);

// Imported embeddings first, the toy encoder for anything else.
class PromptEncoder {
 public:
  PromptEncoder() = default;
  explicit PromptEncoder(EmbeddingMap imported) : imported_(std::move(imported)) {}

  // Sets *fell_back when the prompt was missing from the imported map.
  TokenEmbeddings encode(const std::string& prompt, bool* fell_back = nullptr) const;
  std::size_t dim() const;
  bool has_imports() const { return !imported_.empty(); }

 private:
  EmbeddingMap imported_;
};

struct AdapterConfig {
  std::size_t embed_dim = kEmbedDim;
  std::size_t model_dim = 128;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t l_text = 128;
};

// Adapted text tokens for one prompt, padded to l_text.
struct TextConditioning {
  Tensor w;                        // [l_text, D_h]
  std::vector<std::uint8_t> mask;  // [l_text], 1 = valid
};

// Batched adapter output, trimmed to the longest valid prompt in the batch.
struct BatchConditioning {
  ag::Var w;                       // [B, L, D_h]
  std::vector<std::uint8_t> mask;  // [B * L]
  std::size_t length = 0;
};

// Linear E -> D_h, then `depth` pre-norm transformer encoder blocks whose
// self-attention is masked at padding. Null prompts use a learned embedding.
class TextAdapter {
 public:
  TextAdapter() = default;
  TextAdapter(nn::ParamSet& ps, const std::string& name, const AdapterConfig& config, Rng& rng);

  BatchConditioning forward(const std::vector<const TokenEmbeddings*>& batch) const;
  TextConditioning adapt(const TokenEmbeddings& tokens) const;
  const AdapterConfig& config() const { return config_; }

 private:
  struct Block {
    nn::LayerNorm norm1, norm2;
    nn::MultiHeadAttention attn;
    nn::FeedForward ffn;
  };
  AdapterConfig config_;
  nn::Linear proj_;
  ag::Var null_embedding_;
  std::vector<Block> blocks_;
};

}  // namespace molingo::text
