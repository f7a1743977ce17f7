#include "molingo/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "molingo/container.hpp"
#include "molingo/errors.hpp"

namespace molingo::text {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string clean_token(const std::string& raw) {
  std::string out;
  for (unsigned char c : raw)
    if (std::isalnum(c) || c == '-' || c == '\'') out.push_back(static_cast<char>(std::tolower(c)));
  return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& prompt) {
  std::istringstream in(prompt);
  std::vector<std::string> out;
  std::string word;
  while (in >> word) {
    std::string t = clean_token(word);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

ToyTextEncoder::ToyTextEncoder(std::uint64_t seed, std::size_t dim)
    : seed_(seed), dim_(dim), table_({kHashRows, dim}), null_row_({1, dim}) {
  if (dim < 2) throw std::invalid_argument("text embedding width must be at least 2");
  Rng rng(seed);
  for (auto& v : table_.data()) v = rng.normal();
  for (auto& v : null_row_.data()) v = rng.normal();
}

std::size_t ToyTextEncoder::row_of(const std::string& token) const {
  return static_cast<std::size_t>(mix_seed(fnv1a(token) ^ seed_) % kHashRows);
}

void ToyTextEncoder::set_refinement(const std::string& word, std::vector<double> delta) {
  if (delta.size() != dim_) throw ShapeError("refinement vector width does not match the encoder");
  refinement_[clean_token(word)] = std::move(delta);
}

TokenEmbeddings ToyTextEncoder::encode(const std::string& prompt) const {
  const auto tokens = tokenize(prompt);
  TokenEmbeddings out;
  if (tokens.empty()) {
    out.tokens = null_row_;
    out.is_null = true;
    return out;
  }
  std::vector<double> positions(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<double>(i);
  out.tokens = nn::sinusoidal_embedding(positions, dim_, 100.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const double* row = table_.ptr() + row_of(tokens[i]) * dim_;
    double* dst = out.tokens.ptr() + i * dim_;
    for (std::size_t c = 0; c < dim_; ++c) dst[c] += row[c];
    if (auto it = refinement_.find(tokens[i]); it != refinement_.end())
      for (std::size_t c = 0; c < dim_; ++c) dst[c] += it->second[c];
  }
  return out;
}

std::vector<double> ToyTextEncoder::pooled(const std::string& prompt) const {
  const TokenEmbeddings e = encode(prompt);
  std::vector<double> out(dim_, 0.0);
  for (std::size_t r = 0; r < e.count(); ++r)
    for (std::size_t c = 0; c < dim_; ++c) out[c] += e.tokens.at(r, c);
  for (auto& v : out) v /= static_cast<double>(e.count());
  return out;
}

const ToyTextEncoder& default_encoder() {
  static const ToyTextEncoder encoder;
  return encoder;
}

TokenEmbeddings toy_encode(const std::string& prompt) { return default_encoder().encode(prompt); }

void export_embeddings(const std::filesystem::path& path, const EmbeddingMap& embeddings) {
  std::vector<io::Record> records;
  for (const auto& [prompt, e] : embeddings) {
    io::ByteWriter w;
    w.string(prompt);
    w.u8(e.is_null ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(e.count()));
    w.u32(static_cast<std::uint32_t>(e.dim()));
    for (double v : e.tokens.data()) w.f32(static_cast<float>(v));
    records.push_back({1, w.take()});
  }
  io::write_container(path, std::string_view(kEmbeddingMagic, 8), kEmbeddingVersion, records);
}

EmbeddingMap import_embeddings(const std::filesystem::path& path, std::size_t expected_dim) {
  EmbeddingMap out;
  for (const auto& rec : io::read_container(path, std::string_view(kEmbeddingMagic, 8), kEmbeddingVersion)) {
    io::ByteReader r(rec.payload);
    std::string prompt = r.string();
    TokenEmbeddings e;
    e.is_null = r.u8() != 0;
    const std::size_t k = r.u32(), dim = r.u32();
    if (k == 0 || dim == 0) throw io::FormatError(path.string() + ": empty embedding matrix for '" + prompt + "'");
    if (expected_dim != 0 && dim != expected_dim) {
      throw ShapeError(path.string() + ": embedding width " + std::to_string(dim) + " does not match model width " +
                       std::to_string(expected_dim));
    }
    e.tokens = Tensor({k, dim});
    for (auto& v : e.tokens.data()) v = r.f32();
    if (!r.done()) throw io::FormatError(path.string() + ": trailing bytes in embedding record");
    out.emplace(std::move(prompt), std::move(e));
  }
  return out;
}

TokenEmbeddings PromptEncoder::encode(const std::string& prompt, bool* fell_back) const {
  if (auto it = imported_.find(prompt); it != imported_.end()) {
    if (fell_back) *fell_back = false;
    return it->second;
  }
  if (fell_back) *fell_back = has_imports();
  return toy_encode(prompt);
}

std::size_t PromptEncoder::dim() const {
  return imported_.empty() ? default_encoder().dim() : imported_.begin()->second.dim();
}

TextAdapter::TextAdapter(nn::ParamSet& ps, const std::string& name, const AdapterConfig& config, Rng& rng)
    : config_(config), proj_(ps, name + ".proj", config.embed_dim, config.model_dim, rng) {
  if (config.l_text < 1) throw std::invalid_argument("l_text must be at least 1");
  Tensor null_init({1, config.embed_dim});
  for (auto& v : null_init.data()) v = rng.normal();
  null_embedding_ = ps.add(name + ".null", std::move(null_init));
  for (std::size_t i = 0; i < config.depth; ++i) {
    const std::string b = name + ".block" + std::to_string(i);
    blocks_.push_back({nn::LayerNorm(ps, b + ".norm1", config.model_dim),
                       nn::LayerNorm(ps, b + ".norm2", config.model_dim),
                       nn::MultiHeadAttention(ps, b + ".attn", config.model_dim, config.heads, rng),
                       nn::FeedForward(ps, b + ".ffn", config.model_dim, config.ffn_mult * config.model_dim, rng)});
  }
}

BatchConditioning TextAdapter::forward(const std::vector<const TokenEmbeddings*>& batch) const {
  if (batch.empty()) throw std::invalid_argument("text adapter: empty batch");
  const std::size_t e = config_.embed_dim;
  std::size_t len = 1;
  for (const auto* t : batch) {
    if (t->dim() != e) {
      throw ShapeError("text embedding width " + std::to_string(t->dim()) + " does not match adapter width " +
                       std::to_string(e));
    }
    len = std::max(len, std::min(t->count(), config_.l_text));
  }
  const std::size_t b = batch.size();
  Tensor x({b, len, e});
  Tensor null_select({b * len, 1});
  BatchConditioning out;
  out.length = len;
  out.mask.assign(b * len, 0);
  bool any_null = false;
  for (std::size_t i = 0; i < b; ++i) {
    const auto* t = batch[i];
    if (t->is_null) {
      null_select[i * len] = 1.0;
      out.mask[i * len] = 1;
      any_null = true;
      continue;
    }
    const std::size_t k = std::min(t->count(), len);
    std::copy_n(t->tokens.ptr(), k * e, x.ptr() + i * len * e);
    std::fill_n(out.mask.begin() + static_cast<std::ptrdiff_t>(i * len), k, 1);
  }
  ag::Var h = ag::constant(std::move(x));
  if (any_null)
    h = ag::add(h, ag::reshape(ag::matmul(ag::constant(std::move(null_select)), null_embedding_), {b, len, e}));
  h = proj_(h);
  for (const auto& blk : blocks_) {
    ag::Var n1 = blk.norm1(h);
    h = ag::add(h, blk.attn(n1, n1, &out.mask));
    h = ag::add(h, blk.ffn(blk.norm2(h)));
  }
  out.w = h;
  return out;
}

TextConditioning TextAdapter::adapt(const TokenEmbeddings& tokens) const {
  ag::NoGradGuard ng;
  const BatchConditioning bc = forward({&tokens});
  const std::size_t d = config_.model_dim;
  TextConditioning out{Tensor({config_.l_text, d}), std::vector<std::uint8_t>(config_.l_text, 0)};
  for (std::size_t i = 0; i < bc.length; ++i) {
    if (!bc.mask[i]) continue;
    out.mask[i] = 1;
    std::copy_n(bc.w.value().ptr() + i * d, d, out.w.ptr() + i * d);
  }
  return out;
}

}  // namespace molingo::text
