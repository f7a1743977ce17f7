#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "molingo/autoencoder.hpp"
#include "molingo/checkpoint.hpp"
#include "molingo/layers.hpp"
#include "molingo/text.hpp"

namespace molingo::gen {

using ag::Var;

struct GeneratorConfig {
  std::size_t latent_dim = 16;
  std::size_t model_dim = 128;  // D_h
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t max_positions = 64;
  std::size_t head_blocks = 4;
  std::size_t head_width = 256;
  std::size_t time_freqs = 64;
  double mask_min = 0.7;
  double mask_max = 1.0;
  double cfg_dropout = 0.1;
  double ema_decay = 0.9999;
  text::AdapterConfig adapter{};  // model_dim is kept equal to model_dim above

  // Training.
  double lr = 8e-4;
  std::size_t warmup = 200;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  std::size_t flow_batch_mul = 4;  // noise draws per masked position
  double grad_clip = 1.0;
  bool ema_warmup = true;  // effective decay min(decay, (1 + k) / (10 + k))

  void validate() const;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

// ---------------------------------------------------------------------------
// Flow matching on the linear path m_t = (1 - t) m + t eps.

Tensor flow_interpolate(const Tensor& m, const Tensor& eps, double t);
Tensor flow_target(const Tensor& m, const Tensor& eps);

// ---------------------------------------------------------------------------
// Masking

// ceil(r * l), clamped to [1, l].
std::size_t mask_count(std::size_t l, double ratio);
// Ratio ~ U[mask_min, mask_max] unless `forced_ratio` >= 0.
std::vector<std::size_t> choose_mask(std::size_t l, double mask_min, double mask_max, Rng& rng,
                                     double forced_ratio = -1.0);

struct MaskedLatents {
  Tensor sequence;                   // [l, d] with masked rows set to the mask latent
  std::vector<std::size_t> mask_set;  // sorted
};

// Per-sample prompt drop decisions for classifier-free guidance training.
std::vector<std::uint8_t> cfg_drop_flags(std::size_t batch, double p, Rng& rng);

// Per-dimension latent normalization used by the generator.
struct LatentStats {
  Tensor mean;  // [d]
  Tensor std;   // [d]
  Tensor normalize(const Tensor& latents) const;
  Tensor denormalize(const Tensor& latents) const;
};

class Generator {
 public:
  Generator(const GeneratorConfig& config, std::uint64_t seed);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  MaskedLatents mask_latents(const Tensor& latents, Rng& rng, double forced_ratio = -1.0) const;

  // latents [B, l, d] with mask flags [B * l] (1 = replace by the mask latent).
  Var masked_input(const Tensor& latents, const std::vector<std::uint8_t>& masked) const;
  text::BatchConditioning encode_text(const std::vector<const text::TokenEmbeddings*>& prompts) const;
  // Transformer over masked latents [B, l, d] -> z [B, l, D_h]. valid is the
  // [B * l] key mask over latent positions (nullptr = all valid).
  Var conditioning_forward(const Var& masked, const text::BatchConditioning& text,
                           const std::vector<std::uint8_t>* valid) const;
  // Flow head: noisy [M, d], t (one per row), z [M, D_h] -> velocity [M, d].
  Var velocity(const Var& noisy, const std::vector<double>& t, const Var& z) const;

  const GeneratorConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  const Tensor& mask_latent() const { return mask_latent_.value(); }
  const LatentStats& latent_stats() const { return latent_stats_; }
  void set_latent_stats(LatentStats s);

  // Autoencoder compatibility recorded at training time.
  std::size_t ae_downsample = 4;
  std::string ae_variant;

  // ema: optional shadow weights written as "ema.*".
  ckpt::Checkpoint to_checkpoint(const std::vector<Tensor>* ema) const;
  // Loads the EMA weights when present and use_ema is set.
  static std::unique_ptr<Generator> from_checkpoint(const ckpt::Checkpoint& c, bool use_ema = true);

 private:
  struct Block {
    nn::LayerNorm norm_self, norm_cross, norm_mlp;
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::FeedForward mlp;
  };
  struct HeadBlock {
    nn::Linear ada, fc1, fc2;
  };

  GeneratorConfig config_;
  nn::ParamSet params_;
  Var mask_latent_;
  Var positions_;
  nn::Linear embed_;
  text::TextAdapter adapter_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_norm_;
  // flow head
  nn::Linear time_fc1_, time_fc2_, cond_proj_, head_in_, head_final_ada_, head_out_;
  std::vector<HeadBlock> head_blocks_;
  LatentStats latent_stats_;
};

// Mean squared error between head output and eps - m at rows of z_rows,
// repeated `repeats` times with fresh (t, eps) draws.
Var flow_loss(const Generator& g, const Var& z_rows, const Tensor& m_rows, Rng& rng, std::size_t repeats = 1);

// ---------------------------------------------------------------------------
// Training

struct GenLogEntry {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
  std::size_t masked = 0;
  std::size_t dropped = 0;
};

struct GenTrainResult {
  std::unique_ptr<Generator> model;  // raw weights
  std::vector<Tensor> ema;           // shadow weights, same order as model->params()
  std::vector<GenLogEntry> history;
  bool diverged = false;
  std::string message;
};

GenTrainResult train_generator(const motion::Corpus& corpus, const ae::Autoencoder& autoencoder,
                               const GeneratorConfig& config, std::uint64_t seed,
                               const text::PromptEncoder& prompts = {},
                               const std::function<void(const GenLogEntry&)>& on_step = {});

}  // namespace molingo::gen
