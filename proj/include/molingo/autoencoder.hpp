#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "molingo/checkpoint.hpp"
#include "molingo/layers.hpp"
#include "molingo/motion.hpp"
#include "molingo/text.hpp"

namespace molingo::ae {

using ag::Var;
using motion::MotionSequence;
using motion::NormalizationStats;
using motion::RepresentationSpec;

enum class Variant { AE, VAE, SAE };
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct AutoencoderConfig {
  Variant variant = Variant::SAE;
  std::size_t hidden = 64;
  std::size_t latent_dim = 16;
  std::size_t downsample = 4;  // 2 or 4
  double lambda_joint = 1.0;
  double lambda_vel = 10.0;
  double lambda_kl = 1e-5;
  double lambda_sem = 1e-3;
  double tau = 0.995;
  std::size_t text_dim = text::kEmbedDim;

  // Training.
  double lr = 5e-5;
  std::size_t batch = 32;
  std::size_t crop = 64;
  std::size_t steps = 2000;
  double grad_clip = 1.0;

  void validate() const;
  std::size_t stages() const { return downsample == 4 ? 2 : 1; }
  bool stochastic() const { return variant != Variant::AE; }
};

void to_json(nlohmann::json& j, const AutoencoderConfig& c);
void from_json(const nlohmann::json& j, AutoencoderConfig& c);

// Latents of one sequence. mean/log_var are filled for VAE/SAE.
struct LatentSequence {
  Tensor latents;  // [l, d]
  Tensor mean;
  Tensor log_var;
  std::size_t h = 4;
  std::size_t frames = 0;  // original N before padding
  std::size_t length() const { return latents.dim(0); }
};

struct EncodeOutput {
  Var mean;     // [B, l, d]
  Var log_var;  // empty for AE
  Var sample;   // mean for AE or when no rng is given
};

// mean + exp(log_var / 2) * noise. log_var = -inf gives exactly mean.
Var reparameterize(const Var& mean, const Var& log_var, const Tensor& noise);

class Autoencoder {
 public:
  Autoencoder(const AutoencoderConfig& config, const RepresentationSpec& spec, std::uint64_t seed);
  Autoencoder(const Autoencoder&) = delete;
  Autoencoder& operator=(const Autoencoder&) = delete;

  // Batched paths over normalized features x [B, T, D] with T a multiple of h.
  EncodeOutput encode_batch(const Var& x, Rng* rng) const;
  Var decode_batch(const Var& z) const;
  // The first encoder convolution alone, without its bias.
  Var input_conv_without_bias(const Var& x) const;
  // Class-token projector E -> d (SAE only).
  Var project_labels(const Var& embeddings) const;

  // Sequence paths over raw motion: normalize, edge-pad, encode. The sample is
  // drawn from rng when given (VAE/SAE), else the mean is used.
  LatentSequence encode(const MotionSequence& raw, Rng* rng = nullptr) const;
  // Decodes [l, d] latents, truncates to `frames` and denormalizes.
  MotionSequence decode(const Tensor& latents, std::size_t frames) const;
  MotionSequence reconstruct(const MotionSequence& raw) const;

  const AutoencoderConfig& config() const { return config_; }
  const RepresentationSpec& spec() const { return spec_; }
  const NormalizationStats& stats() const { return stats_; }
  void set_stats(NormalizationStats stats);
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  ckpt::Checkpoint to_checkpoint() const;
  static std::unique_ptr<Autoencoder> from_checkpoint(const ckpt::Checkpoint& c);

 private:
  struct ResBlock {
    nn::CausalConv1d conv1, conv2;
  };
  struct Stage {
    nn::CausalConv1d resample;  // stride-2 conv (encoder) or post-upsample conv (decoder)
    std::vector<ResBlock> res;
  };
  Var res_stack(const std::vector<ResBlock>& blocks, Var x) const;

  AutoencoderConfig config_;
  RepresentationSpec spec_;
  NormalizationStats stats_;
  nn::ParamSet params_;
  nn::CausalConv1d enc_in_, enc_out_, dec_in_, dec_mid_, dec_out_;
  std::vector<Stage> enc_stages_, dec_stages_;
  nn::Linear to_latent_;
  nn::Linear projector_;
};

// ---------------------------------------------------------------------------
// Losses

struct ReconLoss {
  Var feat, joint, vel, total;
  bool vel_defined = true;  // false when T < 2 (vel is then 0)
};

// x_hat and x are normalized features [B, T, D]; joints are recovered after
// denormalizing with `stats`.
ReconLoss recon_loss(const Var& x_hat, const Var& x, const NormalizationStats& stats, const RepresentationSpec& spec,
                     double lambda_joint, double lambda_vel);

// 0.5 * mean(exp(log_var) + mean^2 - 1 - log_var)
Var kl_loss(const Var& mean, const Var& log_var);

// Inclusive frame window [h*i - 4h, h*i + h] clamped to [0, frames - 1].
std::pair<std::size_t, std::size_t> label_window(std::size_t i, std::size_t h, std::size_t frames);

// Average pooled text embedding of the distinct labels in each latent's
// window: [l, E]. valid[i] = 0 when the window holds no label.
Tensor window_label_embeddings(const std::vector<std::string>& labels, std::size_t latents, std::size_t h,
                               const text::ToyTextEncoder& encoder, std::vector<std::uint8_t>& valid);

struct ClassTokenSequence {
  Tensor tokens;  // [l, d]
  std::vector<std::uint8_t> valid;
};
ClassTokenSequence class_tokens(const std::vector<std::string>& labels, std::size_t latents,
                                const Autoencoder& model, const text::ToyTextEncoder& encoder);

// tokens [b * seq_len, d] in temporal order per sequence. Position i is dropped
// iff cos(k_i, k_{i+1}) > tau for a valid successor in the same sequence.
// Invalid positions are never kept.
std::vector<std::size_t> filter_repetitive(const Tensor& tokens, const std::vector<std::uint8_t>& valid,
                                           std::size_t seq_len, double tau);

struct SemanticLoss {
  Var loss;
  std::size_t used = 0;
  std::size_t skipped = 0;  // zero-norm rows
  bool empty = true;        // no usable position; loss is 0
};
// mean over kept i of (1 - cos(m_i, k_i)); m and kappa are [M, d].
SemanticLoss semantic_loss(const Var& m, const Var& kappa, const std::vector<std::size_t>& kept);

// ---------------------------------------------------------------------------
// Training

struct AeLogEntry {
  std::size_t step = 0;
  double total = 0, feat = 0, joint = 0, vel = 0, kl = 0, sem = 0;
  std::size_t kept = 0;
};

struct AeTrainResult {
  std::unique_ptr<Autoencoder> model;
  std::vector<AeLogEntry> history;
  bool diverged = false;
  std::string message;
};

// SAE uses the labeled sequences for the semantic term; when some sequences
// are unlabeled, labeled and unlabeled batches alternate.
AeTrainResult train_autoencoder(const motion::Corpus& corpus, const AutoencoderConfig& config, std::uint64_t seed,
                                const std::function<void(const AeLogEntry&)>& on_step = {});

}  // namespace molingo::ae
