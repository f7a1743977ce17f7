#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "molingo/autoencoder.hpp"
#include "molingo/checkpoint.hpp"
#include "molingo/generator.hpp"
#include "molingo/layers.hpp"
#include "molingo/motion.hpp"
#include "molingo/sampler.hpp"

namespace molingo::eval {

using ag::Var;

struct EvaluatorConfig {
  std::size_t feature_dim = 64;  // F
  std::size_t hidden = 64;
  std::size_t text_hidden = 128;
  double init_temperature = 0.1;
  double max_logit_scale = 100.0;

  // Training.
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t steps = 800;
  double grad_clip = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvaluatorConfig& c);
void from_json(const nlohmann::json& j, EvaluatorConfig& c);

// Contrastive text-motion embedder. Motions go through strided causal
// convolutions and a masked mean over time; prompts through a per-token MLP
// over frozen toy embeddings and a mean over tokens.
class Evaluator {
 public:
  Evaluator(const EvaluatorConfig& config, const motion::RepresentationSpec& spec, std::uint64_t seed);
  Evaluator(const Evaluator&) = delete;
  Evaluator& operator=(const Evaluator&) = delete;

  // Normalized motion batch [B, T, D] with per-item valid lengths -> [B, F].
  Var motion_forward(const Var& x, const std::vector<std::size_t>& lengths) const;
  Var text_forward(const std::vector<const text::TokenEmbeddings*>& prompts) const;
  Var logit_scale() const;  // exp of the log-scale parameter

  // Raw (unnormalized) features; gradients are not recorded.
  Tensor motion_features(const std::vector<motion::MotionSequence>& motions) const;
  Tensor text_features(const std::vector<std::string>& prompts) const;

  const EvaluatorConfig& config() const { return config_; }
  const motion::RepresentationSpec& spec() const { return spec_; }
  const motion::NormalizationStats& stats() const { return stats_; }
  void set_stats(motion::NormalizationStats stats);
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  // Keeps the logit scale within [1, max_logit_scale].
  void clamp_temperature();

  ckpt::Checkpoint to_checkpoint() const;
  static std::unique_ptr<Evaluator> from_checkpoint(const ckpt::Checkpoint& c);

 private:
  EvaluatorConfig config_;
  motion::RepresentationSpec spec_;
  motion::NormalizationStats stats_;
  nn::ParamSet params_;
  std::vector<nn::CausalConv1d> convs_;
  nn::Linear motion_fc1_, motion_fc2_;
  nn::Linear token_fc1_, token_fc2_, text_out_;
  Var log_scale_;
};

// Symmetric InfoNCE over matched rows of motion and text features [B, F].
// same_text[i * B + j] = 1 drops pair (i, j != i) from the negatives.
Var info_nce(const Var& motion, const Var& text, const Var& scale, const std::vector<std::uint8_t>& same_text);

struct EvalLogEntry {
  std::size_t step = 0;
  double loss = 0;
  double temperature = 0;
};

struct EvalTrainResult {
  std::unique_ptr<Evaluator> model;
  std::vector<EvalLogEntry> history;
};

EvalTrainResult train_evaluator(const motion::Corpus& corpus, const EvaluatorConfig& config, std::uint64_t seed,
                                const std::function<void(const EvalLogEntry&)>& on_step = {});

// ---------------------------------------------------------------------------
// Metrics over feature matrices [n, F]

struct FidInfo {
  bool regularized = false;  // 1e-6 I added because n < F + 1
};

double fid(const Tensor& real, const Tensor& generated, FidInfo* info = nullptr);

struct RetrievalResult {
  double top1 = 0, top2 = 0, top3 = 0;
  double matching_score = 0;  // mean distance between matched unit-norm features
  std::size_t pools = 0;
};

// Pools of `pool` distinct pairs. Each motion is ranked against the pool's
// texts by cosine; ties count in favour of the true text. pools = 0 uses one
// shuffled partition of the pairs.
RetrievalResult r_precision(const Tensor& motion, const Tensor& text, std::size_t pool, Rng& rng,
                            std::size_t pools = 0);

double clip_score(const Tensor& motion, const Tensor& text);

// groups[p] holds [repeats, F] features of motions generated from prompt p.
// Mean distance over the disjoint pairs (0,1), (2,3), ... of every group.
double mmodality(const std::vector<Tensor>& groups);

double rfid(const motion::Corpus& corpus, const ae::Autoencoder& autoencoder, const Evaluator& evaluator,
            FidInfo* info = nullptr);

// ---------------------------------------------------------------------------
// Multi-run report

struct MetricValue {
  double mean = 0;
  std::optional<double> ci95;  // half-width; empty for a single run
};

MetricValue summarize(const std::vector<double>& values);

struct MetricReport {
  std::size_t runs = 0;
  std::vector<std::pair<std::string, MetricValue>> metrics;
  std::vector<std::string> notes;

  const MetricValue& at(const std::string& name) const;
  nlohmann::json to_json() const;
};

struct EvalRunConfig {
  std::size_t runs = 20;
  std::size_t samples = 256;  // evaluated corpus items per run, 0 = all
  std::size_t pool = 32;
  std::size_t mm_prompts = 32;
  std::size_t mm_repeats = 10;  // 0 disables MModality
  std::size_t batch = 32;       // generation batch
  sample::SampleConfig sampling{};
  std::uint64_t seed = 0;
};

MetricReport evaluate_run(const gen::Generator& generator, const ae::Autoencoder& autoencoder,
                          const Evaluator& evaluator, const motion::Corpus& corpus, const EvalRunConfig& config,
                          const text::PromptEncoder& prompts = {},
                          const std::function<void(std::size_t run)>& on_run = {});

}  // namespace molingo::eval
