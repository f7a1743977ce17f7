#include "molingo/generator.hpp"

#include <algorithm>
#include <cmath>

#include "molingo/errors.hpp"
#include "molingo/optim.hpp"

namespace molingo::gen {

void GeneratorConfig::validate() const {
  if (heads == 0 || model_dim % heads != 0) throw std::invalid_argument("model_dim must be divisible by heads");
  if (latent_dim == 0 || layers == 0 || head_blocks == 0 || head_width == 0)
    throw std::invalid_argument("generator sizes must be positive");
  if (!(cfg_dropout >= 0.0 && cfg_dropout < 1.0)) throw std::invalid_argument("cfg_dropout must lie in [0, 1)");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("ema_decay must lie in [0, 1)");
  if (!(mask_min > 0.0 && mask_min <= mask_max && mask_max <= 1.0))
    throw std::invalid_argument("mask ratio range must satisfy 0 < min <= max <= 1");
  if (batch < 1 || flow_batch_mul < 1) throw std::invalid_argument("batch sizes must be positive");
  if (time_freqs < 2) throw std::invalid_argument("time_freqs must be at least 2");
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim},
                     {"model_dim", c.model_dim},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"ffn_mult", c.ffn_mult},
                     {"max_positions", c.max_positions},
                     {"head_blocks", c.head_blocks},
                     {"head_width", c.head_width},
                     {"time_freqs", c.time_freqs},
                     {"mask_min", c.mask_min},
                     {"mask_max", c.mask_max},
                     {"cfg_dropout", c.cfg_dropout},
                     {"ema_decay", c.ema_decay},
                     {"adapter_depth", c.adapter.depth},
                     {"adapter_ffn_mult", c.adapter.ffn_mult},
                     {"embed_dim", c.adapter.embed_dim},
                     {"l_text", c.adapter.l_text},
                     {"lr", c.lr},
                     {"warmup", c.warmup},
                     {"steps", c.steps},
                     {"batch", c.batch},
                     {"flow_batch_mul", c.flow_batch_mul},
                     {"grad_clip", c.grad_clip},
                     {"ema_warmup", c.ema_warmup}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("latent_dim", c.latent_dim);
  get("model_dim", c.model_dim);
  get("layers", c.layers);
  get("heads", c.heads);
  get("ffn_mult", c.ffn_mult);
  get("max_positions", c.max_positions);
  get("head_blocks", c.head_blocks);
  get("head_width", c.head_width);
  get("time_freqs", c.time_freqs);
  get("mask_min", c.mask_min);
  get("mask_max", c.mask_max);
  get("cfg_dropout", c.cfg_dropout);
  get("ema_decay", c.ema_decay);
  get("adapter_depth", c.adapter.depth);
  get("adapter_ffn_mult", c.adapter.ffn_mult);
  get("embed_dim", c.adapter.embed_dim);
  get("l_text", c.adapter.l_text);
  get("lr", c.lr);
  get("warmup", c.warmup);
  get("steps", c.steps);
  get("batch", c.batch);
  get("flow_batch_mul", c.flow_batch_mul);
  get("grad_clip", c.grad_clip);
  get("ema_warmup", c.ema_warmup);
}

Tensor flow_interpolate(const Tensor& m, const Tensor& eps, double t) {
  if (m.shape() != eps.shape()) throw ShapeError("flow_interpolate: shapes differ");
  Tensor out(m.shape());
  for (std::size_t i = 0; i < m.numel(); ++i) out[i] = (1.0 - t) * m[i] + t * eps[i];
  return out;
}

Tensor flow_target(const Tensor& m, const Tensor& eps) {
  if (m.shape() != eps.shape()) throw ShapeError("flow_target: shapes differ");
  Tensor out(m.shape());
  for (std::size_t i = 0; i < m.numel(); ++i) out[i] = eps[i] - m[i];
  return out;
}

std::size_t mask_count(std::size_t l, double ratio) {
  // The small slack keeps products like 0.7 * 10 from rounding up past 7.
  const double raw = std::ceil(ratio * static_cast<double>(l) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 0.0)), 1, l);
}

std::vector<std::size_t> choose_mask(std::size_t l, double mask_min, double mask_max, Rng& rng, double forced_ratio) {
  if (l == 0) throw std::invalid_argument("choose_mask: empty latent sequence");
  const double r = forced_ratio >= 0.0 ? forced_ratio : rng.uniform(mask_min, mask_max);
  auto picks = rng.sample_without_replacement(l, mask_count(l, r));
  std::sort(picks.begin(), picks.end());
  return picks;
}

std::vector<std::uint8_t> cfg_drop_flags(std::size_t batch, double p, Rng& rng) {
  std::vector<std::uint8_t> out(batch);
  for (auto& f : out) f = rng.bernoulli(p) ? 1 : 0;
  return out;
}

Tensor LatentStats::normalize(const Tensor& latents) const {
  Tensor out = latents;
  const std::size_t d = mean.numel();
  if (latents.cols() != d) throw ShapeError("latent stats width does not match latents");
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - mean[i % d]) / std[i % d];
  return out;
}

Tensor LatentStats::denormalize(const Tensor& latents) const {
  Tensor out = latents;
  const std::size_t d = mean.numel();
  if (latents.cols() != d) throw ShapeError("latent stats width does not match latents");
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] * std[i % d] + mean[i % d];
  return out;
}

Generator::Generator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
  config_.adapter.model_dim = config_.model_dim;
  config_.adapter.heads = config_.heads;
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.latent_dim, dh = config_.model_dim, w = config_.head_width;

  Tensor mask_init({d});
  for (auto& v : mask_init.data()) v = rng.normal();
  mask_latent_ = params_.add("mask_latent", std::move(mask_init));
  Tensor pos_init({config_.max_positions, dh});
  for (auto& v : pos_init.data()) v = 0.02 * rng.normal();
  positions_ = params_.add("positions", std::move(pos_init));
  embed_ = nn::Linear(params_, "embed", d, dh, rng);
  adapter_ = text::TextAdapter(params_, "adapter", config_.adapter, rng);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string b = "block" + std::to_string(i);
    blocks_.push_back({nn::LayerNorm(params_, b + ".norm_self", dh), nn::LayerNorm(params_, b + ".norm_cross", dh),
                       nn::LayerNorm(params_, b + ".norm_mlp", dh),
                       nn::MultiHeadAttention(params_, b + ".self", dh, config_.heads, rng),
                       nn::MultiHeadAttention(params_, b + ".cross", dh, config_.heads, rng),
                       nn::FeedForward(params_, b + ".mlp", dh, config_.ffn_mult * dh, rng)});
  }
  final_norm_ = nn::LayerNorm(params_, "final_norm", dh);

  time_fc1_ = nn::Linear(params_, "head.time1", config_.time_freqs, w, rng);
  time_fc2_ = nn::Linear(params_, "head.time2", w, w, rng);
  cond_proj_ = nn::Linear(params_, "head.cond", dh, w, rng);
  head_in_ = nn::Linear(params_, "head.in", d, w, rng);
  for (std::size_t i = 0; i < config_.head_blocks; ++i) {
    const std::string b = "head.block" + std::to_string(i);
    head_blocks_.push_back({nn::Linear(params_, b + ".ada", w, 3 * w, rng, true, nn::Init::Zero),
                            nn::Linear(params_, b + ".fc1", w, w, rng), nn::Linear(params_, b + ".fc2", w, w, rng)});
  }
  head_final_ada_ = nn::Linear(params_, "head.final_ada", w, 2 * w, rng, true, nn::Init::Zero);
  head_out_ = nn::Linear(params_, "head.out", w, d, rng, true, nn::Init::Zero);
  latent_stats_ = {Tensor({d}, 0.0), Tensor({d}, 1.0)};
}

void Generator::set_latent_stats(LatentStats s) {
  if (s.mean.numel() != config_.latent_dim || s.std.numel() != config_.latent_dim)
    throw ShapeError("latent stats width does not match the generator");
  latent_stats_ = std::move(s);
}

MaskedLatents Generator::mask_latents(const Tensor& latents, Rng& rng, double forced_ratio) const {
  if (latents.rank() != 2 || latents.dim(1) != config_.latent_dim)
    throw ShapeError("mask_latents expects [l, " + std::to_string(config_.latent_dim) + "]");
  MaskedLatents out;
  out.mask_set = choose_mask(latents.dim(0), config_.mask_min, config_.mask_max, rng, forced_ratio);
  out.sequence = latents;
  const std::size_t d = config_.latent_dim;
  for (std::size_t i : out.mask_set) std::copy_n(mask_latent().ptr(), d, out.sequence.ptr() + i * d);
  return out;
}

Var Generator::masked_input(const Tensor& latents, const std::vector<std::uint8_t>& masked) const {
  const std::size_t rows = latents.rows(), d = config_.latent_dim;
  if (latents.cols() != d || masked.size() != rows) throw ShapeError("masked_input: shape mismatch");
  Tensor keep = latents;
  Tensor select({rows, 1});
  for (std::size_t r = 0; r < rows; ++r)
    if (masked[r]) {
      std::fill_n(keep.ptr() + r * d, d, 0.0);
      select[r] = 1.0;
    }
  const Var fill = ag::matmul(ag::constant(std::move(select)), ag::reshape(mask_latent_, {1, d}));
  return ag::add(ag::constant(std::move(keep)), ag::reshape(fill, latents.shape()));
}

text::BatchConditioning Generator::encode_text(const std::vector<const text::TokenEmbeddings*>& prompts) const {
  return adapter_.forward(prompts);
}

Var Generator::conditioning_forward(const Var& masked, const text::BatchConditioning& text,
                                    const std::vector<std::uint8_t>* valid) const {
  if (masked.shape().size() != 3 || masked.shape()[2] != config_.latent_dim)
    throw ShapeError("conditioning_forward expects [B, l, " + std::to_string(config_.latent_dim) + "]");
  const std::size_t b = masked.shape()[0], l = masked.shape()[1], dh = config_.model_dim;
  if (l > config_.max_positions) {
    throw ShapeError("latent length " + std::to_string(l) + " exceeds the generator maximum of " +
                     std::to_string(config_.max_positions));
  }
  if (text.w.shape()[0] != b) throw ShapeError("conditioning_forward: text batch does not match latent batch");
  std::vector<std::size_t> idx(b * l);
  for (std::size_t i = 0; i < b * l; ++i) idx[i] = i % l;
  Var h = ag::add(embed_(masked), ag::reshape(ag::gather_rows(positions_, idx), {b, l, dh}));
  for (const auto& blk : blocks_) {
    const Var n = blk.norm_self(h);
    h = ag::add(h, blk.self_attn(n, n, valid));
    h = ag::add(h, blk.cross_attn(blk.norm_cross(h), text.w, &text.mask));
    h = ag::add(h, blk.mlp(blk.norm_mlp(h)));
  }
  return final_norm_(h);
}

Var Generator::velocity(const Var& noisy, const std::vector<double>& t, const Var& z) const {
  const std::size_t m = noisy.value().rows(), w = config_.head_width;
  if (t.size() != m || z.value().rows() != m) throw ShapeError("velocity: row counts differ");
  std::vector<double> scaled(t);
  for (auto& v : scaled) v *= 1000.0;
  const Var temb = time_fc2_(ag::silu(time_fc1_(ag::constant(nn::sinusoidal_embedding(scaled, config_.time_freqs)))));
  const Var cond = ag::silu(ag::add(temb, cond_proj_(ag::reshape(z, {m, config_.model_dim}))));
  auto modulate = [](const Var& x, const Var& shift, const Var& scale) {
    return ag::add(ag::mul(ag::layer_norm(x), ag::add_scalar(scale, 1.0)), shift);
  };
  Var x = head_in_(ag::reshape(noisy, {m, config_.latent_dim}));
  for (const auto& blk : head_blocks_) {
    const Var mod = blk.ada(cond);
    const Var h = modulate(x, ag::slice_cols(mod, 0, w), ag::slice_cols(mod, w, w));
    x = ag::add(x, ag::mul(ag::slice_cols(mod, 2 * w, w), blk.fc2(ag::silu(blk.fc1(h)))));
  }
  const Var fin = head_final_ada_(cond);
  return head_out_(modulate(x, ag::slice_cols(fin, 0, w), ag::slice_cols(fin, w, w)));
}

ckpt::Checkpoint Generator::to_checkpoint(const std::vector<Tensor>* ema) const {
  ckpt::Checkpoint c;
  c.kind = "generator";
  c.config = nlohmann::json{{"model", config_}, {"ae_downsample", ae_downsample}, {"ae_variant", ae_variant}};
  c.tensors = params_.snapshot();
  if (ema) {
    if (ema->size() != params_.size()) throw std::invalid_argument("EMA weights do not match the parameter layout");
    for (std::size_t i = 0; i < ema->size(); ++i) c.tensors["ema." + params_.entries()[i].first] = (*ema)[i];
  }
  c.tensors["latent_stats.mean"] = latent_stats_.mean;
  c.tensors["latent_stats.std"] = latent_stats_.std;
  return c;
}

std::unique_ptr<Generator> Generator::from_checkpoint(const ckpt::Checkpoint& c, bool use_ema) {
  if (c.kind != "generator") throw ShapeError("checkpoint holds a " + c.kind + ", not a generator");
  auto g = std::make_unique<Generator>(c.config.at("model").get<GeneratorConfig>(), 0);
  g->ae_downsample = c.config.value("ae_downsample", std::size_t{4});
  g->ae_variant = c.config.value("ae_variant", std::string{});
  const bool has_ema = c.tensors.count("ema.mask_latent") > 0;
  g->params_.load(c.tensors, use_ema && has_ema ? "ema." : "");
  g->set_latent_stats({ckpt::require_tensor(c, "latent_stats.mean"), ckpt::require_tensor(c, "latent_stats.std")});
  return g;
}

Var flow_loss(const Generator& g, const Var& z_rows, const Tensor& m_rows, Rng& rng, std::size_t repeats) {
  const std::size_t m = m_rows.rows(), d = g.config().latent_dim;
  if (m == 0) throw std::invalid_argument("flow_loss: no masked positions");
  if (z_rows.value().rows() != m) throw ShapeError("flow_loss: z and latent row counts differ");
  if (repeats < 1) repeats = 1;
  const std::size_t n = m * repeats;
  std::vector<std::size_t> idx(n);
  std::vector<double> t(n);
  Tensor noisy({n, d}), target({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = r % m;
    idx[r] = src;
    t[r] = rng.uniform();
    for (std::size_t c = 0; c < d; ++c) {
      const double x = m_rows[src * d + c], e = rng.normal();
      noisy[r * d + c] = (1.0 - t[r]) * x + t[r] * e;
      target[r * d + c] = e - x;
    }
  }
  const Var z = repeats == 1 ? z_rows : ag::gather_rows(z_rows, idx);
  return ag::mse(g.velocity(ag::constant(std::move(noisy)), t, z), ag::constant(std::move(target)));
}

GenTrainResult train_generator(const motion::Corpus& corpus, const ae::Autoencoder& autoencoder,
                               const GeneratorConfig& config_in, std::uint64_t seed, const text::PromptEncoder& prompts,
                               const std::function<void(const GenLogEntry&)>& on_step) {
  GeneratorConfig config = config_in;
  config.latent_dim = autoencoder.config().latent_dim;
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train_generator: empty corpus");
  if (prompts.dim() != config.adapter.embed_dim) {
    throw ShapeError("text embedding width " + std::to_string(prompts.dim()) + " does not match generator width " +
                     std::to_string(config.adapter.embed_dim));
  }
  GenTrainResult result;
  result.model = std::make_unique<Generator>(config, derive_seed(seed, 11));
  Generator& g = *result.model;
  g.ae_downsample = autoencoder.config().downsample;
  g.ae_variant = ae::variant_name(autoencoder.config().variant);
  const std::size_t d = config.latent_dim;

  // Mean latents of every sequence, then per-dimension normalization.
  std::vector<Tensor> latents(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < corpus.size(); ++i) latents[i] = autoencoder.encode(corpus[i]).latents;
  LatentStats stats{Tensor({d}), Tensor({d})};
  double rows = 0;
  for (const auto& z : latents) {
    if (z.dim(0) > config.max_positions) {
      throw ShapeError("sequence with " + std::to_string(z.dim(0)) + " latents exceeds max_positions " +
                       std::to_string(config.max_positions));
    }
    for (std::size_t r = 0; r < z.dim(0); ++r)
      for (std::size_t c = 0; c < d; ++c) stats.mean[c] += z.at(r, c);
    rows += static_cast<double>(z.dim(0));
  }
  for (auto& v : stats.mean.data()) v /= rows;
  for (const auto& z : latents)
    for (std::size_t r = 0; r < z.dim(0); ++r)
      for (std::size_t c = 0; c < d; ++c) stats.std[c] += (z.at(r, c) - stats.mean[c]) * (z.at(r, c) - stats.mean[c]);
  for (auto& v : stats.std.data()) v = std::max(std::sqrt(v / rows), motion::NormalizationStats::kMinStd);
  for (auto& z : latents) z = stats.normalize(z);
  g.set_latent_stats(stats);

  std::map<std::string, text::TokenEmbeddings> cache;
  auto embed = [&](const std::string& p) -> const text::TokenEmbeddings& {
    auto it = cache.find(p);
    if (it == cache.end()) it = cache.emplace(p, prompts.encode(p)).first;
    return it->second;
  };
  const text::TokenEmbeddings& null_prompt = embed("");

  optim::Adam adam(g.params(), {config.lr});
  optim::Ema ema(g.params(), config.ema_decay);
  Rng rng(derive_seed(seed, 12));
  auto last_good = g.params().snapshot();

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const std::size_t b = config.batch;
    std::vector<std::size_t> picks(b);
    std::size_t l_max = 0;
    for (auto& p : picks) {
      p = rng.index(corpus.size());
      l_max = std::max(l_max, latents[p].dim(0));
    }
    Tensor x({b, l_max, d});
    std::vector<std::uint8_t> valid(b * l_max, 0), masked(b * l_max, 0);
    std::vector<std::size_t> masked_rows;
    for (std::size_t i = 0; i < b; ++i) {
      const Tensor& z = latents[picks[i]];
      const std::size_t l = z.dim(0);
      std::copy_n(z.ptr(), l * d, x.ptr() + i * l_max * d);
      std::fill_n(valid.begin() + static_cast<std::ptrdiff_t>(i * l_max), l, 1);
      for (std::size_t pos : choose_mask(l, config.mask_min, config.mask_max, rng)) {
        masked[i * l_max + pos] = 1;
        masked_rows.push_back(i * l_max + pos);
      }
    }
    const auto drop = cfg_drop_flags(b, config.cfg_dropout, rng);
    std::vector<const text::TokenEmbeddings*> text_batch(b);
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < b; ++i) {
      const auto& ps = corpus[picks[i]].prompts;
      if (drop[i] || ps.empty()) {
        text_batch[i] = &null_prompt;
        dropped += drop[i];
      } else {
        text_batch[i] = &embed(ps[rng.index(ps.size())]);
      }
    }
    Tensor m_rows({masked_rows.size(), d});
    for (std::size_t r = 0; r < masked_rows.size(); ++r)
      std::copy_n(x.ptr() + masked_rows[r] * d, d, m_rows.ptr() + r * d);

    g.params().zero_grad();
    const Var z = g.conditioning_forward(g.masked_input(x, masked), g.encode_text(text_batch), &valid);
    const Var z_rows = ag::gather_rows(ag::reshape(z, {b * l_max, config.model_dim}), masked_rows);
    const Var loss = flow_loss(g, z_rows, m_rows, rng, config.flow_batch_mul);

    GenLogEntry log;
    log.step = step;
    log.loss = loss.item();
    log.masked = masked_rows.size();
    log.dropped = dropped;
    if (!std::isfinite(log.loss)) {
      g.params().load(last_good);
      result.diverged = true;
      result.message = "non-finite flow loss at step " + std::to_string(step);
      break;
    }
    ag::backward(loss);
    log.grad_norm = optim::clip_grad_norm(g.params(), config.grad_clip);
    log.lr = optim::warmup_lr(static_cast<long>(step - 1), static_cast<long>(config.warmup), config.lr);
    adam.step(log.lr);
    const double k = static_cast<double>(step);
    ema.update(g.params(), config.ema_warmup ? std::min(config.ema_decay, (1.0 + k) / (10.0 + k)) : config.ema_decay);
    if (step % 100 == 0) last_good = g.params().snapshot();
    result.history.push_back(log);
    if (on_step) on_step(log);
  }
  result.ema = ema.shadow();
  return result;
}

}  // namespace molingo::gen
