#include "molingo/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "molingo/errors.hpp"
#include "molingo/optim.hpp"

namespace molingo::ae {

namespace {

constexpr std::size_t kDilations[] = {9, 3, 1};
constexpr double kCosEps = 1e-8;

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::AE:
      return "ae";
    case Variant::VAE:
      return "vae";
    case Variant::SAE:
      return "sae";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "ae") return Variant::AE;
  if (name == "vae") return Variant::VAE;
  if (name == "sae") return Variant::SAE;
  throw std::invalid_argument("unknown autoencoder variant '" + name + "' (expected ae, vae or sae)");
}

void AutoencoderConfig::validate() const {
  if (downsample != 2 && downsample != 4) throw std::invalid_argument("downsample must be 2 or 4");
  if (hidden < 1 || latent_dim < 1) throw std::invalid_argument("hidden and latent_dim must be positive");
  if (lambda_joint < 0 || lambda_vel < 0 || lambda_kl < 0 || lambda_sem < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
  if (batch < 1) throw std::invalid_argument("batch must be at least 1");
  if (crop < downsample || crop % downsample != 0) throw std::invalid_argument("crop must be a multiple of downsample");
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
}

void to_json(nlohmann::json& j, const AutoencoderConfig& c) {
  j = nlohmann::json{{"variant", variant_name(c.variant)},
                     {"hidden", c.hidden},
                     {"latent_dim", c.latent_dim},
                     {"downsample", c.downsample},
                     {"lambda_joint", c.lambda_joint},
                     {"lambda_vel", c.lambda_vel},
                     {"lambda_kl", c.lambda_kl},
                     {"lambda_sem", c.lambda_sem},
                     {"tau", c.tau},
                     {"text_dim", c.text_dim},
                     {"lr", c.lr},
                     {"batch", c.batch},
                     {"crop", c.crop},
                     {"steps", c.steps},
                     {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, AutoencoderConfig& c) {
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("hidden", c.hidden);
  get("latent_dim", c.latent_dim);
  get("downsample", c.downsample);
  get("lambda_joint", c.lambda_joint);
  get("lambda_vel", c.lambda_vel);
  get("lambda_kl", c.lambda_kl);
  get("lambda_sem", c.lambda_sem);
  get("tau", c.tau);
  get("text_dim", c.text_dim);
  get("lr", c.lr);
  get("batch", c.batch);
  get("crop", c.crop);
  get("steps", c.steps);
  get("grad_clip", c.grad_clip);
}

Var reparameterize(const Var& mean, const Var& log_var, const Tensor& noise) {
  return ag::add(mean, ag::mul(ag::exp(ag::scale(log_var, 0.5)), ag::constant(noise)));
}

Autoencoder::Autoencoder(const AutoencoderConfig& config, const RepresentationSpec& spec, std::uint64_t seed)
    : config_(config), spec_(spec) {
  config_.validate();
  spec_.validate();
  const std::size_t d_in = spec_.dim(), c = config_.hidden, d = config_.latent_dim;
  stats_ = NormalizationStats{Tensor({d_in}, 0.0), Tensor({d_in}, 1.0)};
  Rng rng(seed);
  auto res_blocks = [&](const std::string& name) {
    std::vector<ResBlock> blocks;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string b = name + ".res" + std::to_string(i);
      blocks.push_back({nn::CausalConv1d(params_, b + ".conv1", c, c, 3, 1, kDilations[i], rng),
                        nn::CausalConv1d(params_, b + ".conv2", c, c, 1, 1, 1, rng)});
    }
    return blocks;
  };

  enc_in_ = nn::CausalConv1d(params_, "enc.in", d_in, c, 3, 1, 1, rng, /*replicate=*/true);
  for (std::size_t s = 0; s < config_.stages(); ++s) {
    const std::string name = "enc.stage" + std::to_string(s);
    Stage st;
    st.resample = nn::CausalConv1d(params_, name + ".down", c, c, 4, 2, 1, rng);
    st.res = res_blocks(name);
    enc_stages_.push_back(std::move(st));
  }
  enc_out_ = nn::CausalConv1d(params_, "enc.out", c, c, 3, 1, 1, rng);
  to_latent_ = nn::Linear(params_, "enc.to_latent", c, config_.stochastic() ? 2 * d : d, rng);

  dec_in_ = nn::CausalConv1d(params_, "dec.in", d, c, 3, 1, 1, rng);
  for (std::size_t s = 0; s < config_.stages(); ++s) {
    const std::string name = "dec.stage" + std::to_string(s);
    Stage st;
    st.res = res_blocks(name);
    st.resample = nn::CausalConv1d(params_, name + ".up", c, c, 3, 1, 1, rng);
    dec_stages_.push_back(std::move(st));
  }
  dec_mid_ = nn::CausalConv1d(params_, "dec.mid", c, c, 3, 1, 1, rng);
  dec_out_ = nn::CausalConv1d(params_, "dec.out", c, d_in, 3, 1, 1, rng);

  if (config_.variant == Variant::SAE) projector_ = nn::Linear(params_, "proj", config_.text_dim, d, rng);
}

void Autoencoder::set_stats(NormalizationStats stats) {
  if (stats.dim() != spec_.dim()) throw ShapeError("normalization stats width does not match the representation");
  stats_ = std::move(stats);
}

Var Autoencoder::res_stack(const std::vector<ResBlock>& blocks, Var x) const {
  for (const auto& b : blocks) x = ag::add(x, b.conv2(ag::silu(b.conv1(ag::silu(x)))));
  return x;
}

Var Autoencoder::input_conv_without_bias(const Var& x) const { return enc_in_.without_bias(x); }

EncodeOutput Autoencoder::encode_batch(const Var& x, Rng* rng) const {
  if (x.shape().size() != 3 || x.shape()[2] != spec_.dim())
    throw ShapeError("encoder input must be [B, T, " + std::to_string(spec_.dim()) + "]");
  if (x.shape()[1] % config_.downsample != 0)
    throw ShapeError("encoder input length must be a multiple of " + std::to_string(config_.downsample));
  Var h = ag::silu(enc_in_(x));
  for (const auto& st : enc_stages_) h = res_stack(st.res, st.resample(h));
  Var out = to_latent_(enc_out_(h));
  EncodeOutput r;
  const std::size_t d = config_.latent_dim;
  if (!config_.stochastic()) {
    r.mean = out;
    r.sample = out;
    return r;
  }
  r.mean = ag::slice_cols(out, 0, d);
  r.log_var = ag::slice_cols(out, d, d);
  if (rng) {
    Tensor noise(r.mean.shape());
    for (auto& v : noise.data()) v = rng->normal();
    r.sample = reparameterize(r.mean, r.log_var, noise);
  } else {
    r.sample = r.mean;
  }
  return r;
}

Var Autoencoder::decode_batch(const Var& z) const {
  if (z.shape().size() != 3 || z.shape()[2] != config_.latent_dim)
    throw ShapeError("decoder input must be [B, l, " + std::to_string(config_.latent_dim) + "]");
  Var h = ag::silu(dec_in_(z));
  for (const auto& st : dec_stages_) h = st.resample(ag::upsample2(res_stack(st.res, h)));
  return dec_out_(ag::silu(dec_mid_(h)));
}

Var Autoencoder::project_labels(const Var& embeddings) const {
  if (config_.variant != Variant::SAE) throw std::logic_error("only the SAE variant has a label projector");
  return projector_(embeddings);
}

LatentSequence Autoencoder::encode(const MotionSequence& raw, Rng* rng) const {
  raw.validate();
  if (!(raw.spec == spec_)) throw ShapeError("motion representation does not match the autoencoder");
  ag::NoGradGuard ng;
  const std::size_t n = raw.length(), h = config_.downsample;
  Tensor x = motion::pad_to_multiple(motion::normalize_frames(raw.frames, stats_), h);
  const std::size_t t = x.dim(0);
  x.reshape({1, t, spec_.dim()});
  const EncodeOutput e = encode_batch(ag::constant(std::move(x)), rng);
  const std::size_t l = t / h, d = config_.latent_dim;
  LatentSequence out;
  out.h = h;
  out.frames = n;
  out.latents = e.sample.value().reshaped({l, d});
  if (e.log_var) {
    out.mean = e.mean.value().reshaped({l, d});
    out.log_var = e.log_var.value().reshaped({l, d});
  }
  return out;
}

MotionSequence Autoencoder::decode(const Tensor& latents, std::size_t frames) const {
  if (latents.rank() != 2 || latents.dim(1) != config_.latent_dim)
    throw ShapeError("latents must be [l, " + std::to_string(config_.latent_dim) + "], got " +
                     shape_str(latents.shape()));
  const std::size_t l = latents.dim(0), t = l * config_.downsample;
  if (frames > t || frames < 1) throw ShapeError("requested frame count does not fit the latent length");
  ag::NoGradGuard ng;
  const Var y = decode_batch(ag::constant(latents.reshaped({1, l, config_.latent_dim})));
  const std::size_t dd = spec_.dim();
  Tensor f({frames, dd});
  std::copy_n(y.value().ptr(), frames * dd, f.ptr());
  MotionSequence out;
  out.spec = spec_;
  out.frames = motion::denormalize_frames(f, stats_);
  return out;
}

MotionSequence Autoencoder::reconstruct(const MotionSequence& raw) const {
  const LatentSequence z = encode(raw);
  MotionSequence out = decode(z.latents, raw.length());
  out.labels = raw.labels;
  out.prompts = raw.prompts;
  out.archetype = raw.archetype;
  out.variant = raw.variant;
  out.composite = raw.composite;
  return out;
}

ckpt::Checkpoint Autoencoder::to_checkpoint() const {
  ckpt::Checkpoint c;
  c.kind = "autoencoder";
  c.config = nlohmann::json{{"model", config_},
                            {"representation",
                             {{"layout", static_cast<int>(spec_.layout)},
                              {"joints", spec_.joints},
                              {"fps", spec_.fps},
                              {"facing", spec_.facing}}}};
  c.tensors = params_.snapshot();
  c.tensors["stats.mean"] = stats_.mean;
  c.tensors["stats.std"] = stats_.std;
  return c;
}

std::unique_ptr<Autoencoder> Autoencoder::from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.kind != "autoencoder") throw ShapeError("checkpoint holds a " + c.kind + ", not an autoencoder");
  const AutoencoderConfig cfg = c.config.at("model").get<AutoencoderConfig>();
  const auto& r = c.config.at("representation");
  RepresentationSpec spec;
  spec.layout = static_cast<motion::Layout>(r.at("layout").get<int>());
  spec.joints = r.at("joints").get<std::size_t>();
  spec.fps = r.at("fps").get<double>();
  spec.facing = r.at("facing").get<std::array<std::size_t, 4>>();
  auto model = std::make_unique<Autoencoder>(cfg, spec, 0);
  model->params_.load(c.tensors);
  model->set_stats({ckpt::require_tensor(c, "stats.mean"), ckpt::require_tensor(c, "stats.std")});
  return model;
}

// ---------------------------------------------------------------------------

ReconLoss recon_loss(const Var& x_hat, const Var& x, const NormalizationStats& stats, const RepresentationSpec& spec,
                     double lambda_joint, double lambda_vel) {
  if (x_hat.shape() != x.shape()) {
    throw ShapeError("recon_loss: shapes differ " + shape_str(x_hat.shape()) + " vs " + shape_str(x.shape()));
  }
  if (x.shape().size() != 3) throw ShapeError("recon_loss expects [B, T, D]");
  ReconLoss r;
  r.feat = ag::mse(x_hat, x);
  const Var sd = ag::constant(stats.std), mu = ag::constant(stats.mean);
  auto joints = [&](const Var& f) { return ag::joint_positions(ag::add_row(ag::mul_row(f, sd), mu), spec.joints, spec.fps); };
  const Var j_hat = joints(x_hat), j = joints(x);
  r.joint = ag::mse(j_hat, j);
  if (x.shape()[1] >= 2) {
    r.vel = ag::mse(ag::temporal_diff(j_hat), ag::temporal_diff(j));
  } else {
    r.vel = ag::constant(Tensor::scalar(0.0));
    r.vel_defined = false;
  }
  r.total = ag::add(r.feat, ag::add(ag::scale(r.joint, lambda_joint), ag::scale(r.vel, lambda_vel)));
  return r;
}

Var kl_loss(const Var& mean, const Var& log_var) {
  if (mean.shape() != log_var.shape()) throw ShapeError("kl_loss: mean and log_var shapes differ");
  const Var terms = ag::sub(ag::add(ag::exp(log_var), ag::square(mean)), ag::add_scalar(log_var, 1.0));
  return ag::scale(ag::mean(terms), 0.5);
}

std::pair<std::size_t, std::size_t> label_window(std::size_t i, std::size_t h, std::size_t frames) {
  const long lo = static_cast<long>(h * i) - static_cast<long>(4 * h);
  const long hi = static_cast<long>(h * i + h);
  const long last = static_cast<long>(frames) - 1;
  return {static_cast<std::size_t>(std::clamp(lo, 0L, last)), static_cast<std::size_t>(std::clamp(hi, 0L, last))};
}

Tensor window_label_embeddings(const std::vector<std::string>& labels, std::size_t latents, std::size_t h,
                               const text::ToyTextEncoder& encoder, std::vector<std::uint8_t>& valid) {
  const std::size_t e = encoder.dim();
  Tensor out({latents, e});
  valid.assign(latents, 0);
  if (labels.empty()) return out;
  std::map<std::string, std::vector<double>> cache;
  for (std::size_t i = 0; i < latents; ++i) {
    const auto [lo, hi] = label_window(i, h, labels.size());
    std::set<std::string> distinct;
    for (std::size_t f = lo; f <= hi; ++f)
      if (!labels[f].empty()) distinct.insert(labels[f]);
    if (distinct.empty()) continue;
    valid[i] = 1;
    for (const auto& l : distinct) {
      auto it = cache.find(l);
      if (it == cache.end()) it = cache.emplace(l, encoder.pooled(l)).first;
      for (std::size_t c = 0; c < e; ++c) out.at(i, c) += it->second[c];
    }
    for (std::size_t c = 0; c < e; ++c) out.at(i, c) /= static_cast<double>(distinct.size());
  }
  return out;
}

ClassTokenSequence class_tokens(const std::vector<std::string>& labels, std::size_t latents,
                                const Autoencoder& model, const text::ToyTextEncoder& encoder) {
  ClassTokenSequence out;
  const Tensor emb = window_label_embeddings(labels, latents, model.config().downsample, encoder, out.valid);
  ag::NoGradGuard ng;
  out.tokens = model.project_labels(ag::constant(emb)).value();
  return out;
}

std::vector<std::size_t> filter_repetitive(const Tensor& tokens, const std::vector<std::uint8_t>& valid,
                                           std::size_t seq_len, double tau) {
  const std::size_t total = tokens.rows(), d = tokens.cols();
  if (valid.size() != total) throw ShapeError("filter_repetitive: one validity flag per token required");
  if (seq_len == 0 || total % seq_len != 0) throw ShapeError("filter_repetitive: tokens do not split into sequences");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < total; ++i) {
    if (!valid[i]) continue;
    const bool has_successor = (i + 1) % seq_len != 0 && valid[i + 1];
    if (has_successor) {
      const double* a = tokens.ptr() + i * d;
      const double* b = tokens.ptr() + (i + 1) * d;
      double dot = 0, na = 0, nb = 0;
      for (std::size_t c = 0; c < d; ++c) {
        dot += a[c] * b[c];
        na += a[c] * a[c];
        nb += b[c] * b[c];
      }
      const double cos = dot / (std::max(std::sqrt(na), kCosEps) * std::max(std::sqrt(nb), kCosEps));
      if (cos > tau) continue;
    }
    kept.push_back(i);
  }
  return kept;
}

SemanticLoss semantic_loss(const Var& m, const Var& kappa, const std::vector<std::size_t>& kept) {
  if (m.shape() != kappa.shape()) throw ShapeError("semantic_loss: latent and token shapes differ");
  SemanticLoss out;
  const std::size_t d = m.value().cols();
  std::vector<std::size_t> rows;
  for (std::size_t i : kept) {
    double nm = 0, nk = 0;
    for (std::size_t c = 0; c < d; ++c) {
      nm += m.value()[i * d + c] * m.value()[i * d + c];
      nk += kappa.value()[i * d + c] * kappa.value()[i * d + c];
    }
    if (std::sqrt(nm) <= kCosEps || std::sqrt(nk) <= kCosEps) {
      ++out.skipped;
      continue;
    }
    rows.push_back(i);
  }
  out.used = rows.size();
  if (rows.empty()) {
    out.loss = ag::constant(Tensor::scalar(0.0));
    return out;
  }
  out.empty = false;
  const Var cos = ag::row_cosine(ag::gather_rows(m, rows), ag::gather_rows(kappa, rows), kCosEps);
  out.loss = ag::add_scalar(ag::scale(ag::mean(cos), -1.0), 1.0);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct Batch {
  Tensor x;                                // [B, T, D] normalized
  std::vector<std::vector<std::string>> labels;  // per item, T labels (may be empty)
};

Batch make_batch(const motion::Corpus& corpus, const std::vector<std::size_t>& pool, const Autoencoder& model,
                 Rng& rng) {
  const auto& cfg = model.config();
  const std::size_t b = cfg.batch, d = model.spec().dim(), h = cfg.downsample;
  std::vector<std::size_t> picks(b);
  std::size_t shortest = cfg.crop;
  for (auto& p : picks) {
    p = pool[rng.index(pool.size())];
    shortest = std::min(shortest, corpus[p].length());
  }
  const std::size_t t = std::max(h, shortest / h * h);
  Batch out{Tensor({b, t, d}), {}};
  out.labels.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& m = corpus[picks[i]];
    const std::size_t start = m.length() > t ? rng.index(m.length() - t + 1) : 0;
    for (std::size_t f = 0; f < t; ++f) {
      const std::size_t src = std::min(start + f, m.length() - 1);
      for (std::size_t c = 0; c < d; ++c)
        out.x[(i * t + f) * d + c] = (m.frames[src * d + c] - model.stats().mean[c]) / model.stats().std[c];
      if (!m.labels.empty()) out.labels[i].push_back(m.labels[src]);
    }
  }
  return out;
}

}  // namespace

AeTrainResult train_autoencoder(const motion::Corpus& corpus, const AutoencoderConfig& config, std::uint64_t seed,
                                const std::function<void(const AeLogEntry&)>& on_step) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train_autoencoder: empty corpus");
  AeTrainResult result;
  result.model = std::make_unique<Autoencoder>(config, corpus.front().spec, derive_seed(seed, 1));
  Autoencoder& model = *result.model;
  model.set_stats(NormalizationStats::compute(corpus));

  std::vector<std::size_t> all(corpus.size()), labeled;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    all[i] = i;
    if (!corpus[i].labels.empty()) labeled.push_back(i);
  }
  const bool sae = config.variant == Variant::SAE;
  if (sae && labeled.empty()) throw std::invalid_argument("SAE training needs at least one labeled sequence");
  const bool alternate = sae && labeled.size() < all.size();

  const text::ToyTextEncoder& encoder = text::default_encoder();
  if (sae && encoder.dim() != config.text_dim) {
    throw ShapeError("text embedding width " + std::to_string(encoder.dim()) + " does not match config text_dim " +
                     std::to_string(config.text_dim));
  }

  optim::Adam adam(model.params(), {config.lr});
  Rng rng(derive_seed(seed, 2));
  auto last_good = model.params().snapshot();
  const std::size_t h = config.downsample, d = config.latent_dim;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const bool semantic_batch = sae && (!alternate || step % 2 == 1);
    const Batch batch = make_batch(corpus, semantic_batch ? labeled : all, model, rng);
    const std::size_t b = batch.x.dim(0), t = batch.x.dim(1), l = t / h;

    model.params().zero_grad();
    const Var x = ag::constant(batch.x);
    const EncodeOutput enc = model.encode_batch(x, config.stochastic() ? &rng : nullptr);
    const Var x_hat = model.decode_batch(enc.sample);
    const ReconLoss rec = recon_loss(x_hat, x, model.stats(), model.spec(), config.lambda_joint, config.lambda_vel);
    Var total = rec.total;
    AeLogEntry log;
    log.step = step;
    if (config.stochastic()) {
      const Var kl = kl_loss(enc.mean, enc.log_var);
      total = ag::add(total, ag::scale(kl, config.lambda_kl));
      log.kl = kl.item();
    }
    if (semantic_batch) {
      Tensor emb({b * l, config.text_dim});
      std::vector<std::uint8_t> valid(b * l, 0);
      for (std::size_t i = 0; i < b; ++i) {
        std::vector<std::uint8_t> v;
        const Tensor e = window_label_embeddings(batch.labels[i], l, h, encoder, v);
        std::copy_n(e.ptr(), l * config.text_dim, emb.ptr() + i * l * config.text_dim);
        std::copy(v.begin(), v.end(), valid.begin() + static_cast<std::ptrdiff_t>(i * l));
      }
      const Var kappa = model.project_labels(ag::constant(std::move(emb)));
      const auto kept = filter_repetitive(kappa.value(), valid, l, config.tau);
      const SemanticLoss sem = semantic_loss(ag::reshape(enc.mean, {b * l, d}), kappa, kept);
      if (!sem.empty) total = ag::add(total, ag::scale(sem.loss, config.lambda_sem));
      log.sem = sem.loss.item();
      log.kept = sem.used;
    }
    log.total = total.item();
    log.feat = rec.feat.item();
    log.joint = rec.joint.item();
    log.vel = rec.vel.item();
    if (!std::isfinite(log.total)) {
      model.params().load(last_good);
      result.diverged = true;
      result.message = "non-finite loss at step " + std::to_string(step);
      break;
    }
    ag::backward(total);
    optim::clip_grad_norm(model.params(), config.grad_clip);
    adam.step();
    if (step % 100 == 0) last_good = model.params().snapshot();
    result.history.push_back(log);
    if (on_step) on_step(log);
  }
  return result;
}

}  // namespace molingo::ae
