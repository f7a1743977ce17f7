#include "molingo/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "molingo/errors.hpp"

namespace molingo::sample {

using ag::Var;

void SampleConfig::validate() const {
  if (inference_steps < 1) throw std::invalid_argument("inference_steps must be at least 1");
  if (denoise_steps < 1) throw std::invalid_argument("denoise_steps must be at least 1");
  if (!(std::isfinite(cfg_scale) && cfg_scale >= 0.0)) throw std::invalid_argument("cfg_scale must be finite and >= 0");
  if (!(churn >= 0.0 && churn < 1.0)) throw std::invalid_argument("churn must lie in [0, 1)");
}

std::size_t cumulative_unmasked(std::size_t l, std::size_t s, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("schedule needs at least one step");
  if (s >= steps) return l;
  const double frac = 0.5 * (1.0 - std::cos(std::numbers::pi * static_cast<double>(s) / static_cast<double>(steps)));
  const double raw = std::ceil(static_cast<double>(l) * frac - 1e-9);
  return std::min<std::size_t>(l, static_cast<std::size_t>(std::max(raw, 0.0)));
}

UnmaskSchedule build_schedule(std::size_t l, std::size_t steps, Rng& rng) {
  if (l == 0) throw std::invalid_argument("build_schedule: empty latent sequence");
  const auto order = rng.sample_without_replacement(l, l);
  UnmaskSchedule out;
  out.steps.resize(steps);
  std::size_t done = 0;
  for (std::size_t s = 1; s <= steps; ++s) {
    const std::size_t upto = std::max(done, cumulative_unmasked(l, s, steps));
    auto& set = out.steps[s - 1];
    set.assign(order.begin() + static_cast<std::ptrdiff_t>(done), order.begin() + static_cast<std::ptrdiff_t>(upto));
    std::sort(set.begin(), set.end());
    done = upto;
  }
  return out;
}

Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_null, double s) {
  if (v_cond.shape() != v_null.shape()) throw ShapeError("cfg_velocity: shapes differ");
  if (s == 1.0) return v_cond;
  if (s == 0.0) return v_null;
  Tensor out(v_cond.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = v_null[i] + s * (v_cond[i] - v_null[i]);
  return out;
}

Tensor integrate_flow(std::size_t rows, std::size_t d, const VelocityFn& velocity, const SampleConfig& config,
                      const NoiseFn& noise) {
  config.validate();
  Tensor x({rows, d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) x[r * d + c] = noise(r);
  if (rows == 0) return x;
  const std::size_t steps = config.denoise_steps;
  double t = 1.0;
  Tensor vc, vn;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t_next = k + 1 == steps ? 0.0 : 1.0 - static_cast<double>(k + 1) / static_cast<double>(steps);
    velocity(x, t, vc, vn);
    if (vc.shape() != x.shape() || vn.shape() != x.shape()) throw ShapeError("velocity returned the wrong shape");
    const Tensor v = cfg_velocity(vc, vn, config.cfg_scale);
    const double dt = t - t_next;
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] -= dt * v[i];
    if (k + 1 < steps && config.churn > 0.0) {
      const double t_up = t_next + config.churn * (t - t_next);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) {
          const std::size_t i = r * d + c;
          const double clean = x[i] - t_next * v[i];
          x[i] = (1.0 - t_up) * clean + t_up * noise(r);
        }
      t = t_up;
    } else {
      t = t_next;
    }
    if (!all_finite(x)) {
      throw NumericalError("non-finite denoising state after step " + std::to_string(k + 1) + " of " +
                           std::to_string(steps) + " (t = " + std::to_string(t) + ")");
    }
  }
  return x;
}

Tensor denoise_positions(std::size_t rows, std::size_t d, const VelocityFn& velocity, const SampleConfig& config,
                         Rng& rng) {
  return integrate_flow(rows, d, velocity, config, [&](std::size_t) { return rng.normal(); });
}

void check_compatible(const ae::Autoencoder& autoencoder, const gen::Generator& generator) {
  const auto& a = autoencoder.config();
  const auto& g = generator.config();
  if (a.latent_dim != g.latent_dim) {
    throw ShapeError("autoencoder latent width " + std::to_string(a.latent_dim) + " does not match generator width " +
                     std::to_string(g.latent_dim));
  }
  if (a.downsample != generator.ae_downsample) {
    throw ShapeError("autoencoder downsampling " + std::to_string(a.downsample) +
                     " does not match the generator's " + std::to_string(generator.ae_downsample));
  }
}

std::vector<motion::MotionSequence> generate_batch(const std::vector<GenerationRequest>& requests,
                                                   const ae::Autoencoder& autoencoder,
                                                   const gen::Generator& generator, const SampleConfig& config,
                                                   const text::PromptEncoder& prompts, GenerationTrace* trace) {
  config.validate();
  check_compatible(autoencoder, generator);
  if (requests.empty()) return {};
  if (prompts.dim() != generator.config().adapter.embed_dim) {
    throw ShapeError("text embedding width " + std::to_string(prompts.dim()) + " does not match generator width " +
                     std::to_string(generator.config().adapter.embed_dim));
  }
  ag::NoGradGuard no_grad;
  const std::size_t b = requests.size(), d = generator.config().latent_dim, dh = generator.config().model_dim;
  const std::size_t h = autoencoder.config().downsample;

  std::vector<std::size_t> lengths(b);
  std::vector<Rng> rngs;
  std::vector<UnmaskSchedule> schedules;
  std::size_t l_max = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (requests[i].frames == 0) throw std::invalid_argument("requested motion length must be positive");
    lengths[i] = motion::padded_length(requests[i].frames, h) / h;
    if (lengths[i] > generator.config().max_positions) {
      throw ShapeError(std::to_string(requests[i].frames) + " frames need " + std::to_string(lengths[i]) +
                       " latents, more than the generator maximum of " +
                       std::to_string(generator.config().max_positions));
    }
    l_max = std::max(l_max, lengths[i]);
    rngs.emplace_back(requests[i].seed);
    schedules.push_back(build_schedule(lengths[i], config.inference_steps, rngs.back()));
  }

  std::map<std::string, text::TokenEmbeddings> cache;
  auto embed = [&](const std::string& p) -> const text::TokenEmbeddings& {
    auto it = cache.find(p);
    if (it == cache.end()) it = cache.emplace(p, prompts.encode(p)).first;
    return it->second;
  };
  std::vector<const text::TokenEmbeddings*> cond_text(b), null_text(b, &embed(""));
  for (std::size_t i = 0; i < b; ++i) cond_text[i] = &embed(requests[i].prompt);
  const bool guided = config.cfg_scale != 1.0;
  const text::BatchConditioning cond = generator.encode_text(cond_text);
  const text::BatchConditioning null = guided ? generator.encode_text(null_text) : text::BatchConditioning{};

  Tensor state({b, l_max, d});
  std::vector<std::uint8_t> masked(b * l_max, 1), valid(b * l_max, 0);
  for (std::size_t i = 0; i < b; ++i)
    std::fill_n(valid.begin() + static_cast<std::ptrdiff_t>(i * l_max), lengths[i], 1);

  for (std::size_t s = 0; s < config.inference_steps; ++s) {
    std::vector<std::size_t> rows, owner;
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t pos : schedules[i].steps[s]) {
        rows.push_back(i * l_max + pos);
        owner.push_back(i);
      }
    if (rows.empty()) continue;
    const Var input = generator.masked_input(state, masked);
    const Var zc = ag::gather_rows(ag::reshape(generator.conditioning_forward(input, cond, &valid), {b * l_max, dh}), rows);
    const Var zn = guided
                       ? ag::gather_rows(
                             ag::reshape(generator.conditioning_forward(input, null, &valid), {b * l_max, dh}), rows)
                       : Var{};
    const std::size_t m = rows.size();
    const Var z_both = guided ? ag::constant(Tensor::concat_rows(zc.value(), zn.value())) : zc;

    auto velocity = [&](const Tensor& x, double t, Tensor& v_cond, Tensor& v_null) {
      if (!guided) {
        v_cond = generator.velocity(ag::constant(x), std::vector<double>(m, t), zc).value();
        v_null = v_cond;
        return;
      }
      const Tensor both =
          generator.velocity(ag::constant(Tensor::concat_rows(x, x)), std::vector<double>(2 * m, t), z_both).value();
      v_cond = both.slice_rows(0, m);
      v_null = both.slice_rows(m, m);
    };
    const Tensor clean =
        integrate_flow(m, d, velocity, config, [&](std::size_t r) { return rngs[owner[r]].normal(); });
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(clean.ptr() + r * d, d, state.ptr() + rows[r] * d);
      masked[rows[r]] = 0;
    }
  }

  std::vector<motion::MotionSequence> out(b);
  if (trace) {
    trace->schedules = schedules;
    trace->latents.clear();
  }
  for (std::size_t i = 0; i < b; ++i) {
    Tensor z({lengths[i], d});
    std::copy_n(state.ptr() + i * l_max * d, lengths[i] * d, z.ptr());
    if (trace) trace->latents.push_back(z);
    out[i] = autoencoder.decode(generator.latent_stats().denormalize(z), requests[i].frames);
    out[i].prompts = {requests[i].prompt};
  }
  return out;
}

motion::MotionSequence generate(const std::string& prompt, std::size_t frames, const ae::Autoencoder& autoencoder,
                                const gen::Generator& generator, const SampleConfig& config,
                                const text::PromptEncoder& prompts) {
  return generate_batch({{prompt, frames, config.seed}}, autoencoder, generator, config, prompts).front();
}

}  // namespace molingo::sample
