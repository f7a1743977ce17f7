#pragma once

#include <functional>
#include <string>
#include <vector>

#include "molingo/autoencoder.hpp"
#include "molingo/generator.hpp"
#include "molingo/motion.hpp"
#include "molingo/text.hpp"

namespace molingo::sample {

struct SampleConfig {
  std::size_t inference_steps = 16;
  std::size_t denoise_steps = 32;
  double cfg_scale = 6.0;
  double churn = 0.1;  // gamma
  std::uint64_t seed = 0;

  void validate() const;
};

// Ordered disjoint position sets covering 0..l-1.
struct UnmaskSchedule {
  std::vector<std::vector<std::size_t>> steps;
};

// Positions unmasked after step s of S: ceil(l (1 - cos(pi s / S)) / 2).
std::size_t cumulative_unmasked(std::size_t l, std::size_t s, std::size_t steps);
UnmaskSchedule build_schedule(std::size_t l, std::size_t steps, Rng& rng);

// v_null + s (v_cond - v_null); s = 1 returns v_cond and s = 0 returns v_null.
Tensor cfg_velocity(const Tensor& v_cond, const Tensor& v_null, double s);

// Fills v_cond and v_null for the state x [M, d] at time t.
using VelocityFn = std::function<void(const Tensor& x, double t, Tensor& v_cond, Tensor& v_null)>;
// Standard normal draw for a given row.
using NoiseFn = std::function<double(std::size_t row)>;

// Euler integration of the guided velocity from t = 1 to t = 0 over
// denoise_steps equal steps, starting from fresh noise. After every step but
// the last, the churn refresh re-noises the clean estimate x - t' v up to
// t'' = t' + gamma (t_prev - t'); the next step then runs from t''.
Tensor integrate_flow(std::size_t rows, std::size_t d, const VelocityFn& velocity, const SampleConfig& config,
                      const NoiseFn& noise);
Tensor denoise_positions(std::size_t rows, std::size_t d, const VelocityFn& velocity, const SampleConfig& config,
                         Rng& rng);

struct GenerationRequest {
  std::string prompt;
  std::size_t frames = 0;
  std::uint64_t seed = 0;
};

struct GenerationTrace {
  std::vector<UnmaskSchedule> schedules;  // one per request
  std::vector<Tensor> latents;            // final normalized latents per request
};

// Throws ShapeError naming the mismatch.
void check_compatible(const ae::Autoencoder& autoencoder, const gen::Generator& generator);

// Requests are generated together but each draws from its own seed, so the
// result for a request does not depend on the rest of the batch.
std::vector<motion::MotionSequence> generate_batch(const std::vector<GenerationRequest>& requests,
                                                   const ae::Autoencoder& autoencoder,
                                                   const gen::Generator& generator, const SampleConfig& config,
                                                   const text::PromptEncoder& prompts = {},
                                                   GenerationTrace* trace = nullptr);

motion::MotionSequence generate(const std::string& prompt, std::size_t frames, const ae::Autoencoder& autoencoder,
                                const gen::Generator& generator, const SampleConfig& config,
                                const text::PromptEncoder& prompts = {});

}  // namespace molingo::sample
