#include "molingo/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "molingo/errors.hpp"
#include "molingo/optim.hpp"

namespace molingo::eval {

namespace {

nlohmann::json spec_json(const motion::RepresentationSpec& s) {
  return {{"layout", static_cast<int>(s.layout)}, {"joints", s.joints}, {"fps", s.fps}, {"facing", s.facing}};
}

motion::RepresentationSpec spec_from_json(const nlohmann::json& r) {
  motion::RepresentationSpec spec;
  spec.layout = static_cast<motion::Layout>(r.at("layout").get<int>());
  spec.joints = r.at("joints").get<std::size_t>();
  spec.fps = r.at("fps").get<double>();
  spec.facing = r.at("facing").get<std::array<std::size_t, 4>>();
  return spec;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Normalized frames of several motions, edge-padded to a common multiple of 4.
Tensor pack_motions(const std::vector<const motion::MotionSequence*>& items, const motion::NormalizationStats& stats,
                    std::vector<std::size_t>& lengths) {
  std::size_t t_max = 0;
  for (const auto* m : items) t_max = std::max(t_max, m->length());
  t_max = motion::padded_length(t_max, 4);
  const std::size_t d = stats.dim(), b = items.size();
  Tensor x({b, t_max, d});
  lengths.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor f = motion::normalize_frames(items[i]->frames, stats);
    const std::size_t n = f.dim(0);
    lengths[i] = n;
    double* dst = x.ptr() + i * t_max * d;
    std::copy_n(f.ptr(), n * d, dst);
    for (std::size_t t = n; t < t_max; ++t) std::copy_n(f.ptr() + (n - 1) * d, d, dst + t * d);
  }
  return x;
}

Tensor unit_rows(const Tensor& x) {
  Tensor out = x;
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += x[r * c + j] * x[r * c + j];
    const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] *= inv;
  }
  return out;
}

void require_finite(const Tensor& t, const char* what) {
  if (!all_finite(t)) throw NumericalError(std::string(what) + " contain non-finite values");
}

}  // namespace

void EvaluatorConfig::validate() const {
  if (feature_dim == 0 || hidden == 0 || text_hidden == 0) throw std::invalid_argument("evaluator sizes must be positive");
  if (batch < 2) throw std::invalid_argument("evaluator batch size must be at least 2");
  if (!(init_temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(max_logit_scale >= 1.0)) throw std::invalid_argument("max_logit_scale must be at least 1");
}

void to_json(nlohmann::json& j, const EvaluatorConfig& c) {
  j = nlohmann::json{{"feature_dim", c.feature_dim},   {"hidden", c.hidden}, {"text_hidden", c.text_hidden},
                     {"init_temperature", c.init_temperature}, {"max_logit_scale", c.max_logit_scale},
                     {"lr", c.lr},                      {"batch", c.batch},   {"steps", c.steps},
                     {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, EvaluatorConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("feature_dim", c.feature_dim);
  get("hidden", c.hidden);
  get("text_hidden", c.text_hidden);
  get("init_temperature", c.init_temperature);
  get("max_logit_scale", c.max_logit_scale);
  get("lr", c.lr);
  get("batch", c.batch);
  get("steps", c.steps);
  get("grad_clip", c.grad_clip);
}

Evaluator::Evaluator(const EvaluatorConfig& config, const motion::RepresentationSpec& spec, std::uint64_t seed)
    : config_(config), spec_(spec) {
  config_.validate();
  spec_.validate();
  Rng rng(seed);
  const std::size_t d = spec_.dim(), h = config_.hidden, f = config_.feature_dim, th = config_.text_hidden;
  convs_.emplace_back(params_, "motion.conv0", d, h, 4, 2, 1, rng, true);
  convs_.emplace_back(params_, "motion.conv1", h, h, 4, 2, 1, rng);
  convs_.emplace_back(params_, "motion.conv2", h, h, 3, 1, 1, rng);
  convs_.emplace_back(params_, "motion.conv3", h, h, 3, 1, 2, rng);
  motion_fc1_ = nn::Linear(params_, "motion.fc1", h, h, rng);
  motion_fc2_ = nn::Linear(params_, "motion.fc2", h, f, rng);
  token_fc1_ = nn::Linear(params_, "text.fc1", text::kEmbedDim, th, rng);
  token_fc2_ = nn::Linear(params_, "text.fc2", th, th, rng);
  text_out_ = nn::Linear(params_, "text.out", th, f, rng);
  log_scale_ = params_.add("log_scale", Tensor({1}, std::log(1.0 / config_.init_temperature)));
  stats_ = {Tensor({d}, 0.0), Tensor({d}, 1.0)};
}

void Evaluator::set_stats(motion::NormalizationStats stats) {
  if (stats.dim() != spec_.dim()) throw ShapeError("evaluator stats width does not match the representation");
  stats_ = std::move(stats);
}

Var Evaluator::motion_forward(const Var& x, const std::vector<std::size_t>& lengths) const {
  if (x.shape().size() != 3 || x.shape()[2] != spec_.dim())
    throw ShapeError("evaluator expects motion [B, T, " + std::to_string(spec_.dim()) + "]");
  if (lengths.size() != x.shape()[0]) throw ShapeError("evaluator: one length per motion required");
  Var h = x;
  for (const auto& c : convs_) h = ag::silu(c(h));
  const std::size_t t_out = h.shape()[1];
  std::vector<std::size_t> pooled(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i)
    pooled[i] = std::clamp<std::size_t>(ceil_div(lengths[i], 4), 1, t_out);
  return motion_fc2_(ag::silu(motion_fc1_(ag::mean_pool_time(h, pooled))));
}

Var Evaluator::text_forward(const std::vector<const text::TokenEmbeddings*>& prompts) const {
  std::size_t k_max = 0;
  for (const auto* p : prompts) {
    if (p->dim() != text::kEmbedDim) throw ShapeError("evaluator expects toy token embeddings");
    k_max = std::max(k_max, p->count());
  }
  const std::size_t n = prompts.size(), e = text::kEmbedDim;
  Tensor tokens({n, k_max, e});
  std::vector<std::size_t> lengths(n);
  for (std::size_t i = 0; i < n; ++i) {
    lengths[i] = prompts[i]->count();
    std::copy_n(prompts[i]->tokens.ptr(), lengths[i] * e, tokens.ptr() + i * k_max * e);
  }
  const Var h = token_fc2_(ag::silu(token_fc1_(ag::constant(std::move(tokens)))));
  return text_out_(ag::silu(ag::mean_pool_time(h, lengths)));
}

Var Evaluator::logit_scale() const { return ag::exp(log_scale_); }

void Evaluator::clamp_temperature() {
  Tensor& v = log_scale_.mutable_value();
  v[0] = std::clamp(v[0], 0.0, std::log(config_.max_logit_scale));
}

Tensor Evaluator::motion_features(const std::vector<motion::MotionSequence>& motions) const {
  ag::NoGradGuard ng;
  const std::size_t n = motions.size(), f = config_.feature_dim;
  Tensor out({n, f});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return motions[a].length() < motions[b].length(); });
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < n; s += kChunk) {
    std::vector<const motion::MotionSequence*> items;
    for (std::size_t i = s; i < std::min(n, s + kChunk); ++i) {
      const auto& m = motions[order[i]];
      m.validate();
      if (!(m.spec == spec_)) throw ShapeError("motion representation does not match the evaluator");
      items.push_back(&m);
    }
    std::vector<std::size_t> lengths;
    const Tensor x = pack_motions(items, stats_, lengths);
    const Tensor y = motion_forward(ag::constant(x), lengths).value();
    for (std::size_t i = 0; i < items.size(); ++i) std::copy_n(y.ptr() + i * f, f, out.ptr() + order[s + i] * f);
  }
  return out;
}

Tensor Evaluator::text_features(const std::vector<std::string>& prompts) const {
  ag::NoGradGuard ng;
  std::vector<text::TokenEmbeddings> tokens;
  tokens.reserve(prompts.size());
  for (const auto& p : prompts) tokens.push_back(text::toy_encode(p));
  std::vector<const text::TokenEmbeddings*> ptrs;
  for (const auto& t : tokens) ptrs.push_back(&t);
  if (ptrs.empty()) return Tensor({0, config_.feature_dim});
  return text_forward(ptrs).value();
}

ckpt::Checkpoint Evaluator::to_checkpoint() const {
  ckpt::Checkpoint c;
  c.kind = "evaluator";
  c.config = nlohmann::json{{"model", config_}, {"representation", spec_json(spec_)}};
  c.tensors = params_.snapshot();
  c.tensors["stats.mean"] = stats_.mean;
  c.tensors["stats.std"] = stats_.std;
  return c;
}

std::unique_ptr<Evaluator> Evaluator::from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.kind != "evaluator") throw ShapeError("checkpoint holds a " + c.kind + ", not an evaluator");
  auto e = std::make_unique<Evaluator>(c.config.at("model").get<EvaluatorConfig>(),
                                       spec_from_json(c.config.at("representation")), 0);
  e->params_.load(c.tensors);
  e->set_stats({ckpt::require_tensor(c, "stats.mean"), ckpt::require_tensor(c, "stats.std")});
  return e;
}

Var info_nce(const Var& motion, const Var& text, const Var& scale, const std::vector<std::uint8_t>& same_text) {
  const std::size_t b = motion.value().rows();
  if (b < 2) throw std::invalid_argument("info_nce needs at least two pairs");
  if (text.value().rows() != b) throw ShapeError("info_nce: motion and text batches differ");
  if (same_text.size() != b * b) throw ShapeError("info_nce: same_text must be [B, B]");
  Tensor bias({b, b});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      if (i != j && same_text[i * b + j]) bias[i * b + j] = -1e4;
  Tensor bias_t({b, b});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) bias_t[i * b + j] = bias[j * b + i];
  const Var m = ag::l2_normalize_rows(motion), t = ag::l2_normalize_rows(text);
  std::vector<std::size_t> diag(b);
  std::iota(diag.begin(), diag.end(), 0);
  const Var mt = ag::add(ag::mul_scalar_var(ag::matmul_nt(m, t), scale), ag::constant(std::move(bias)));
  const Var tm = ag::add(ag::mul_scalar_var(ag::matmul_nt(t, m), scale), ag::constant(std::move(bias_t)));
  return ag::scale(ag::add(ag::cross_entropy_rows(mt, diag), ag::cross_entropy_rows(tm, diag)), 0.5);
}

EvalTrainResult train_evaluator(const motion::Corpus& corpus, const EvaluatorConfig& config, std::uint64_t seed,
                                const std::function<void(const EvalLogEntry&)>& on_step) {
  config.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!corpus[i].prompts.empty()) usable.push_back(i);
  if (usable.size() < 2) throw std::invalid_argument("train_evaluator needs at least two prompted sequences");
  EvalTrainResult result;
  result.model = std::make_unique<Evaluator>(config, corpus[usable.front()].spec, derive_seed(seed, 21));
  Evaluator& e = *result.model;
  e.set_stats(motion::NormalizationStats::compute(corpus));

  std::map<std::string, text::TokenEmbeddings> cache;
  auto embed = [&](const std::string& p) -> const text::TokenEmbeddings& {
    auto it = cache.find(p);
    if (it == cache.end()) it = cache.emplace(p, text::toy_encode(p)).first;
    return it->second;
  };

  optim::Adam adam(e.params(), {config.lr});
  Rng rng(derive_seed(seed, 22));
  const std::size_t b = std::min(config.batch, usable.size());
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const auto picks = rng.sample_without_replacement(usable.size(), b);
    std::vector<const motion::MotionSequence*> items(b);
    std::vector<const text::TokenEmbeddings*> texts(b);
    std::vector<std::string> chosen(b);
    for (std::size_t i = 0; i < b; ++i) {
      items[i] = &corpus[usable[picks[i]]];
      const auto& ps = items[i]->prompts;
      chosen[i] = ps[rng.index(ps.size())];
      texts[i] = &embed(chosen[i]);
    }
    std::vector<std::uint8_t> same(b * b, 0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) same[i * b + j] = chosen[i] == chosen[j];
    std::vector<std::size_t> lengths;
    const Tensor x = pack_motions(items, e.stats(), lengths);

    e.params().zero_grad();
    const Var scale = e.logit_scale();
    const Var loss = info_nce(e.motion_forward(ag::constant(x), lengths), e.text_forward(texts), scale, same);
    EvalLogEntry log{step, loss.item(), 1.0 / scale.item()};
    if (!std::isfinite(log.loss)) throw NumericalError("non-finite evaluator loss at step " + std::to_string(step));
    ag::backward(loss);
    optim::clip_grad_norm(e.params(), config.grad_clip);
    adam.step(config.lr);
    e.clamp_temperature();
    result.history.push_back(log);
    if (on_step) on_step(log);
  }
  return result;
}

double fid(const Tensor& real, const Tensor& generated, FidInfo* info) {
  if (real.cols() != generated.cols()) throw ShapeError("fid: feature widths differ");
  if (real.rows() < 2 || generated.rows() < 2) throw std::invalid_argument("fid needs at least two samples per set");
  require_finite(real, "fid: real features");
  require_finite(generated, "fid: generated features");
  using Mat = Eigen::MatrixXd;
  using Vec = Eigen::VectorXd;
  const std::size_t f = real.cols();
  const bool regularize = real.rows() < f + 1 || generated.rows() < f + 1;
  if (info) info->regularized = regularize;
  auto moments = [&](const Tensor& x, Vec& mu, Mat& cov) {
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        x.ptr(), static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(f));
    mu = m.colwise().mean().transpose();
    const Mat centered = m.rowwise() - mu.transpose();
    cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
    if (regularize) cov.diagonal().array() += 1e-6;
  };
  Vec mu_r, mu_g;
  Mat cov_r, cov_g;
  moments(real, mu_r, cov_r);
  moments(generated, mu_g, cov_g);

  Eigen::SelfAdjointEigenSolver<Mat> er(cov_r);
  const Vec root_vals = er.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat root_r = er.eigenvectors() * root_vals.asDiagonal() * er.eigenvectors().transpose();
  Mat prod = root_r * cov_g * root_r;
  prod = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> ep(prod, Eigen::EigenvaluesOnly);
  const double tr_sqrt = ep.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_r - mu_g).squaredNorm() + cov_r.trace() + cov_g.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

RetrievalResult r_precision(const Tensor& motion, const Tensor& text, std::size_t pool, Rng& rng, std::size_t pools) {
  const std::size_t n = motion.rows(), f = motion.cols();
  if (text.rows() != n || text.cols() != f) throw ShapeError("r_precision: motion and text features differ in shape");
  if (pool < 2) throw std::invalid_argument("retrieval pool must hold at least two pairs");
  if (n < pool) {
    throw std::invalid_argument("r_precision needs at least " + std::to_string(pool) + " pairs, got " +
                                std::to_string(n));
  }
  require_finite(motion, "r_precision: motion features");
  require_finite(text, "r_precision: text features");
  const Tensor m = unit_rows(motion), t = unit_rows(text);

  std::vector<std::vector<std::size_t>> groups;
  if (pools == 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t s = 0; s + pool <= n; s += pool) groups.emplace_back(order.begin() + s, order.begin() + s + pool);
  } else {
    for (std::size_t p = 0; p < pools; ++p) groups.push_back(rng.sample_without_replacement(n, pool));
  }

  std::size_t hits[3] = {0, 0, 0}, trials = 0;
  for (const auto& g : groups) {
    for (std::size_t a : g) {
      auto sim = [&](std::size_t b) {
        double s = 0;
        for (std::size_t c = 0; c < f; ++c) s += m[a * f + c] * t[b * f + c];
        return s;
      };
      const double own = sim(a);
      std::size_t better = 0;
      for (std::size_t b : g)
        if (b != a && sim(b) > own) ++better;
      for (std::size_t k = 0; k < 3; ++k) hits[k] += better <= k;
      ++trials;
    }
  }
  RetrievalResult r;
  r.pools = groups.size();
  r.top1 = static_cast<double>(hits[0]) / static_cast<double>(trials);
  r.top2 = static_cast<double>(hits[1]) / static_cast<double>(trials);
  r.top3 = static_cast<double>(hits[2]) / static_cast<double>(trials);
  double dist = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < f; ++c) s += (m[i * f + c] - t[i * f + c]) * (m[i * f + c] - t[i * f + c]);
    dist += std::sqrt(s);
  }
  r.matching_score = dist / static_cast<double>(n);
  return r;
}

double clip_score(const Tensor& motion, const Tensor& text) {
  if (motion.rows() == 0) throw std::invalid_argument("clip_score: empty input");
  if (motion.shape() != text.shape()) throw ShapeError("clip_score: motion and text features differ in shape");
  const Tensor m = unit_rows(motion), t = unit_rows(text);
  const std::size_t n = m.rows(), f = m.cols();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < f; ++c) s += m[i * f + c] * t[i * f + c];
    total += std::clamp(s, -1.0, 1.0);
  }
  return total / static_cast<double>(n);
}

double mmodality(const std::vector<Tensor>& groups) {
  if (groups.empty()) throw std::invalid_argument("mmodality: no prompts");
  double total = 0;
  for (const auto& g : groups) {
    if (g.rows() < 2) throw std::invalid_argument("mmodality needs at least two repeats per prompt");
    const std::size_t f = g.cols(), pairs = g.rows() / 2;
    double acc = 0;
    for (std::size_t p = 0; p < pairs; ++p) {
      double s = 0;
      for (std::size_t c = 0; c < f; ++c) {
        const double diff = g[2 * p * f + c] - g[(2 * p + 1) * f + c];
        s += diff * diff;
      }
      acc += std::sqrt(s);
    }
    total += acc / static_cast<double>(pairs);
  }
  return total / static_cast<double>(groups.size());
}

double rfid(const motion::Corpus& corpus, const ae::Autoencoder& autoencoder, const Evaluator& evaluator,
            FidInfo* info) {
  motion::Corpus recon(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < corpus.size(); ++i) recon[i] = autoencoder.reconstruct(corpus[i]);
  return fid(evaluator.motion_features(corpus), evaluator.motion_features(recon), info);
}

MetricValue summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  MetricValue v;
  const double n = static_cast<double>(values.size());
  v.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() >= 2) {
    double ss = 0;
    for (double x : values) ss += (x - v.mean) * (x - v.mean);
    v.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return v;
}

const MetricValue& MetricReport::at(const std::string& name) const {
  for (const auto& [k, v] : metrics)
    if (k == name) return v;
  throw std::out_of_range("metric not in report: " + name);
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [k, v] : metrics)
    m[k] = {{"mean", v.mean}, {"ci95", v.ci95 ? nlohmann::json(*v.ci95) : nlohmann::json(nullptr)}};
  return {{"runs", runs}, {"metrics", m}, {"notes", notes}};
}

MetricReport evaluate_run(const gen::Generator& generator, const ae::Autoencoder& autoencoder,
                          const Evaluator& evaluator, const motion::Corpus& corpus, const EvalRunConfig& config,
                          const text::PromptEncoder& prompts, const std::function<void(std::size_t)>& on_run) {
  if (config.runs < 1) throw std::invalid_argument("evaluate_run needs at least one run");
  if (config.batch < 1) throw std::invalid_argument("generation batch must be positive");
  config.sampling.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!corpus[i].prompts.empty()) usable.push_back(i);
  const std::size_t samples = config.samples == 0 ? usable.size() : std::min(config.samples, usable.size());
  if (samples < config.pool) {
    throw std::invalid_argument("evaluation needs at least " + std::to_string(config.pool) +
                                " prompted sequences, got " + std::to_string(samples));
  }

  auto generate_all = [&](const std::vector<sample::GenerationRequest>& reqs) {
    std::vector<motion::MotionSequence> out;
    for (std::size_t s = 0; s < reqs.size(); s += config.batch) {
      const std::vector<sample::GenerationRequest> chunk(
          reqs.begin() + static_cast<std::ptrdiff_t>(s),
          reqs.begin() + static_cast<std::ptrdiff_t>(std::min(reqs.size(), s + config.batch)));
      auto part = sample::generate_batch(chunk, autoencoder, generator, config.sampling, prompts);
      for (auto& m : part) out.push_back(std::move(m));
    }
    return out;
  };

  std::map<std::string, std::vector<double>> values;
  bool regularized = false;
  std::vector<std::size_t> first_items;
  for (std::size_t run = 0; run < config.runs; ++run) {
    Rng rng(derive_seed(config.seed, 1000 + run));
    const auto picks = rng.sample_without_replacement(usable.size(), samples);
    std::vector<const motion::MotionSequence*> real(samples);
    std::vector<std::string> texts(samples);
    std::vector<sample::GenerationRequest> reqs(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      real[i] = &corpus[usable[picks[i]]];
      texts[i] = real[i]->prompts[rng.index(real[i]->prompts.size())];
      reqs[i] = {texts[i], real[i]->length(), rng.next()};
    }
    if (run == 0)
      for (std::size_t i = 0; i < samples; ++i) first_items.push_back(usable[picks[i]]);
    const auto generated = generate_all(reqs);
    motion::Corpus real_copy;
    real_copy.reserve(samples);
    for (const auto* m : real) real_copy.push_back(*m);
    const Tensor real_feat = evaluator.motion_features(real_copy);
    const Tensor gen_feat = evaluator.motion_features(generated);
    const Tensor text_feat = evaluator.text_features(texts);

    FidInfo info;
    values["fid"].push_back(fid(real_feat, gen_feat, &info));
    regularized = regularized || info.regularized;
    const RetrievalResult r = r_precision(gen_feat, text_feat, config.pool, rng);
    values["r_precision_top1"].push_back(r.top1);
    values["r_precision_top2"].push_back(r.top2);
    values["r_precision_top3"].push_back(r.top3);
    values["matching_score"].push_back(r.matching_score);
    values["clip_score"].push_back(clip_score(gen_feat, text_feat));
    const RetrievalResult rr = r_precision(real_feat, text_feat, config.pool, rng);
    values["real_r_precision_top1"].push_back(rr.top1);
    values["real_r_precision_top3"].push_back(rr.top3);
    values["real_matching_score"].push_back(rr.matching_score);

    if (config.mm_repeats >= 2 && config.mm_prompts > 0) {
      const std::size_t np = std::min(config.mm_prompts, samples);
      std::vector<sample::GenerationRequest> mm;
      for (std::size_t p = 0; p < np; ++p)
        for (std::size_t k = 0; k < config.mm_repeats; ++k) mm.push_back({texts[p], real[p]->length(), rng.next()});
      const Tensor feats = evaluator.motion_features(generate_all(mm));
      std::vector<Tensor> groups;
      for (std::size_t p = 0; p < np; ++p) groups.push_back(feats.slice_rows(p * config.mm_repeats, config.mm_repeats));
      values["mmodality"].push_back(mmodality(groups));
    }
    if (on_run) on_run(run);
  }

  MetricReport report;
  report.runs = config.runs;
  const char* order[] = {"fid",           "r_precision_top1", "r_precision_top2",      "r_precision_top3",
                         "matching_score", "clip_score",       "mmodality",             "real_r_precision_top1",
                         "real_r_precision_top3", "real_matching_score"};
  for (const char* k : order)
    if (values.count(k)) report.metrics.emplace_back(k, summarize(values[k]));

  // Reconstruction quality of the autoencoder on the first run's items.
  motion::Corpus items, recon(first_items.size());
  for (std::size_t i : first_items) items.push_back(corpus[i]);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < items.size(); ++i) recon[i] = autoencoder.reconstruct(items[i]);
  double mp = 0;
  for (std::size_t i = 0; i < items.size(); ++i) mp += motion::mpjpe_mm(items[i], recon[i]);
  report.metrics.emplace_back("mpjpe_mm", MetricValue{mp / static_cast<double>(items.size()), std::nullopt});
  report.metrics.emplace_back(
      "rfid", MetricValue{fid(evaluator.motion_features(items), evaluator.motion_features(recon)), std::nullopt});

  report.notes.push_back("retrieval pool " + std::to_string(config.pool) + " ranked by cosine of evaluator features");
  report.notes.push_back("clip_score uses the contrastive evaluator in place of a CLIP model");
  report.notes.push_back("matching_score is the mean distance between unit-normalized matched features");
  if (regularized) report.notes.push_back("fid covariances regularized with 1e-6 I (fewer samples than features + 1)");
  if (config.runs == 1) report.notes.push_back("single run: confidence intervals are null");
  return report;
}

}  // namespace molingo::eval
