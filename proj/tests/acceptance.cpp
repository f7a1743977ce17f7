// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: molingo_acceptance [--only N]...

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "molingo/errors.hpp"
#include "molingo/evaluation.hpp"
#include "support.hpp"

using namespace molingo;
using ag::Var;

namespace {

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Directional derivative check over every parameter of a model.
double param_grad_check(nn::ParamSet& ps, const std::function<Var()>& loss, std::size_t directions, Rng& rng) {
  ps.zero_grad();
  ag::backward(loss());
  std::vector<Tensor> grads;
  for (auto& [n, v] : ps.entries()) grads.push_back(v.grad().empty() ? Tensor(v.shape()) : v.grad());
  double worst = 0;
  for (std::size_t d = 0; d < directions; ++d) {
    std::vector<Tensor> dir;
    double analytic = 0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      dir.push_back(testing::random_tensor(grads[i].shape(), rng));
      for (std::size_t k = 0; k < dir[i].numel(); ++k) analytic += grads[i][k] * dir[i][k];
    }
    auto shifted = [&](double s) {
      auto& e = ps.entries();
      for (std::size_t i = 0; i < e.size(); ++i)
        for (std::size_t k = 0; k < dir[i].numel(); ++k) e[i].second.mutable_value()[k] += s * dir[i][k];
      ag::NoGradGuard ng;
      const double v = loss().item();
      for (std::size_t i = 0; i < e.size(); ++i)
        for (std::size_t k = 0; k < dir[i].numel(); ++k) e[i].second.mutable_value()[k] -= s * dir[i][k];
      return v;
    };
    const double numeric = (shifted(1e-5) - shifted(-1e-5)) / 2e-5;
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-7}));
  }
  return worst;
}

ae::AutoencoderConfig mini_ae(ae::Variant v) {
  ae::AutoencoderConfig c;
  c.variant = v;
  c.hidden = 8;
  c.latent_dim = 4;
  return c;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Rng rng(1);
  bool ok = true;
  for (int i = 0; i < 1000 && ok; ++i) {
    const Tensor m = testing::random_tensor({8}, rng), e = testing::random_tensor({8}, rng);
    const Tensor target = gen::flow_target(m, e);
    ok = gen::flow_interpolate(m, e, 0.0) == m && gen::flow_interpolate(m, e, 1.0) == e;
    for (std::size_t k = 0; k < 8; ++k) ok = ok && target[k] == e[k] - m[k];
  }
  return {ok, "1000 draws exact"};
}

Outcome criterion2() {
  Rng rng(2);
  const auto spec = motion::RepresentationSpec::toy();
  const std::size_t dirs = 100;
  std::vector<std::pair<std::string, double>> errors;

  ae::Autoencoder vae(mini_ae(ae::Variant::SAE), spec, 2);
  motion::NormalizationStats st{testing::random_tensor({16}, rng, 0.1), Tensor({16}, 0.5)};
  const Tensor x = testing::random_tensor({1, 8, 16}, rng, 0.5);
  const Tensor labels = testing::random_tensor({2, text::kEmbedDim}, rng);
  auto recon = [&]() {
    const auto enc = vae.encode_batch(ag::constant(x), nullptr);
    return ae::recon_loss(vae.decode_batch(enc.mean), ag::constant(x), st, spec, 1.0, 10.0);
  };
  errors.push_back({"L_feat", param_grad_check(vae.params(), [&] { return recon().feat; }, dirs, rng)});
  errors.push_back({"L_joint", param_grad_check(vae.params(), [&] { return recon().joint; }, dirs, rng)});
  errors.push_back({"L_vel", param_grad_check(vae.params(), [&] { return recon().vel; }, dirs, rng)});
  errors.push_back({"KL", param_grad_check(vae.params(), [&] {
                      const auto enc = vae.encode_batch(ag::constant(x), nullptr);
                      return ae::kl_loss(enc.mean, enc.log_var);
                    }, dirs, rng)});
  errors.push_back({"L_sem", param_grad_check(vae.params(), [&] {
                      const auto enc = vae.encode_batch(ag::constant(x), nullptr);
                      const Var m = ag::reshape(enc.mean, {2, 4});
                      return ae::semantic_loss(m, vae.project_labels(ag::constant(labels)), {0, 1}).loss;
                    }, dirs, rng)});

  gen::GeneratorConfig gc;
  gc.latent_dim = 2;
  gc.model_dim = 8;
  gc.layers = 1;
  gc.heads = 2;
  gc.ffn_mult = 2;
  gc.max_positions = 8;
  gc.head_blocks = 2;
  gc.head_width = 8;
  gc.time_freqs = 4;
  gc.adapter.depth = 1;
  gc.adapter.ffn_mult = 2;
  gc.adapter.l_text = 6;
  gen::Generator g(gc, 3);
  for (auto& [n, v] : g.params().entries())
    for (auto& p : v.mutable_value().data()) p = 0.3 * rng.normal();
  const Tensor latents = testing::random_tensor({1, 3, 2}, rng);
  const auto prompt = text::toy_encode("a person walks");
  errors.push_back({"flow", param_grad_check(g.params(), [&] {
                      const Var z = g.conditioning_forward(g.masked_input(latents, {1, 0, 1}), g.encode_text({&prompt}),
                                                           nullptr);
                      const Var rows = ag::gather_rows(ag::reshape(z, {3, 8}), {0, 2});
                      Tensor m({2, 2});
                      for (std::size_t c = 0; c < 2; ++c) {
                        m.at(0, c) = latents[c];
                        m.at(1, c) = latents[4 + c];
                      }
                      Rng noise(99);
                      return gen::flow_loss(g, rows, m, noise, 2);
                    }, dirs, rng)});

  bool ok = true;
  std::string detail = "max rel err";
  for (const auto& [name, e] : errors) {
    ok = ok && e < 1e-4;
    detail += " " + name + "=" + fmt("%.1e", e);
  }
  return {ok, detail};
}

Outcome criterion3() {
  ae::Autoencoder model(mini_ae(ae::Variant::AE), motion::RepresentationSpec::toy(), 3);
  Rng rng(3);
  const std::size_t frames = 64, latents = frames / 4;
  bool ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    motion::MotionSequence m;
    m.spec = motion::RepresentationSpec::toy();
    m.frames = testing::random_tensor({frames, 16}, rng, 0.3);
    const Tensor base = model.encode(m).latents;
    for (std::size_t i = 0; i < latents; ++i) {
      auto changed = m;
      for (std::size_t f = 4 * i + 5; f < frames; ++f)
        for (std::size_t c = 0; c < 16; ++c) changed.frames.at(f, c) += rng.normal();
      const Tensor z = model.encode(changed).latents;
      for (std::size_t c = 0; c < base.cols(); ++c) ok = ok && z.at(i, c) == base.at(i, c);
    }
  }
  return {ok, "50 inputs x 16 latents bitwise"};
}

Outcome criterion4() {
  ae::Autoencoder model(mini_ae(ae::Variant::AE), motion::RepresentationSpec::toy(), 4);
  Rng rng(4);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x({1, 24, 16});
    for (std::size_t c = 0; c < 16; ++c) {
      const double v = 3.0 * rng.normal();
      for (std::size_t t = 0; t < 24; ++t) x[t * 16 + c] = v;
    }
    const Tensor y = model.input_conv_without_bias(ag::constant(x)).value();
    const std::size_t cols = y.cols();
    for (std::size_t t = 1; t < y.numel() / cols; ++t)
      for (std::size_t c = 0; c < cols; ++c) worst = std::max(worst, std::abs(y[t * cols + c] - y[c]));
  }
  return {worst <= 1e-6, "max deviation " + fmt("%.1e", worst)};
}

Outcome criterion5() {
  Rng rng(5);
  bool monotone = true, keep_all = true, identical = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng.index(4), len = 1 + rng.index(16), d = 2 + rng.index(5), n = b * len;
    Tensor t = testing::random_tensor({n, d}, rng);
    for (std::size_t i = 1; i < n; ++i)
      if (rng.bernoulli(0.5))
        for (std::size_t c = 0; c < d; ++c) t.at(i, c) = t.at(i - 1, c) + 0.02 * rng.normal();
    std::vector<std::uint8_t> valid(n);
    std::size_t valid_count = 0;
    for (auto& v : valid) valid_count += (v = rng.bernoulli(0.85));

    std::vector<double> taus{-1.0, -0.5, 0.0, 0.5, 0.9, 0.99, 0.995, 0.999, 1.0};
    for (int k = 0; k < 4; ++k) taus.push_back(rng.uniform(-1.0, 1.0));
    std::sort(taus.begin(), taus.end());
    std::vector<std::size_t> prev;
    for (double tau : taus) {
      const auto kept = ae::filter_repetitive(t, valid, len, tau);
      const std::set<std::size_t> s(kept.begin(), kept.end());
      for (auto i : prev) monotone = monotone && s.count(i) == 1;
      prev = kept;
    }
    for (double tau : {1.0, 1.5}) keep_all = keep_all && ae::filter_repetitive(t, valid, len, tau).size() == valid_count;

    const Tensor same({n, d}, rng.normal() + 2.0);
    std::vector<std::size_t> lasts;
    for (std::size_t s = 0; s < b; ++s) lasts.push_back(s * len + len - 1);
    identical = identical && ae::filter_repetitive(same, std::vector<std::uint8_t>(n, 1), len, 0.995) == lasts;
  }
  return {monotone && keep_all && identical, std::string("monotone=") + (monotone ? "yes" : "no") +
                                                  " keep_all=" + (keep_all ? "yes" : "no") +
                                                  " identical=" + (identical ? "yes" : "no")};
}

Outcome criterion6() {
  Rng rng(6);
  bool ok = true;
  for (int i = 0; i < 100; ++i) {
    const Tensor vc = testing::random_tensor({4, 3}, rng), vn = testing::random_tensor({4, 3}, rng);
    ok = ok && sample::cfg_velocity(vc, vn, 1.0) == vc && sample::cfg_velocity(vc, vn, 0.0) == vn;
  }
  ae::AutoencoderConfig a = mini_ae(ae::Variant::AE);
  ae::Autoencoder autoencoder(a, motion::RepresentationSpec::toy(), 6);
  gen::GeneratorConfig g;
  g.latent_dim = 4;
  g.model_dim = 16;
  g.layers = 1;
  g.heads = 2;
  g.head_blocks = 1;
  g.head_width = 16;
  g.time_freqs = 8;
  g.max_positions = 16;
  g.adapter.depth = 1;
  gen::Generator generator(g, 6);
  for (auto& [n, v] : generator.params().entries())
    for (auto& p : v.mutable_value().data()) p += 0.1 * rng.normal();
  sample::SampleConfig sc;
  sc.churn = 0.0;
  sc.inference_steps = 4;
  sc.denoise_steps = 8;
  sc.seed = 11;
  const auto x = sample::generate("a person walks in a circle", 40, autoencoder, generator, sc);
  const auto y = sample::generate("a person walks in a circle", 40, autoencoder, generator, sc);
  const bool det = x.frames == y.frames;
  return {ok && det, std::string("identities exact, gamma=0 repeat ") + (det ? "bitwise equal" : "differs")};
}

Outcome criterion7() {
  const std::size_t f = 6, n = 10000;
  Rng rng(7);
  Eigen::MatrixXd A = Eigen::MatrixXd::Random(f, f), B = Eigen::MatrixXd::Random(f, f);
  const Eigen::MatrixXd s1 = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(f, f);
  const Eigen::MatrixXd s2 = B * B.transpose() + 0.5 * Eigen::MatrixXd::Identity(f, f);
  Eigen::VectorXd mu1(f), mu2(f);
  for (std::size_t i = 0; i < f; ++i) {
    mu1[i] = rng.normal();
    mu2[i] = rng.normal();
  }
  auto cloud = [&](const Eigen::MatrixXd& cov, const Eigen::VectorXd& mu) {
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
    Tensor t({n, f});
    Eigen::VectorXd z(f);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < f; ++c) z[c] = rng.normal();
      const Eigen::VectorXd v = mu + L * z;
      for (std::size_t c = 0; c < f; ++c) t.at(r, c) = v[c];
    }
    return t;
  };
  // Closed form: |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(s1);
  const Eigen::MatrixXd r1 = e1.operatorSqrt();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(r1 * s2 * r1);
  const double expect = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() -
                        2.0 * em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const Tensor a = cloud(s1, mu1), b = cloud(s2, mu2);
  const double got = eval::fid(a, b), self = eval::fid(a, a);
  const double rel = std::abs(got - expect) / expect;
  return {rel < 0.05 && std::abs(self) < 1e-8,
          "closed form " + fmt("%.4f", expect) + " computed " + fmt("%.4f", got) + " rel " + fmt("%.2e", rel) +
              " fid(A,A) " + fmt("%.1e", self)};
}

Outcome criterion8() {
  Rng rng(8);
  const std::size_t n = 4096, classes = 5;
  Tensor hot({n, classes});
  for (std::size_t i = 0; i < n; ++i) hot.at(i, rng.index(classes)) = 1.0;
  const auto oracle = eval::r_precision(hot, hot, 32, rng, 2000);
  const Tensor m = testing::random_tensor({n, 16}, rng), t = testing::random_tensor({n, 16}, rng);
  const auto random = eval::r_precision(m, t, 32, rng, 2000);
  const double p = 1.0 / 32.0, sigma = std::sqrt(p * (1 - p) / (2000.0 * 32.0));
  const double z = (random.top1 - p) / sigma;
  return {oracle.top1 == 1.0 && std::abs(z) < 3.0,
          "oracle top1 " + fmt("%.3f", oracle.top1) + ", random top1 " + fmt("%.4f", random.top1) + " (z " +
              fmt("%.2f", z) + ")"};
}

struct PipelineResult {
  double mpjpe = 0;
  double rfid = 0;
  double top1 = 0, top3 = 0;
  double train_seconds = 0;
};

Outcome criterion9() {
  const std::uint64_t seed = 9;
  motion::SynthSpec ss;
  ss.classes = 5;
  const auto corpus = motion::synth_corpus(ss, 2000, seed);
  const double interclass = motion::mean_interclass_distance_mm(corpus, 500, seed);
  double train_seconds = 0;

  double t0 = now();
  eval::EvaluatorConfig ec;
  ec.steps = 600;
  const auto evaluator = eval::train_evaluator(corpus, ec, seed).model;
  train_seconds += now() - t0;
  std::printf("  evaluator trained in %.0f s\n", now() - t0);
  std::fflush(stdout);

  // Real-class partition reference: archetypes {0, 1} against {2, 3, 4}.
  std::vector<motion::MotionSequence> part_a, part_b;
  for (const auto& m : corpus) (m.archetype < 2 ? part_a : part_b).push_back(m);
  const double partition_fid =
      eval::fid(evaluator->motion_features(part_a), evaluator->motion_features(part_b));
  const motion::Corpus subset(corpus.begin(), corpus.begin() + 512);

  auto pipeline = [&](ae::Variant variant) {
    PipelineResult r;
    double start = now();
    ae::AutoencoderConfig ac;
    ac.variant = variant;
    ac.hidden = 48;
    ac.latent_dim = 16;
    ac.steps = 1500;
    ac.batch = 16;
    ac.crop = 96;
    ac.lr = 1e-3;
    // The semantic term only converges within the desk step budget at the
    // largest weight of the ablation sweep.
    ac.lambda_sem = 0.1;
    const auto autoencoder = ae::train_autoencoder(corpus, ac, seed).model;
    const double ae_time = now() - start;
    gen::GeneratorConfig gc;
    gc.latent_dim = 16;
    gc.model_dim = 64;
    gc.layers = 3;
    gc.heads = 4;
    gc.ffn_mult = 2;
    gc.head_blocks = 3;
    gc.head_width = 128;
    gc.adapter.depth = 1;
    gc.adapter.ffn_mult = 2;
    gc.batch = 16;
    gc.flow_batch_mul = 2;
    gc.lr = 1e-3;
    gc.warmup = 100;
    gc.steps = 2500;
    const auto trained = gen::train_generator(corpus, *autoencoder, gc, seed);
    r.train_seconds = now() - start;
    const auto generator = gen::Generator::from_checkpoint(trained.model->to_checkpoint(&trained.ema));

    double mp = 0;
    for (std::size_t i = 0; i < 200; ++i) mp += motion::mpjpe_mm(corpus[i], autoencoder->reconstruct(corpus[i]));
    r.mpjpe = mp / 200.0;
    r.rfid = eval::rfid(subset, *autoencoder, *evaluator);

    eval::EvalRunConfig rc;
    rc.runs = 4;
    rc.samples = 256;
    rc.mm_repeats = 0;
    rc.seed = seed;
    const auto report = eval::evaluate_run(*generator, *autoencoder, *evaluator, corpus, rc);
    r.top1 = report.at("r_precision_top1").mean;
    r.top3 = report.at("r_precision_top3").mean;
    std::printf("  %s: autoencoder %.0f s, total training %.0f s, mpjpe %.1f mm, rfid %.4f, top1 %.3f, top3 %.3f\n",
                ae::variant_name(variant).c_str(), ae_time, r.train_seconds, r.mpjpe, r.rfid, r.top1, r.top3);
    std::fflush(stdout);
    return r;
  };
  const PipelineResult sae = pipeline(ae::Variant::SAE);
  const PipelineResult plain = pipeline(ae::Variant::AE);
  train_seconds += sae.train_seconds + plain.train_seconds;

  const bool budget = train_seconds <= 30 * 60;
  const bool a = sae.mpjpe < 0.1 * interclass && plain.mpjpe < 0.1 * interclass;
  const bool b = sae.rfid < 0.1 * partition_fid;
  const bool c = sae.top3 >= 0.60;
  const bool d = sae.top1 >= plain.top1;
  std::string detail = "training " + fmt("%.0f s", train_seconds) + (budget ? "" : " OVER BUDGET");
  detail += "; (a) mpjpe " + fmt("%.1f", sae.mpjpe) + "/" + fmt("%.1f", plain.mpjpe) + " mm vs bound " +
            fmt("%.1f", 0.1 * interclass) + (a ? " ok" : " FAIL");
  detail += "; (b) rfid " + fmt("%.4f", sae.rfid) + " vs bound " + fmt("%.4f", 0.1 * partition_fid) + (b ? " ok" : " FAIL");
  detail += "; (c) top3 " + fmt("%.3f", sae.top3) + (c ? " ok" : " FAIL");
  detail += "; (d) top1 sae " + fmt("%.3f", sae.top1) + " ae " + fmt("%.3f", plain.top1) + (d ? " ok" : " FAIL");
  return {budget && a && b && c && d, detail};
}

Outcome criterion10() {
  Rng meta(10);
  bool ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t l = 1 + meta.index(128);
    Rng rng(meta.next());
    const auto s = sample::build_schedule(l, 16, rng);
    std::set<std::size_t> seen;
    std::size_t count = 0, prev = 0;
    for (std::size_t k = 0; k < s.steps.size(); ++k) {
      for (auto p : s.steps[k]) ok = ok && p < l && seen.insert(p).second;
      count += s.steps[k].size();
      ok = ok && count >= prev && count == sample::cumulative_unmasked(l, k + 1, 16);
      prev = count;
    }
    ok = ok && s.steps.size() == 16 && seen.size() == l;
  }
  return {ok, "1000 schedules"};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;  // 0 = no runtime bound
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--only N]...\n", argv[0]);
      return 2;
    }
  }
  const std::vector<Criterion> criteria{
      {1, "flow identities", 1.0, criterion1},
      {2, "gradient suite", 120.0, criterion2},
      {3, "encoder causality", 30.0, criterion3},
      {4, "replicate padding", 0.0, criterion4},
      {5, "filter semantics", 10.0, criterion5},
      {6, "guidance identities and determinism", 0.0, criterion6},
      {7, "fid oracle", 60.0, criterion7},
      {8, "retrieval oracle", 0.0, criterion8},
      {9, "end-to-end toy reproduction", 0.0, criterion9},
      {10, "schedule partition", 0.0, criterion10},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const double start = now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double took = now() - start;
    const bool in_time = c.limit_seconds <= 0 || took < c.limit_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("[%s] criterion %d (%s): %s; %.2f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                took, in_time ? "" : " exceeds runtime bound");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
