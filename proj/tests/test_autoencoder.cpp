#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "molingo/autoencoder.hpp"
#include "molingo/errors.hpp"
#include "support.hpp"

using namespace molingo;
using namespace molingo::ae;

namespace {

AutoencoderConfig small_config(Variant v, std::size_t h = 4) {
  AutoencoderConfig c;
  c.variant = v;
  c.hidden = 16;
  c.latent_dim = 8;
  c.downsample = h;
  return c;
}

MotionSequence random_motion(std::size_t n, Rng& rng) {
  MotionSequence m;
  m.spec = RepresentationSpec::toy();
  m.frames = testing::random_tensor({n, m.spec.dim()}, rng, 0.3);
  return m;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.ptr() + r * t.cols(), t.ptr() + (r + 1) * t.cols()};
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : {Variant::AE, Variant::VAE, Variant::SAE}) CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS(parse_variant("vqvae"));
}

TEST_CASE("config validation") {
  auto c = small_config(Variant::AE);
  c.downsample = 3;
  CHECK_THROWS(c.validate());
  c = small_config(Variant::AE);
  c.lambda_vel = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("196 frames encode to 49 latents") {
  Autoencoder model(small_config(Variant::AE), RepresentationSpec::toy(), 1);
  Rng rng(1);
  const auto z = model.encode(random_motion(196, rng));
  CHECK(z.length() == 49);
  CHECK(z.latents.dim(1) == 8);
  CHECK(model.decode(z.latents, 196).length() == 196);
}

TEST_CASE("h=2 halves the length") {
  Autoencoder model(small_config(Variant::AE, 2), RepresentationSpec::toy(), 1);
  Rng rng(2);
  CHECK(model.encode(random_motion(31, rng)).length() == 16);
}

TEST_CASE("encoding a prefix gives the leading latents exactly") {
  Autoencoder model(small_config(Variant::SAE), RepresentationSpec::toy(), 3);
  Rng rng(3);
  const auto m = random_motion(64, rng);
  MotionSequence prefix = m;
  prefix.frames = Tensor({32, m.spec.dim()});
  std::copy_n(m.frames.ptr(), prefix.frames.numel(), prefix.frames.ptr());
  // Use raw statistics so the prefix is normalized identically.
  const auto full = model.encode(m), part = model.encode(prefix);
  for (std::size_t i = 0; i < 8; ++i) CHECK(row(full.latents, i) == row(part.latents, i));
}

TEST_CASE("frames after 4i+4 do not reach latent i") {
  Autoencoder model(small_config(Variant::AE), RepresentationSpec::toy(), 4);
  Rng rng(4);
  const auto m = random_motion(48, rng);
  const auto base = model.encode(m).latents;
  for (std::size_t i = 0; i < 12; ++i) {
    auto changed = m;
    for (std::size_t f = 4 * i + 5; f < 48; ++f)
      for (std::size_t c = 0; c < m.spec.dim(); ++c) changed.frames.at(f, c) += 1.0;
    const auto z = model.encode(changed).latents;
    for (std::size_t j = 0; j <= i; ++j) CHECK(row(z, j) == row(base, j));
  }
}

TEST_CASE("replicate-padded first conv maps constants to constants") {
  Autoencoder model(small_config(Variant::AE), RepresentationSpec::toy(), 5);
  Tensor x({1, 12, 16});
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t c = 0; c < 16; ++c) x[t * 16 + c] = 0.1 * static_cast<double>(c) - 0.4;
  const Tensor y = model.input_conv_without_bias(ag::constant(x)).value();
  const std::size_t cols = y.cols();
  for (std::size_t t = 1; t < 12; ++t)
    for (std::size_t c = 0; c < cols; ++c) CHECK(std::abs(y[t * cols + c] - y[c]) <= 1e-12);
}

TEST_CASE("reparameterization with log-variance -inf is the mean") {
  Rng rng(6);
  const Tensor mean = testing::random_tensor({3, 4}, rng);
  const Tensor lv({3, 4}, -std::numeric_limits<double>::infinity());
  const Var s = reparameterize(ag::constant(mean), ag::constant(lv), testing::random_tensor({3, 4}, rng));
  CHECK(s.value() == mean);
}

TEST_CASE("stochastic encode is seeded, AE encode is deterministic") {
  Rng data(7);
  const auto m = random_motion(40, data);
  Autoencoder vae(small_config(Variant::VAE), RepresentationSpec::toy(), 7);
  Rng a(11), b(11);
  CHECK(vae.encode(m, &a).latents == vae.encode(m, &b).latents);
  const auto z = vae.encode(m);
  CHECK(z.latents == z.mean);
  CHECK(z.log_var.shape() == z.mean.shape());
  Autoencoder plain(small_config(Variant::AE), RepresentationSpec::toy(), 7);
  Rng c(1);
  CHECK(plain.encode(m, &c).latents == plain.encode(m).latents);
  CHECK(plain.encode(m).mean.empty());
}

TEST_CASE("reconstruction loss vanishes on identical inputs") {
  Rng rng(8);
  const auto spec = RepresentationSpec::toy();
  NormalizationStats st{testing::random_tensor({16}, rng, 0.1), Tensor({16}, 0.5)};
  const Tensor x = testing::random_tensor({2, 9, 16}, rng);
  const auto r = recon_loss(ag::constant(x), ag::constant(x), st, spec, 1.0, 10.0);
  CHECK(r.feat.item() == 0.0);
  CHECK(r.joint.item() == 0.0);
  CHECK(r.vel.item() == 0.0);
  CHECK(r.total.item() == 0.0);
  CHECK(r.vel_defined);
}

TEST_CASE("single-frame reconstruction flags the velocity term") {
  Rng rng(9);
  NormalizationStats st{Tensor({16}), Tensor({16}, 1.0)};
  const auto r = recon_loss(ag::constant(testing::random_tensor({1, 1, 16}, rng)),
                            ag::constant(testing::random_tensor({1, 1, 16}, rng)), st, RepresentationSpec::toy(), 1, 10);
  CHECK_FALSE(r.vel_defined);
  CHECK(r.vel.item() == 0.0);
}

TEST_CASE("reconstruction loss combines its terms") {
  Rng rng(10);
  NormalizationStats st{testing::random_tensor({16}, rng, 0.1), Tensor({16}, 0.7)};
  const auto r = recon_loss(ag::constant(testing::random_tensor({2, 6, 16}, rng)),
                            ag::constant(testing::random_tensor({2, 6, 16}, rng)), st, RepresentationSpec::toy(), 2.0,
                            10.0);
  CHECK(r.total.item() == doctest::Approx(r.feat.item() + 2.0 * r.joint.item() + 10.0 * r.vel.item()));
}

TEST_CASE("reconstruction gradient matches finite differences") {
  Rng rng(11);
  const auto spec = RepresentationSpec::toy();
  NormalizationStats st{testing::random_tensor({16}, rng, 0.1), Tensor({16}, 0.6)};
  const Tensor target = testing::random_tensor({2, 5, 16}, rng);
  const auto check = testing::directional_grad_check(
      [&](const std::vector<Var>& v) { return recon_loss(v[0], ag::constant(target), st, spec, 1.0, 10.0).total; },
      {testing::random_tensor({2, 5, 16}, rng)}, 30, rng);
  CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("KL closed forms") {
  CHECK(kl_loss(ag::constant(Tensor({2, 3})), ag::constant(Tensor({2, 3}))).item() == 0.0);
  CHECK(kl_loss(ag::constant(Tensor({1, 1}, 1.0)), ag::constant(Tensor({1, 1}))).item() == doctest::Approx(0.5));
  Rng rng(12);
  const auto check = testing::directional_grad_check(
      [](const std::vector<Var>& v) { return kl_loss(v[0], v[1]); },
      {testing::random_tensor({3, 4}, rng), testing::random_tensor({3, 4}, rng, 0.5)}, 30, rng);
  CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("label windows") {
  CHECK(label_window(4, 4, 200) == std::pair<std::size_t, std::size_t>{0, 20});
  CHECK(label_window(0, 4, 200) == std::pair<std::size_t, std::size_t>{0, 4});
  CHECK(label_window(10, 4, 200) == std::pair<std::size_t, std::size_t>{24, 44});
  CHECK(label_window(49, 4, 198) == std::pair<std::size_t, std::size_t>{180, 197});
  CHECK(label_window(3, 2, 100) == std::pair<std::size_t, std::size_t>{0, 8});
}

TEST_CASE("class tokens from a single label are identical") {
  Autoencoder model(small_config(Variant::SAE), RepresentationSpec::toy(), 13);
  const std::vector<std::string> labels(64, "walk forward slow");
  const auto k = class_tokens(labels, 16, model, text::default_encoder());
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(k.valid[i] == 1);
    CHECK(row(k.tokens, i) == row(k.tokens, 0));
  }
}

TEST_CASE("class tokens change only where windows straddle a label switch") {
  Autoencoder model(small_config(Variant::SAE), RepresentationSpec::toy(), 14);
  std::vector<std::string> labels(96, "walk");
  for (std::size_t f = 40; f < 96; ++f) labels[f] = "jump";
  const auto k = class_tokens(labels, 24, model, text::default_encoder());
  const auto walk = row(k.tokens, 0), jump = row(k.tokens, 23);
  for (std::size_t i = 0; i < 24; ++i) {
    const auto [lo, hi] = label_window(i, 4, 96);
    const auto r = row(k.tokens, i);
    if (hi < 40) CHECK(r == walk);
    else if (lo >= 40) CHECK(r == jump);
    else CHECK((r != walk && r != jump));
  }
}

TEST_CASE("windows without labels are invalid") {
  std::vector<std::string> labels(32, "");
  for (std::size_t f = 20; f < 32; ++f) labels[f] = "wave";
  std::vector<std::uint8_t> valid;
  window_label_embeddings(labels, 8, 4, text::default_encoder(), valid);
  for (std::size_t i = 0; i < 8; ++i) CHECK(valid[i] == (4 * i + 4 >= 20 ? 1 : 0));
  window_label_embeddings({}, 8, 4, text::default_encoder(), valid);
  for (auto v : valid) CHECK(v == 0);
}

TEST_CASE("filter keeps the last position of identical runs") {
  const Tensor same({12, 4}, 1.0);
  const std::vector<std::uint8_t> valid(12, 1);
  CHECK(filter_repetitive(same, valid, 4, 0.995) == std::vector<std::size_t>{3, 7, 11});
  CHECK(filter_repetitive(same, valid, 4, 1.0).size() == 12);
}

TEST_CASE("filter keeps alternating orthogonal tokens") {
  Tensor t({6, 2});
  for (std::size_t i = 0; i < 6; ++i) t.at(i, i % 2) = 1.0;
  CHECK(filter_repetitive(t, std::vector<std::uint8_t>(6, 1), 6, 0.995).size() == 6);
}

TEST_CASE("filter never keeps invalid positions") {
  const Tensor same({6, 3}, 1.0);
  const std::vector<std::uint8_t> valid{1, 1, 0, 1, 1, 1};
  // Position 1 has an invalid successor and is kept.
  CHECK(filter_repetitive(same, valid, 6, 0.995) == std::vector<std::size_t>{1, 5});
}

TEST_CASE("filter is monotone in tau") {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor t = testing::random_tensor({16, 3}, rng);
    for (std::size_t i = 1; i < 16; ++i)
      if (rng.bernoulli(0.5))
        for (std::size_t c = 0; c < 3; ++c) t.at(i, c) = t.at(i - 1, c) + 0.05 * rng.normal();
    std::vector<std::uint8_t> valid(16);
    for (auto& v : valid) v = rng.bernoulli(0.9);
    const double a = rng.uniform(-1, 1), b = rng.uniform(a, 1.0);
    const auto ka = filter_repetitive(t, valid, 8, a), kb = filter_repetitive(t, valid, 8, b);
    const std::set<std::size_t> sb(kb.begin(), kb.end());
    for (auto i : ka) CHECK(sb.count(i) == 1);
  }
}

TEST_CASE("semantic loss closed forms") {
  Rng rng(16);
  const Tensor k = testing::random_tensor({5, 4}, rng);
  Tensor scaled = k, ortho({5, 4}), neg = k;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c) {
      scaled.at(i, c) *= 0.5 + static_cast<double>(i);
      neg.at(i, c) = -k.at(i, c);
    }
  for (std::size_t i = 0; i < 5; ++i) {
    // Orthogonal to row i of k within the plane of its first two entries.
    ortho.at(i, 0) = -k.at(i, 1);
    ortho.at(i, 1) = k.at(i, 0);
  }
  const std::vector<std::size_t> all{0, 1, 2, 3, 4};
  CHECK(semantic_loss(ag::constant(scaled), ag::constant(k), all).loss.item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(semantic_loss(ag::constant(ortho), ag::constant(k), all).loss.item() == doctest::Approx(1.0));
  CHECK(semantic_loss(ag::constant(neg), ag::constant(k), all).loss.item() == doctest::Approx(2.0));
}

TEST_CASE("semantic loss skips zero rows and flags an empty set") {
  Rng rng(17);
  Tensor m = testing::random_tensor({3, 4}, rng);
  for (std::size_t c = 0; c < 4; ++c) m.at(1, c) = 0.0;
  const Tensor k = testing::random_tensor({3, 4}, rng);
  const auto s = semantic_loss(ag::constant(m), ag::constant(k), {0, 1, 2});
  CHECK(s.used == 2);
  CHECK(s.skipped == 1);
  const auto e = semantic_loss(ag::constant(m), ag::constant(k), {});
  CHECK(e.empty);
  CHECK(e.loss.item() == 0.0);
}

TEST_CASE("semantic loss gradient matches finite differences") {
  Rng rng(18);
  const Tensor k = testing::random_tensor({6, 4}, rng);
  const auto check = testing::directional_grad_check(
      [&](const std::vector<Var>& v) { return semantic_loss(v[0], ag::constant(k), {0, 2, 3, 5}).loss; },
      {testing::random_tensor({6, 4}, rng)}, 30, rng);
  CHECK(check.max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round trip reproduces reconstructions") {
  Autoencoder model(small_config(Variant::SAE), RepresentationSpec::toy(), 19);
  Rng rng(19);
  model.set_stats({testing::random_tensor({16}, rng, 0.1), Tensor({16}, 0.8)});
  const auto c = model.to_checkpoint();
  const auto back = Autoencoder::from_checkpoint(c);
  const auto m = random_motion(30, rng);
  const auto a = model.reconstruct(m), b = back->reconstruct(m);
  // Weights are stored as f32.
  CHECK(max_abs_diff(a.frames, b.frames) < 1e-4);
  CHECK(back->config().variant == Variant::SAE);
  CHECK(back->stats().std[0] == doctest::Approx(0.8));
}

TEST_CASE("decode rejects a latent width mismatch") {
  Autoencoder model(small_config(Variant::AE), RepresentationSpec::toy(), 20);
  CHECK_THROWS_AS(model.decode(Tensor({4, 5}), 16), ShapeError);
  CHECK_THROWS_AS(model.decode(Tensor({4, 8}), 17), ShapeError);
}

TEST_CASE("AE training reduces the feature loss tenfold") {
  const auto corpus = motion::synth_corpus({}, 200, 3);
  auto c = small_config(Variant::AE);
  c.hidden = 32;
  c.steps = 2000;
  c.batch = 8;
  c.lr = 1e-3;
  c.crop = 48;
  const auto r = train_autoencoder(corpus, c, 5);
  REQUIRE_FALSE(r.diverged);
  double early = 0, late = 0;
  for (std::size_t i = 0; i < 50; ++i) early += r.history[i].feat;
  for (std::size_t i = r.history.size() - 50; i < r.history.size(); ++i) late += r.history[i].feat;
  CHECK(late * 10.0 <= early);
}

TEST_CASE("SAE training is seeded and uses the semantic term") {
  const auto corpus = motion::synth_corpus({}, 40, 4);
  auto c = small_config(Variant::SAE);
  c.steps = 20;
  c.batch = 4;
  c.crop = 32;
  const auto a = train_autoencoder(corpus, c, 9);
  const auto b = train_autoencoder(corpus, c, 9);
  REQUIRE(a.history.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) CHECK(a.history[i].total == b.history[i].total);
  std::size_t kept = 0;
  for (const auto& e : a.history) kept += e.kept;
  CHECK(kept > 0);
  CHECK(a.history.back().kl > 0.0);
}

TEST_CASE("SAE alternates batches when some sequences are unlabeled") {
  auto corpus = motion::synth_corpus({}, 40, 5);
  for (std::size_t i = 0; i < corpus.size(); i += 2) corpus[i].labels.clear();
  auto c = small_config(Variant::SAE);
  c.steps = 6;
  c.batch = 4;
  c.crop = 32;
  const auto r = train_autoencoder(corpus, c, 2);
  for (const auto& e : r.history) {
    if (e.step % 2 == 0) CHECK(e.kept == 0);
  }
}
