#include <filesystem>

#include "doctest.h"
#include "molingo/container.hpp"
#include "molingo/errors.hpp"
#include "molingo/text.hpp"
#include "support.hpp"

using namespace molingo;
using namespace molingo::text;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("molingo_test_text_" + name);
}

AdapterConfig small_adapter(std::size_t depth) {
  AdapterConfig c;
  c.model_dim = 32;
  c.heads = 4;
  c.depth = depth;
  c.ffn_mult = 2;
  c.l_text = 12;
  return c;
}

}  // namespace

TEST_CASE("tokenize lowercases and strips punctuation") {
  CHECK(tokenize("A person Walks, slowly!") == std::vector<std::string>{"a", "person", "walks", "slowly"});
  CHECK(tokenize("   ").empty());
}

TEST_CASE("toy encoding is deterministic") {
  const auto a = toy_encode("a person jumps in place");
  const auto b = toy_encode("a person jumps in place");
  CHECK(a == b);
  CHECK(a.count() == 5);
  CHECK(a.dim() == kEmbedDim);
  CHECK_FALSE(a.is_null);
}

TEST_CASE("empty prompt is the reserved null row") {
  const auto n = toy_encode("");
  CHECK(n.is_null);
  CHECK(n.count() == 1);
  CHECK(n == toy_encode("  "));
}

TEST_CASE("one changed word changes exactly that row") {
  const auto a = toy_encode("a person walks forward");
  const auto b = toy_encode("a person runs forward");
  REQUIRE(a.count() == b.count());
  for (std::size_t r = 0; r < a.count(); ++r) {
    bool same = true;
    for (std::size_t c = 0; c < a.dim(); ++c) same = same && a.tokens.at(r, c) == b.tokens.at(r, c);
    CHECK(same == (r != 2));
  }
}

TEST_CASE("encoders with different seeds disagree") {
  ToyTextEncoder other(123);
  CHECK_FALSE(other.encode("walk") == toy_encode("walk"));
}

TEST_CASE("refinement adds to the hashed row") {
  ToyTextEncoder enc;
  const auto before = enc.encode("wave");
  enc.set_refinement("Wave", std::vector<double>(kEmbedDim, 0.5));
  const auto after = enc.encode("wave");
  for (std::size_t c = 0; c < kEmbedDim; ++c) CHECK(after.tokens.at(0, c) == doctest::Approx(before.tokens.at(0, c) + 0.5));
  CHECK_THROWS_AS(enc.set_refinement("x", {1.0}), ShapeError);
}

TEST_CASE("embedding export and import round trip") {
  EmbeddingMap m;
  m["a person walks"] = toy_encode("a person walks");
  m[""] = toy_encode("");
  const auto path = temp_path("roundtrip.membed");
  export_embeddings(path, m);
  const auto back = import_embeddings(path, kEmbedDim);
  REQUIRE(back.size() == 2);
  for (const auto& [k, v] : m) {
    const auto& w = back.at(k);
    CHECK(w.is_null == v.is_null);
    REQUIRE(w.tokens.shape() == v.tokens.shape());
    for (std::size_t i = 0; i < v.tokens.numel(); ++i)
      CHECK(w.tokens[i] == static_cast<double>(static_cast<float>(v.tokens[i])));
  }
  std::filesystem::remove(path);
}

TEST_CASE("import rejects a width mismatch naming both widths") {
  EmbeddingMap m;
  m["x"] = TokenEmbeddings{Tensor({2, 8}, 1.0), false};
  const auto path = temp_path("width.membed");
  export_embeddings(path, m);
  try {
    import_embeddings(path, 64);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("8") != std::string::npos);
    CHECK(msg.find("64") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("prompt encoder falls back and flags it") {
  EmbeddingMap m;
  m["known prompt"] = TokenEmbeddings{Tensor({3, kEmbedDim}, 0.25), false};
  PromptEncoder enc(m);
  bool fell = true;
  CHECK(enc.encode("known prompt", &fell).tokens == m["known prompt"].tokens);
  CHECK_FALSE(fell);
  CHECK(enc.encode("something else", &fell) == toy_encode("something else"));
  CHECK(fell);
  PromptEncoder plain;
  plain.encode("anything", &fell);
  CHECK_FALSE(fell);
}

TEST_CASE("adapter pads to l_text with a mask") {
  nn::ParamSet ps;
  Rng rng(1);
  TextAdapter ad(ps, "ad", small_adapter(2), rng);
  const auto c = ad.adapt(toy_encode("a person waves both arms"));
  CHECK(c.w.shape() == Shape{12, 32});
  for (std::size_t i = 0; i < 12; ++i) CHECK(c.mask[i] == (i < 5 ? 1 : 0));
  for (std::size_t i = 5 * 32; i < c.w.numel(); ++i) CHECK(c.w[i] == 0.0);
}

TEST_CASE("adapter truncates to the first l_text tokens") {
  nn::ParamSet ps;
  Rng rng(2);
  TextAdapter ad(ps, "ad", small_adapter(1), rng);
  std::string longp;
  for (int i = 0; i < 20; ++i) longp += "word" + std::to_string(i) + " ";
  std::string first;
  for (int i = 0; i < 12; ++i) first += "word" + std::to_string(i) + " ";
  const auto a = ad.adapt(toy_encode(longp));
  const auto b = ad.adapt(toy_encode(first));
  CHECK(max_abs_diff(a.w, b.w) == 0.0);
  CHECK(std::count(a.mask.begin(), a.mask.end(), 1) == 12);
}

TEST_CASE("depth zero adapter is a pure projection") {
  nn::ParamSet ps;
  Rng rng(3);
  TextAdapter ad(ps, "ad", small_adapter(0), rng);
  const auto e = toy_encode("jump twice");
  const auto c = ad.adapt(e);
  const Tensor& w = ps.get("ad.proj.weight").value();
  const Tensor& b = ps.get("ad.proj.bias").value();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 32; ++j) {
      double s = b[j];
      for (std::size_t k = 0; k < kEmbedDim; ++k) s += e.tokens.at(r, k) * w.at(k, j);
      CHECK(c.w.at(r, j) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("valid outputs ignore padded content in a batch") {
  nn::ParamSet ps;
  Rng rng(4);
  TextAdapter ad(ps, "ad", small_adapter(2), rng);
  ag::NoGradGuard ng;
  const auto shortp = toy_encode("a person kicks");
  const auto longp = toy_encode("a person walks forward and then turns left");
  const auto other = toy_encode("a person spins around quickly and then stops");
  const auto b1 = ad.forward({&shortp, &longp});
  const auto b2 = ad.forward({&shortp, &other});
  const auto alone = ad.adapt(shortp);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 32; ++j) {
      CHECK(b1.w.value()[i * 32 + j] == doctest::Approx(alone.w.at(i, j)).epsilon(1e-12));
      CHECK(b1.w.value()[i * 32 + j] == b2.w.value()[i * 32 + j]);
    }
}

TEST_CASE("null prompt conditioning is fixed") {
  nn::ParamSet ps;
  Rng rng(5);
  TextAdapter ad(ps, "ad", small_adapter(1), rng);
  const auto a = ad.adapt(toy_encode(""));
  const auto b = ad.adapt(toy_encode(""));
  CHECK(a.w == b.w);
  CHECK(std::count(a.mask.begin(), a.mask.end(), 1) == 1);
}

TEST_CASE("adapter rejects a width mismatch") {
  nn::ParamSet ps;
  Rng rng(6);
  TextAdapter ad(ps, "ad", small_adapter(1), rng);
  TokenEmbeddings bad{Tensor({2, 10}, 1.0), false};
  CHECK_THROWS_AS(ad.adapt(bad), ShapeError);
}
