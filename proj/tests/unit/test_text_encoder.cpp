#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "memeface/ops.hpp"
#include "memeface/text_encoder.hpp"

using namespace memeface;
using namespace memeface::ops;

namespace {

double kl_oracle(const std::vector<double>& mu, const std::vector<double>& logvar) {
  double s = 0.0;
  for (std::size_t d = 0; d < mu.size(); ++d) s += 1.0 + logvar[d] - mu[d] * mu[d] - std::exp(logvar[d]);
  return -0.5 * s;
}

double kl_var(const std::vector<double>& mu, const std::vector<double>& logvar) {
  return kl_regularizer(constant(Tensor::vector(mu)), constant(Tensor::vector(logvar))).item();
}

}  // namespace

TEST_CASE("tokenize splits CJK per character and Latin per word") {
  CHECK(tokenize("熊猫头") == std::vector<std::string>{"熊", "猫", "头"});
  CHECK(tokenize("Wow, not bad") == std::vector<std::string>{"wow", ",", "not", "bad"});
  CHECK(tokenize("  ") .empty());
  CHECK(tokenize("我OK了") == std::vector<std::string>{"我", "ok", "了"});
}

TEST_CASE("vocabulary reserves id 0 and round-trips through a file") {
  std::vector<std::string> corpus{"a b b", "c b"};
  const auto v = Vocabulary::build(corpus);
  CHECK(v.token(0) == "<unk>");
  CHECK(v.token(1) == "b");
  CHECK(v.id("zzz") == Vocabulary::kUnknownId);
  test::TempDir dir("vocab");
  v.save(dir / "vocab.txt");
  CHECK(Vocabulary::load(dir / "vocab.txt") == v);
}

TEST_CASE("make_caption truncates and rejects empty text") {
  std::vector<std::string> corpus{"一二三四五六七八"};
  const auto v = Vocabulary::build(corpus);
  CHECK(make_caption(v, "一二三四五六七八", 5).length() == 5);
  CHECK_THROWS_WITH_AS(make_caption(v, "   ", 5), "empty caption", std::invalid_argument);
}

TEST_CASE("encoder output shape follows caption length") {
  const auto config = test::tiny_config();
  Rng rng(1);
  TextEncoder enc(config, rng);
  for (int t = 1; t <= config.max_caption_len; ++t) {
    std::vector<int> ids(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) ids[static_cast<std::size_t>(i)] = 1 + i % (config.vocab_size - 1);
    const auto e = enc.encode(test::caption_of(ids));
    CHECK(e.word_features.shape() == Shape{config.text_dim, t});
    CHECK(e.sentence.shape() == Shape{config.text_dim});
    CHECK(e.word_features.value().all_finite());
  }
}

TEST_CASE("encoder is deterministic and order sensitive") {
  const auto config = test::tiny_config();
  Rng rng(2);
  TextEncoder enc(config, rng);
  const auto a = enc.encode(test::caption_of({1, 2, 3}));
  const auto b = enc.encode(test::caption_of({1, 2, 3}));
  const auto c = enc.encode(test::caption_of({3, 2, 1}));
  CHECK(a.sentence.value() == b.sentence.value());
  CHECK(a.word_features.value() == b.word_features.value());
  CHECK(max_abs_diff(a.sentence.value(), c.sentence.value()) > 1e-6);
}

TEST_CASE("encoder rejects empty and out-of-vocabulary captions") {
  const auto config = test::tiny_config();
  Rng rng(3);
  TextEncoder enc(config, rng);
  CHECK_THROWS_WITH_AS(enc.encode(test::caption_of({})), "empty caption", std::invalid_argument);
  CHECK_THROWS_AS(enc.encode(test::caption_of({1, config.vocab_size})), std::invalid_argument);
  try {
    enc.encode(test::caption_of({1, 99}));
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("99") != std::string::npos);
  }
}

TEST_CASE("sentence vector depends on every token") {
  const auto config = test::tiny_config();
  Rng rng(4);
  TextEncoder enc(config, rng);
  const auto base = enc.encode(test::caption_of({1, 2, 3, 4})).sentence.value();
  for (std::size_t pos = 0; pos < 4; ++pos) {
    std::vector<int> ids{1, 2, 3, 4};
    ids[pos] = 7;
    CHECK(max_abs_diff(enc.encode(test::caption_of(ids)).sentence.value(), base) > 1e-9);
  }
}

TEST_CASE("conditioning augmentation satisfies the reparameterization identity") {
  const auto config = test::tiny_config();
  Rng rng(5);
  TextEncoder enc(config, rng);
  ConditioningAugmentation ca(config, rng);
  const auto sentence = enc.encode(test::caption_of({1, 2})).sentence;

  SUBCASE("zero noise gives c = mu") {
    const auto out = ca(sentence, Tensor(Shape{config.cond_dim}));
    CHECK(out.c.value() == out.mu.value());
  }
  SUBCASE("random noise, bitwise") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto out = ca.sample(sentence, rng);
      for (std::size_t d = 0; d < out.c.size(); ++d) {
        const double expect = out.mu.value()[d] + std::exp(out.logvar.value()[d] / 2.0) * out.noise_used[d];
        CHECK(out.c.value()[d] == expect);
      }
    }
  }
  SUBCASE("seeded rng reproduces c") {
    Rng r1(9), r2(9);
    CHECK(ca.sample(sentence, r1).c.value() == ca.sample(sentence, r2).c.value());
  }
  SUBCASE("non-finite sentence rejected") {
    Tensor bad(Shape{config.text_dim}, 0.0);
    bad[0] = std::nan("");
    CHECK_THROWS_AS(ca(constant(bad), Tensor(Shape{config.cond_dim})), std::invalid_argument);
  }
}

TEST_CASE("logvar = 0 gives c = mu + n") {
  // A zeroed projection yields mu = 0 and logvar = 0 for any sentence.
  const auto config = test::tiny_config();
  Rng rng(6);
  ConditioningAugmentation ca(config, rng);
  test::fill_parameters(ca.parameters(), 0.0);
  const Tensor n = rng.normal_tensor({config.cond_dim});
  const auto out = ca(constant(rng.normal_tensor({config.text_dim})), n);
  for (std::size_t d = 0; d < n.size(); ++d) {
    CHECK(out.logvar.value()[d] == 0.0);
    CHECK(out.c.value()[d] == out.mu.value()[d] + n[d]);
  }
}

TEST_CASE("kl_regularizer closed-form examples") {
  CHECK(kl_var({0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}) == 0.0);
  CHECK(kl_var({1.0, 0.0}, {0.0, 0.0}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(kl_var({0.0}, {std::log(2.0)}) - (1.0 - std::log(2.0)) / 2.0) < 1e-9);
  CHECK(std::abs(kl_regularizer(std::vector<double>{1.0, 0.0}, std::vector<double>{0.0, 0.0}) - 0.5) < 1e-12);
  CHECK_THROWS_AS(kl_var({0.0, 1.0}, {0.0}), std::invalid_argument);
}

TEST_CASE("kl_regularizer matches the oracle and is nonnegative") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng.index(6);
    std::vector<double> mu(d), lv(d);
    for (std::size_t i = 0; i < d; ++i) {
      mu[i] = rng.uniform(-3.0, 3.0);
      lv[i] = rng.uniform(-4.0, 4.0);
    }
    const double k = kl_var(mu, lv);
    CHECK(k >= 0.0);
    CHECK(std::abs(k - kl_oracle(mu, lv)) < 1e-9 * std::max(1.0, std::abs(k)));
  }
}

TEST_CASE("kl_regularizer gradient matches central differences") {
  Rng rng(12);
  Var mu(rng.normal_tensor({6}), true);
  Var lv(rng.normal_tensor({6}, 0.5), true);
  ParameterList inputs{{"mu", mu}, {"logvar", lv}};
  const auto r = test::gradcheck([&] { return kl_regularizer(mu, lv); }, inputs);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.resolved * 2 > r.checked);
}

TEST_CASE("text encoder and conditioning gradients match central differences") {
  const auto config = test::tiny_config();
  Rng rng(13);
  TextEncoder enc(config, rng);
  ConditioningAugmentation ca(config, rng);
  const Tensor noise = rng.normal_tensor({config.cond_dim});
  const Tensor probe = rng.normal_tensor({config.cond_dim});
  auto f = [&] {
    const auto e = enc.encode(test::caption_of({1, 4, 2}));
    const auto out = ca(e.sentence, noise);
    return add(sum(mul(out.c, constant(probe))), kl_regularizer(out.mu, out.logvar));
  };
  ParameterList params = enc.parameters();
  for (auto& p : ca.parameters()) params.push_back(p);
  const auto r = test::gradcheck(f, params, 6);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-3);
  CHECK(r.resolved * 2 > r.checked);
}
