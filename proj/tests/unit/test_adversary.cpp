#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "memeface/adversary.hpp"
#include "memeface/ops.hpp"

using namespace memeface;
using namespace memeface::ops;

TEST_CASE("logistic") {
  CHECK(logistic(0.0) == 0.5);
  CHECK(logistic(30.0) < 1.0);
  CHECK(logistic(-40.0) > 0.0);
  CHECK(std::abs(logistic(std::log(3.0)) - 0.75) < 1e-15);
}

TEST_CASE("discriminator trunk ends at 4x4 for every stage resolution") {
  const auto c = test::tiny_config();
  Rng rng(1);
  for (int r : {8, 16, 32, 64}) {
    Discriminator d(c, r, rng);
    const Var f = d.trunk(constant(rng.uniform_tensor({3, r, r}, -1.0, 1.0)));
    CHECK(f.shape() == Shape{c.disc_channels, 4, 4});
  }
}

TEST_CASE("conditional head sees the sentence, unconditional head does not") {
  const auto c = test::tiny_config();
  Rng rng(2);
  Discriminator d(c, 16, rng);
  const Var img = constant(rng.uniform_tensor({3, 16, 16}, -1.0, 1.0));
  const Var s1 = constant(rng.normal_tensor({c.text_dim}));
  const Var s2 = constant(rng.normal_tensor({c.text_dim}));
  const auto a = d(img, s1);
  const auto b = d(img, s2);
  CHECK(a.uncond_logit.item() == b.uncond_logit.item());
  CHECK(a.cond_logit.item() != b.cond_logit.item());
  const auto again = d(img, s1);
  CHECK(again.uncond_logit.item() == a.uncond_logit.item());
  CHECK(again.cond_logit.item() == a.cond_logit.item());
  CHECK(std::isfinite(a.uncond_logit.item()));
  CHECK(std::isfinite(a.cond_logit.item()));
}

TEST_CASE("wrong resolution is rejected with expected and actual sizes") {
  const auto c = test::tiny_config();
  Rng rng(3);
  Discriminator d(c, 16, rng);
  try {
    d(constant(Tensor(Shape{3, 8, 8})), constant(Tensor(Shape{c.text_dim})));
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("16") != std::string::npos);
    CHECK(msg.find("8") != std::string::npos);
  }
}

TEST_CASE("discriminator gradients match central differences") {
  const auto c = test::tiny_config();
  Rng rng(4);
  Discriminator d(c, 8, rng);
  Var img(rng.uniform_tensor({3, 8, 8}, -1.0, 1.0), true);
  Var sentence(rng.normal_tensor({c.text_dim}), true);

  SUBCASE("unconditional logit") {
    auto f = [&] { return d(img, sentence).uncond_logit; };
    ParameterList inputs{{"image", img}};
    for (auto& p : d.parameters("d")) inputs.push_back(p);
    const auto r = test::gradcheck(f, inputs, 12);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-3);
    CHECK(r.resolved * 2 > r.checked);
  }
  SUBCASE("conditional logit") {
    auto f = [&] { return d(img, sentence).cond_logit; };
    ParameterList inputs{{"image", img}, {"sentence", sentence}};
    for (auto& p : d.parameters("d")) inputs.push_back(p);
    const auto r = test::gradcheck(f, inputs, 12);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-3);
    CHECK(r.resolved * 2 > r.checked);
  }
}
