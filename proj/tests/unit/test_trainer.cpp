#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "memeface/model.hpp"
#include "memeface/ops.hpp"
#include "memeface/synthetic.hpp"
#include "memeface/trainer.hpp"

using namespace memeface;
using namespace memeface::ops;

namespace {

const double kLn2 = std::log(2.0);

DiscriminatorOutput logits(double uncond, double cond) {
  return {constant(Tensor::scalar(uncond)), constant(Tensor::scalar(cond))};
}

double p_of(double logit) { return std::clamp(1.0 / (1.0 + std::exp(-logit)), 1e-7, 1.0 - 1e-7); }

// Hand-written objective for one stage, probabilities from the logits.
double d_objective_oracle(double ru, double rc, double fu, double fc) {
  return -0.5 * (std::log(p_of(ru)) + std::log(p_of(rc))) - 0.5 * (std::log(1 - p_of(fu)) + std::log(1 - p_of(fc)));
}

void zero_heads(GanModel& m) { test::fill_parameters(test::select(m.discriminator_parameters(), "cond_head"), 0.0); }

std::vector<Generation> generate_batch(const GanModel& m, const TrainingData& data, std::size_t n, Rng& rng) {
  std::vector<Generation> out;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& ex = data.examples[k];
    out.push_back(m.generate(ex.caption, data.patterns.at(ex.cluster_id), rng));
  }
  return out;
}

std::vector<Caption> captions_of(const TrainingData& data, std::size_t n) {
  std::vector<Caption> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(data.examples[k].caption);
  return out;
}

synthetic::OverfitSet small_set() { return synthetic::overfit_corpus(test::tiny_config(), 21); }

TrainConfig small_train_config(const synthetic::OverfitSet& set) {
  TrainConfig tc;
  tc.model = set.config;
  tc.batch_size = 3;
  tc.epochs = 2;
  tc.checkpoint_period_epochs = 1;
  tc.schedule = UpdateSchedule::PerBatchAlternating;
  tc.seed = 5;
  return tc;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("generator loss at D = 0.5 everywhere is m ln 2") {
  const auto set = small_set();
  GanModel m(set.config, 1);
  zero_heads(m);
  Rng rng(2);
  const auto gens = generate_batch(m, set.data, 4, rng);
  const auto caps = captions_of(set.data, 4);
  const auto loss = generator_loss(gens, caps, m.discriminators, nullptr, LossWeights{0.0, 0.0});
  const int stages = set.config.stages;
  CHECK(std::abs(loss.total.item() - stages * kLn2) < 1e-9);
  REQUIRE(loss.stage_adversarial.size() == static_cast<std::size_t>(stages));
  for (double s : loss.stage_adversarial) CHECK(std::abs(s - kLn2) < 1e-9);
  CHECK(loss.adversarial == loss.total.item());
}

TEST_CASE("zero auxiliary weights leave the pure adversarial sum") {
  const auto set = small_set();
  GanModel m(set.config, 3);
  DamsmModel damsm(set.config, 4);
  Rng rng(5);
  const auto gens = generate_batch(m, set.data, 3, rng);
  const auto caps = captions_of(set.data, 3);
  const auto zero = generator_loss(gens, caps, m.discriminators, &damsm, LossWeights{0.0, 0.0});
  double sum = 0.0;
  for (double s : zero.stage_adversarial) sum += s;
  CHECK(std::abs(zero.total.item() - sum) < 1e-12);
  const auto full = generator_loss(gens, caps, m.discriminators, &damsm, LossWeights{5.0, 1.0});
  CHECK(std::abs(full.total.item() - (full.adversarial + 5.0 * full.damsm + 1.0 * full.kl)) < 1e-9);
  CHECK(full.kl >= 0.0);
  CHECK(full.damsm >= 0.0);
}

TEST_CASE("generator term decreases as fakes look more real") {
  double previous = INFINITY;
  for (double logit = -6.0; logit <= 6.0; logit += 0.5) {
    const double v = generator_adversarial_term(logits(logit, logit)).item();
    CHECK(v < previous);
    CHECK(std::abs(v - (-0.5 * std::log(p_of(logit)) - 0.5 * std::log(p_of(logit)))) < 1e-12);
    previous = v;
  }
}

TEST_CASE("discriminator objective closed forms") {
  CHECK(std::abs(discriminator_objective(logits(0, 0), logits(0, 0)).item() - 2 * kLn2) < 1e-9);
  const Var mismatched = constant(Tensor::scalar(0.0));
  CHECK(std::abs(discriminator_objective(logits(0, 0), logits(0, 0), &mismatched).item() - 2 * kLn2) < 1e-9);

  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const double ru = rng.uniform(-5, 5), rc = rng.uniform(-5, 5), fu = rng.uniform(-5, 5), fc = rng.uniform(-5, 5);
    CHECK(std::abs(discriminator_objective(logits(ru, rc), logits(fu, fc)).item() - d_objective_oracle(ru, rc, fu, fc)) <
          1e-12);
  }

  SUBCASE("perfect discriminator tends to zero") {
    double previous = INFINITY;
    for (double l : {2.0, 5.0, 10.0, 15.0}) {
      const double v = discriminator_objective(logits(l, l), logits(-l, -l)).item();
      CHECK(v < previous);
      previous = v;
    }
    CHECK(previous < 1e-6);
  }
  SUBCASE("swapping conditional and unconditional perfect scores") {
    const double a = discriminator_objective(logits(20, 0), logits(-20, 0)).item();
    const double b = discriminator_objective(logits(0, 20), logits(0, -20)).item();
    CHECK(std::abs(a - b) < 1e-15);
  }
  SUBCASE("extreme logits stay finite") {
    CHECK(std::isfinite(discriminator_objective(logits(800, -800), logits(800, 800)).item()));
    CHECK(std::isfinite(generator_adversarial_term(logits(-800, -800)).item()));
  }
}

TEST_CASE("discriminator loss at D = 0.5 is 2 ln 2 per stage") {
  const auto set = small_set();
  GanModel m(set.config, 7);
  zero_heads(m);
  Rng rng(8);
  const auto gens = generate_batch(m, set.data, 4, rng);
  DiscriminatorBatch batch;
  for (std::size_t k = 0; k < 4; ++k) {
    batch.real.push_back(set.data.examples[k].real_levels);
    std::vector<Tensor> fakes;
    for (const auto& v : gens[k].stages.edited) fakes.push_back(v.value());
    batch.fake.push_back(fakes);
    batch.sentences.push_back(gens[k].text.sentence.value());
  }
  for (bool mismatch : {false, true}) {
    const auto loss = discriminator_loss(batch, m.discriminators, mismatch);
    CHECK(std::abs(loss.total.item() - 2 * kLn2 * set.config.stages) < 1e-9);
    for (double s : loss.stage_terms) CHECK(std::abs(s - 2 * kLn2) < 1e-9);
  }
}

TEST_CASE("non-finite generator loss names the stage") {
  const auto set = small_set();
  GanModel m(set.config, 9);
  test::fill_parameters(test::select(m.discriminator_parameters(), "discriminator1.uncond_head.bias"), NAN);
  Rng rng(10);
  const auto gens = generate_batch(m, set.data, 2, rng);
  CHECK_THROWS_WITH_AS(generator_loss(gens, captions_of(set.data, 2), m.discriminators, nullptr, LossWeights{0, 0}),
                       doctest::Contains("stage 1"), std::runtime_error);
}

TEST_CASE("generator loss gradient matches central differences") {
  const auto set = small_set();
  GanModel m(set.config, 11);
  DamsmModel damsm(set.config, 12);
  // At the initial weight scale every layer shrinks the gradient several
  // times over, leaving early generator entries near 1e-7 against a loss of
  // about 30: below what a central difference can resolve. Larger weights
  // give a point where every entry is measurable.
  test::scale_parameters(m.parameters(), 5.0);
  std::vector<Tensor> ca, z;
  Rng rng(13);
  for (int k = 0; k < 2; ++k) {
    ca.push_back(rng.normal_tensor({set.config.cond_dim}));
    z.push_back(sample_noise(set.config, rng));
  }
  const auto caps = captions_of(set.data, 2);
  auto f = [&] {
    std::vector<Generation> gens;
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& ex = set.data.examples[k];
      gens.push_back(m.generate(ex.caption, set.data.patterns.at(ex.cluster_id), ca[k], z[k]));
    }
    return generator_loss(gens, caps, m.discriminators, &damsm, LossWeights{5.0, 1.0}).total;
  };
  for (const char* group : {"cond_aug", "initial", "stage1", "editor0", "editor1", "text_encoder"}) {
    const auto params = test::select(m.parameters(), group);
    REQUIRE(!params.empty());
    const auto r = test::gradcheck(f, params, 3);
    INFO(std::string(group), ": ", r.worst);
    CHECK(r.max_rel_error < 1e-3);
    CHECK(r.resolved * 2 > r.checked);
  }
}

TEST_CASE("checkpoint schedule") {
  CHECK(checkpoint_epochs(200, 5).size() == 40);
  CHECK(checkpoint_epochs(20, 5) == std::vector<int>{5, 10, 15, 20});
  CHECK(checkpoint_epochs(12, 5) == std::vector<int>{5, 10, 12});
  for (int e = 1; e <= 40; ++e) {
    for (int p = 1; p <= 9; ++p) {
      const auto s = checkpoint_epochs(e, p);
      CHECK(s.size() == static_cast<std::size_t>((e + p - 1) / p));
      CHECK(s.back() == e);
      for (int x : s) CHECK((x % p == 0 || x == e));
    }
  }
  CHECK_THROWS_AS(checkpoint_epochs(0, 5), std::invalid_argument);
}

TEST_CASE("generator update schedule") {
  TrainConfig c;
  c.generator_update_period_epochs = 5;
  c.schedule = UpdateSchedule::EpochPeriodic;
  std::vector<int> updates;
  for (int e = 1; e <= 20; ++e) {
    if (generator_updates_in_epoch(c, e)) updates.push_back(e);
  }
  CHECK(updates == std::vector<int>{5, 10, 15, 20});
  c.schedule = UpdateSchedule::PerBatchAlternating;
  for (int e = 1; e <= 20; ++e) CHECK(generator_updates_in_epoch(c, e));
}

TEST_CASE("train config defaults, validation and JSON") {
  TrainConfig c;
  c.model = test::tiny_config();
  CHECK(c.learning_rate == 0.0002);
  CHECK(c.batch_size == 14);
  CHECK(c.epochs == 200);
  CHECK(c.generator_update_period_epochs == 5);
  CHECK(c.checkpoint_period_epochs == 5);
  CHECK(c.weights.damsm == 5.0);
  CHECK(c.weights.kl == 1.0);
  c.validate();
  c.schedule = UpdateSchedule::PerBatchAlternating;
  c.seed = 99;
  const nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& t) { t.batch_size = 0; }, [](TrainConfig& t) { t.epochs = 0; },
           [](TrainConfig& t) { t.learning_rate = 0; }, [](TrainConfig& t) { t.checkpoint_period_epochs = -1; },
           [](TrainConfig& t) { t.generator_update_period_epochs = 0; }}) {
    TrainConfig bad;
    bad.model = test::tiny_config();
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("discriminator and generator updates touch only their own parameters") {
  const auto set = small_set();
  DamsmModel damsm(set.config, 14);
  const auto tc = small_train_config(set);
  Trainer a(tc, set.data, damsm);
  Trainer b(tc, set.data, damsm);
  const std::vector<std::size_t> batch{0, 5, 2};

  const auto g0 = parameter_digest(a.model().generator_parameters());
  const auto d0 = parameter_digest(a.model().discriminator_parameters());
  const auto t0 = parameter_digest(a.model().text_parameters());
  const auto frozen = parameter_digest(a.damsm().parameters());

  a.step(batch, false);
  CHECK(parameter_digest(a.model().generator_parameters()) == g0);
  CHECK(parameter_digest(a.model().discriminator_parameters()) != d0);

  b.step(batch, true);
  // Same discriminator update in both, so the generator step left D alone.
  CHECK(parameter_digest(b.model().discriminator_parameters()) ==
        parameter_digest(a.model().discriminator_parameters()));
  CHECK(parameter_digest(b.model().generator_parameters()) != g0);
  CHECK(parameter_digest(b.model().text_parameters()) == t0);
  CHECK(parameter_digest(b.damsm().parameters()) == frozen);
  CHECK(parameter_digest(damsm.parameters()) == frozen);
}

TEST_CASE("shared text encoder starts from the DAMSM encoder") {
  const auto set = small_set();
  DamsmModel damsm(set.config, 15);
  const auto tc = small_train_config(set);
  Trainer t(tc, set.data, damsm);
  const auto mine = state_dict(t.model().text_parameters());
  const auto theirs = state_dict(damsm.text_encoder.parameters());
  REQUIRE(mine.size() == theirs.size());
  for (std::size_t i = 0; i < mine.size(); ++i) {
    CHECK(mine[i].name == theirs[i].name);
    CHECK(mine[i].tensor == theirs[i].tensor);
  }
}

TEST_CASE("training run: cadence, log records, determinism") {
  const auto set = small_set();
  DamsmModel damsm(set.config, 16);
  auto tc = small_train_config(set);
  tc.epochs = 3;
  tc.checkpoint_period_epochs = 2;
  test::TempDir dir("train");

  std::stringstream log_a, log_b;
  Trainer a(tc, set.data, damsm);
  const auto summaries = a.run(dir / "a", &log_a);
  Trainer b(tc, set.data, damsm);
  b.run(dir / "b", &log_b);

  REQUIRE(summaries.size() == 3);
  CHECK(summaries[0].checkpoint == std::nullopt);
  CHECK(summaries[1].checkpoint == checkpoint_filename(dir / "a", 2));
  CHECK(summaries[2].checkpoint == checkpoint_filename(dir / "a", 3));
  for (int e : {2, 3}) {
    const auto fa = checkpoint_filename(dir / "a", e);
    const auto fb = checkpoint_filename(dir / "b", e);
    CHECK(file_sha256(fa) == file_sha256(fb));
    CHECK(load_checkpoint(fa).epoch == e);
  }
  CHECK(!std::filesystem::exists(checkpoint_filename(dir / "a", 1)));

  // 8 examples at batch 3: batches of 3, 3, 2.
  std::string line;
  int lines = 0;
  while (std::getline(log_a, line)) {
    const auto rec = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "batch", "d_loss", "g_loss", "g_adversarial", "g_damsm", "g_kl", "wall_ms"}) {
      CHECK(rec.contains(key));
    }
    CHECK(rec["batch"].get<int>() == lines % 3);
    ++lines;
  }
  CHECK(lines == 9);
}

TEST_CASE("epoch-periodic schedule logs generator losses only on update epochs") {
  const auto set = small_set();
  DamsmModel damsm(set.config, 17);
  auto tc = small_train_config(set);
  tc.schedule = UpdateSchedule::EpochPeriodic;
  tc.generator_update_period_epochs = 2;
  tc.epochs = 2;
  tc.batch_size = 8;
  test::TempDir dir("periodic");
  std::stringstream log;
  Trainer t(tc, set.data, damsm);
  const auto s = t.run(dir.path(), &log);
  CHECK(!s[0].generator_loss.has_value());
  CHECK(s[1].generator_loss.has_value());
  std::string l1, l2;
  std::getline(log, l1);
  std::getline(log, l2);
  CHECK(nlohmann::json::parse(l1)["g_loss"].is_null());
  CHECK(nlohmann::json::parse(l2)["g_loss"].is_number());
}

TEST_CASE("annotation aggregation") {
  SUBCASE("single-annotator counts") {
    std::vector<AnnotationRecord> records;
    for (int i = 0; i < 1000; ++i) {
      const int label = i < 388 ? 2 : (i < 388 + 434 ? 1 : 0);
      records.push_back({std::to_string(i), {label}});
    }
    const auto s = aggregate_annotations(records);
    CHECK(s.total == 1000);
    CHECK(s.counts[2] == 388);
    CHECK(s.counts[1] == 434);
    CHECK(s.counts[0] == 178);
    CHECK(s.percent[2] == 38.8);
    CHECK(s.percent[1] == 43.4);
    CHECK(s.percent[0] == 17.8);
    CHECK(s.at_least_one_percent == 82.2);
  }
  SUBCASE("majority vote, ties toward the lower label") {
    CHECK(majority_label(std::vector<int>{1, 2, 2}) == 2);
    CHECK(majority_label(std::vector<int>{0, 2}) == 0);
    CHECK(majority_label(std::vector<int>{0, 1, 2}) == 0);
    CHECK(majority_label(std::vector<int>{2, 2, 1, 1}) == 1);
  }
  SUBCASE("unanimous annotators reproduce raw counts") {
    std::vector<AnnotationRecord> records{{"a", {2, 2, 2}}, {"b", {0, 0, 0}}, {"c", {1, 1, 1}}, {"d", {2, 2, 2}}};
    const auto s = aggregate_annotations(records);
    CHECK(s.counts == std::array<std::size_t, 3>{1, 1, 2});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(aggregate_annotations({}), std::invalid_argument);
    std::vector<AnnotationRecord> bad{{"x", {3}}};
    CHECK_THROWS_AS(aggregate_annotations(bad), std::invalid_argument);
    std::vector<AnnotationRecord> empty_labels{{"x", {}}};
    CHECK_THROWS_AS(aggregate_annotations(empty_labels), std::invalid_argument);
  }
  SUBCASE("TSV reader") {
    test::TempDir dir("annotations");
    std::ofstream(dir / "a.tsv") << "# id\tlabels\ns1\t1\t2\t2\ns2\t0\t0\t1\n";
    const auto records = read_annotations(dir / "a.tsv");
    REQUIRE(records.size() == 2);
    CHECK(records[0].labels == std::vector<int>{1, 2, 2});
    std::ofstream(dir / "b.tsv") << "s1\t1\tx\n";
    CHECK_THROWS_AS(read_annotations(dir / "b.tsv"), std::invalid_argument);
  }
}
