#include "memeface/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "memeface/image.hpp"
#include "memeface/ops.hpp"

namespace memeface {

namespace {

const char* schedule_name(UpdateSchedule s) {
  return s == UpdateSchedule::PerBatchAlternating ? "per_batch_alternating" : "epoch_periodic";
}

UpdateSchedule parse_schedule(const std::string& s) {
  if (s == "per_batch_alternating") return UpdateSchedule::PerBatchAlternating;
  if (s == "epoch_periodic") return UpdateSchedule::EpochPeriodic;
  throw std::invalid_argument("unknown schedule '" + s + "' (expected epoch_periodic or per_batch_alternating)");
}

Var log_probability(const Var& logit) { return ops::log(clamped_probability(logit)); }

Var log_complement(const Var& logit) { return ops::log(ops::add_scalar(ops::neg(clamped_probability(logit)), 1.0)); }

Var batch_mean(const std::vector<Var>& terms) {
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return ops::scale(total, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (epochs <= 0) throw std::invalid_argument("epochs must be positive");
  if (generator_update_period_epochs <= 0) throw std::invalid_argument("generator_update_period_epochs must be positive");
  if (checkpoint_period_epochs <= 0) throw std::invalid_argument("checkpoint_period_epochs must be positive");
  if (weights.damsm < 0.0 || weights.kl < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  model.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"generator_update_period_epochs", c.generator_update_period_epochs},
       {"checkpoint_period_epochs", c.checkpoint_period_epochs},
       {"schedule", schedule_name(c.schedule)},
       {"lambda_damsm", c.weights.damsm},
       {"lambda_kl", c.weights.kl},
       {"mismatched_captions", c.mismatched_captions},
       {"share_text_encoder", c.share_text_encoder},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"seed", c.seed},
       {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.generator_update_period_epochs = j.value("generator_update_period_epochs", c.generator_update_period_epochs);
  c.checkpoint_period_epochs = j.value("checkpoint_period_epochs", c.checkpoint_period_epochs);
  if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule").get<std::string>());
  c.weights.damsm = j.value("lambda_damsm", c.weights.damsm);
  c.weights.kl = j.value("lambda_kl", c.weights.kl);
  c.mismatched_captions = j.value("mismatched_captions", c.mismatched_captions);
  c.share_text_encoder = j.value("share_text_encoder", c.share_text_encoder);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
}

std::vector<int> checkpoint_epochs(int epochs, int period) {
  if (epochs <= 0 || period <= 0) throw std::invalid_argument("checkpoint_epochs: epochs and period must be positive");
  std::vector<int> out;
  for (int e = period; e <= epochs; e += period) out.push_back(e);
  if (out.empty() || out.back() != epochs) out.push_back(epochs);
  return out;
}

bool generator_updates_in_epoch(const TrainConfig& config, int epoch) {
  return config.schedule == UpdateSchedule::PerBatchAlternating || epoch % config.generator_update_period_epochs == 0;
}

Var clamped_probability(const Var& logit) {
  return ops::clamp(ops::sigmoid(logit), kProbabilityFloor, 1.0 - kProbabilityFloor);
}

Var generator_adversarial_term(const DiscriminatorOutput& fake) {
  return ops::scale(ops::add(log_probability(fake.uncond_logit), log_probability(fake.cond_logit)), -0.5);
}

Var discriminator_objective(const DiscriminatorOutput& real, const DiscriminatorOutput& fake,
                            const Var* mismatched_cond_logit) {
  Var real_part = ops::add(log_probability(real.uncond_logit), log_probability(real.cond_logit));
  Var fake_cond = log_complement(fake.cond_logit);
  if (mismatched_cond_logit != nullptr) {
    fake_cond = ops::scale(ops::add(fake_cond, log_complement(*mismatched_cond_logit)), 0.5);
  }
  Var fake_part = ops::add(log_complement(fake.uncond_logit), fake_cond);
  return ops::scale(ops::add(real_part, fake_part), -0.5);
}

GeneratorLoss generator_loss(std::span<const Generation> batch, std::span<const Caption> captions,
                             const std::vector<Discriminator>& discriminators, const DamsmModel* damsm,
                             const LossWeights& weights) {
  if (batch.empty()) throw std::invalid_argument("generator_loss: empty batch");
  if (captions.size() != batch.size()) throw std::invalid_argument("generator_loss: one caption per sample required");
  const std::size_t stages = batch.front().stages.edited.size();
  if (discriminators.size() != stages) {
    throw std::invalid_argument("generator_loss: " + std::to_string(stages) + " stages but " +
                                std::to_string(discriminators.size()) + " discriminators");
  }

  GeneratorLoss out;
  Var total;
  for (std::size_t i = 0; i < stages; ++i) {
    std::vector<Var> terms;
    for (const auto& g : batch) {
      terms.push_back(generator_adversarial_term(discriminators[i](g.stages.edited[i], g.text.sentence)));
    }
    Var stage_term = batch_mean(terms);
    const double v = stage_term.value().item();
    if (!std::isfinite(v)) throw std::runtime_error("generator loss is not finite at stage " + std::to_string(i));
    out.stage_adversarial.push_back(v);
    out.adversarial += v;
    total = i == 0 ? stage_term : ops::add(total, stage_term);
  }

  if (weights.damsm > 0.0) {
    if (damsm == nullptr) throw std::invalid_argument("generator_loss: DAMSM weight set but no DAMSM model");
    std::vector<ImageEncoding> images;
    std::vector<TextEncoding> texts;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      images.push_back(damsm->image_encoder.encode(batch[b].final_image()));
      NoGradGuard no_grad;
      texts.push_back(damsm->text_encoder.encode(captions[b]));
    }
    Var term = damsm_loss(images, texts, damsm->temps).total;
    out.damsm = term.value().item();
    if (!std::isfinite(out.damsm)) {
      throw std::runtime_error("generator loss: DAMSM term is not finite at stage " + std::to_string(stages - 1));
    }
    total = ops::add(total, ops::scale(term, weights.damsm));
  }

  if (weights.kl > 0.0) {
    std::vector<Var> terms;
    for (const auto& g : batch) terms.push_back(kl_regularizer(g.condition.mu, g.condition.logvar));
    Var term = batch_mean(terms);
    out.kl = term.value().item();
    if (!std::isfinite(out.kl)) throw std::runtime_error("generator loss: KL term is not finite");
    total = ops::add(total, ops::scale(term, weights.kl));
  }

  out.total = total;
  return out;
}

DiscriminatorLoss discriminator_loss(const DiscriminatorBatch& batch, const std::vector<Discriminator>& discriminators,
                                     bool mismatched_captions) {
  const std::size_t n = batch.real.size();
  if (n == 0) throw std::invalid_argument("discriminator_loss: empty batch");
  if (batch.fake.size() != n || batch.sentences.size() != n) {
    throw std::invalid_argument("discriminator_loss: real, fake and sentence counts differ");
  }
  const bool use_mismatch = mismatched_captions && n > 1;

  DiscriminatorLoss out;
  Var total;
  for (std::size_t i = 0; i < discriminators.size(); ++i) {
    const Discriminator& d = discriminators[i];
    std::vector<Var> terms;
    for (std::size_t b = 0; b < n; ++b) {
      if (batch.real[b].size() != discriminators.size() || batch.fake[b].size() != discriminators.size()) {
        throw std::invalid_argument("discriminator_loss: sample " + std::to_string(b) + " has the wrong stage count");
      }
      Var sentence = constant(batch.sentences[b]);
      Var real_features = d.trunk(constant(batch.real[b][i]));
      Var fake_features = d.trunk(constant(batch.fake[b][i]));
      DiscriminatorOutput real{d.unconditional(real_features), d.conditional(real_features, sentence)};
      DiscriminatorOutput fake{d.unconditional(fake_features), d.conditional(fake_features, sentence)};
      if (use_mismatch) {
        Var wrong = d.conditional(real_features, constant(batch.sentences[(b + 1) % n]));
        terms.push_back(discriminator_objective(real, fake, &wrong));
      } else {
        terms.push_back(discriminator_objective(real, fake));
      }
    }
    Var stage_term = batch_mean(terms);
    const double v = stage_term.value().item();
    if (!std::isfinite(v)) throw std::runtime_error("discriminator loss is not finite at stage " + std::to_string(i));
    out.stage_terms.push_back(v);
    total = i == 0 ? stage_term : ops::add(total, stage_term);
  }
  out.total = total;
  return out;
}

TrainingExample make_training_example(const Tensor& image, Caption caption, int cluster_id, const ModelConfig& config) {
  image::require_image(image, "make_training_example");
  TrainingExample ex;
  ex.caption = std::move(caption);
  ex.cluster_id = cluster_id;
  for (int i = 0; i < config.stages; ++i) {
    const int r = config.stage_resolution(i);
    ex.real_levels.push_back(image.dim(1) == r && image.dim(2) == r ? image : image::resize_area(image, r, r));
  }
  return ex;
}

namespace {

GanModel initial_model(const TrainConfig& config, const DamsmModel& damsm) {
  config.validate();
  GanModel model(config.model, config.seed);
  if (config.share_text_encoder) {
    load_state_dict(model.text_parameters(), state_dict(damsm.text_encoder.parameters("text_encoder")));
    set_requires_grad(model.text_parameters(), false);
  }
  return model;
}

DamsmModel frozen_copy(const DamsmModel& source) {
  DamsmModel copy(source.config, 0);
  copy.temps = source.temps;
  load_state_dict(copy.parameters(), state_dict(source.parameters()));
  set_requires_grad(copy.parameters(), false);
  return copy;
}

ParameterList generator_group(const GanModel& model, bool shared_text) {
  ParameterList params = model.generator_parameters();
  if (!shared_text) {
    for (auto& p : model.text_parameters()) params.push_back(std::move(p));
  }
  return params;
}

}  // namespace

Trainer::Trainer(TrainConfig config, TrainingData data, const DamsmModel& damsm)
    : config_(std::move(config)),
      data_(std::move(data)),
      damsm_(frozen_copy(damsm)),
      model_(initial_model(config_, damsm_)),
      rng_(config_.seed ^ 0x5851f42d4c957f2dULL),
      discriminator_opt_(model_.discriminator_parameters(), config_.learning_rate, config_.adam_beta1,
                         config_.adam_beta2),
      generator_opt_(generator_group(model_, config_.share_text_encoder), config_.learning_rate, config_.adam_beta1,
                     config_.adam_beta2) {
  if (data_.examples.empty()) throw std::invalid_argument("training data is empty");
  if (damsm_.config.final_resolution() != config_.model.final_resolution() ||
      damsm_.config.text_dim != config_.model.text_dim || damsm_.config.vocab_size != config_.model.vocab_size) {
    throw std::invalid_argument("DAMSM geometry (resolution, text_dim, vocab) does not match the GAN config");
  }
  for (std::size_t k = 0; k < data_.examples.size(); ++k) {
    const auto& ex = data_.examples[k];
    if (!data_.patterns.contains(ex.cluster_id)) {
      throw std::invalid_argument("example " + std::to_string(k) + " refers to cluster " +
                                  std::to_string(ex.cluster_id) + " with no pattern");
    }
    if (ex.real_levels.size() != static_cast<std::size_t>(config_.model.stages)) {
      throw std::invalid_argument("example " + std::to_string(k) + " has the wrong number of real levels");
    }
    validate_caption(ex.caption, config_.model.vocab_size, config_.model.max_caption_len);
  }
}

StepResult Trainer::step(std::span<const std::size_t> batch, bool update_generator) {
  if (batch.empty()) throw std::invalid_argument("Trainer::step: empty batch");
  std::vector<Tensor> ca_noise, z;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    ca_noise.push_back(rng_.normal_tensor({config_.model.cond_dim}));
    z.push_back(sample_noise(config_.model, rng_));
  }

  StepResult result;
  {
    DiscriminatorBatch d_batch;
    {
      NoGradGuard no_grad;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto& ex = data_.examples.at(batch[k]);
        Generation g = model_.generate(ex.caption, data_.patterns.at(ex.cluster_id), ca_noise[k], z[k]);
        std::vector<Tensor> fakes;
        for (const auto& img : g.stages.edited) fakes.push_back(img.value());
        d_batch.real.push_back(ex.real_levels);
        d_batch.fake.push_back(std::move(fakes));
        d_batch.sentences.push_back(g.text.sentence.value());
      }
    }
    DiscriminatorLoss d_loss = discriminator_loss(d_batch, model_.discriminators, config_.mismatched_captions);
    discriminator_opt_.zero_grad();
    backward(d_loss.total);
    discriminator_opt_.step();
    result.discriminator_loss = d_loss.total.value().item();
  }

  if (update_generator) {
    const ParameterList d_params = model_.discriminator_parameters();
    set_requires_grad(d_params, false);
    try {
      std::vector<Generation> gens;
      std::vector<Caption> captions;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto& ex = data_.examples.at(batch[k]);
        gens.push_back(model_.generate(ex.caption, data_.patterns.at(ex.cluster_id), ca_noise[k], z[k]));
        captions.push_back(ex.caption);
      }
      GeneratorLoss g_loss = generator_loss(gens, captions, model_.discriminators, &damsm_, config_.weights);
      generator_opt_.zero_grad();
      backward(g_loss.total);
      generator_opt_.step();
      result.generator = std::move(g_loss);
    } catch (...) {
      set_requires_grad(d_params, true);
      throw;
    }
    set_requires_grad(d_params, true);
  }
  return result;
}

std::filesystem::path checkpoint_filename(const std::filesystem::path& dir, std::int64_t epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%04lld.ckpt", static_cast<long long>(epoch));
  return dir / name;
}

std::vector<EpochSummary> Trainer::run(const std::filesystem::path& checkpoint_dir, std::ostream* log,
                                       const std::function<void(const EpochSummary&)>& on_epoch) {
  std::filesystem::create_directories(checkpoint_dir);
  const std::vector<int> save_at = checkpoint_epochs(config_.epochs, config_.checkpoint_period_epochs);
  std::vector<std::size_t> order(data_.examples.size());
  std::vector<EpochSummary> summaries;

  for (int epoch = 1; epoch <= config_.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng_.shuffle(order);
    const bool update_g = generator_updates_in_epoch(config_, epoch);
    EpochSummary summary;
    summary.epoch = epoch;
    double g_total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
      const auto begin_time = std::chrono::steady_clock::now();
      StepResult r;
      try {
        r = step(std::span(order).subspan(start, end - start), update_g);
      } catch (const std::runtime_error& e) {
        const std::string where = "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches);
        if (log != nullptr) *log << nlohmann::json{{"epoch", epoch}, {"batch", batches}, {"error", e.what()}} << '\n';
        throw std::runtime_error(where + ": " + e.what());
      }
      const auto wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - begin_time).count();
      summary.discriminator_loss += r.discriminator_loss;
      if (r.generator) g_total += r.generator->total.value().item();
      if (log != nullptr) {
        nlohmann::json rec = {{"epoch", epoch}, {"batch", batches}, {"d_loss", r.discriminator_loss}};
        if (r.generator) {
          rec["g_loss"] = r.generator->total.value().item();
          rec["g_adversarial"] = r.generator->adversarial;
          rec["g_damsm"] = r.generator->damsm;
          rec["g_kl"] = r.generator->kl;
        } else {
          rec["g_loss"] = nullptr;
        }
        rec["wall_ms"] = wall_ms;
        *log << rec.dump() << '\n';
      }
      ++batches;
    }
    summary.discriminator_loss /= batches;
    if (update_g) summary.generator_loss = g_total / batches;
    if (std::find(save_at.begin(), save_at.end(), epoch) != save_at.end()) {
      const auto path = checkpoint_filename(checkpoint_dir, epoch);
      save_checkpoint(model_.to_checkpoint(epoch), path);
      summary.checkpoint = path;
    }
    if (log != nullptr) log->flush();
    if (on_epoch) on_epoch(summary);
    summaries.push_back(std::move(summary));
  }
  return summaries;
}

double mean_matching_score(const GanModel& model, const DamsmModel& damsm, const TrainingData& data,
                           std::uint64_t seed) {
  if (data.examples.empty()) throw std::invalid_argument("mean_matching_score: no examples");
  NoGradGuard no_grad;
  Rng rng(seed);
  double total = 0.0;
  for (const auto& ex : data.examples) {
    Generation g = model.generate(ex.caption, data.patterns.at(ex.cluster_id), rng);
    ImageEncoding img = damsm.image_encoder.encode(g.final_image());
    TextEncoding text = damsm.text_encoder.encode(ex.caption);
    total += matching_score(img, text, damsm.temps.gamma1, damsm.temps.gamma2).value().item();
  }
  return total / static_cast<double>(data.examples.size());
}

int majority_label(std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("majority_label: no labels");
  std::array<int, 3> counts{};
  for (int l : labels) {
    if (l < 0 || l > 2) throw std::invalid_argument("label " + std::to_string(l) + " outside {0, 1, 2}");
    ++counts[static_cast<std::size_t>(l)];
  }
  int best = 0;
  for (int l = 1; l < 3; ++l) {
    if (counts[static_cast<std::size_t>(l)] > counts[static_cast<std::size_t>(best)]) best = l;
  }
  return best;
}

AnnotationSummary aggregate_annotations(std::span<const AnnotationRecord> records) {
  if (records.empty()) throw std::invalid_argument("aggregate_annotations: no records");
  AnnotationSummary s;
  for (const auto& r : records) {
    if (r.labels.empty()) throw std::invalid_argument("record '" + r.sample_id + "' has no labels");
    ++s.counts[static_cast<std::size_t>(majority_label(r.labels))];
  }
  s.total = records.size();
  const double n = static_cast<double>(s.total);
  for (std::size_t l = 0; l < 3; ++l) {
    s.fraction[l] = static_cast<double>(s.counts[l]) / n;
    s.percent[l] = 100.0 * static_cast<double>(s.counts[l]) / n;
  }
  const double positive = static_cast<double>(s.counts[1] + s.counts[2]);
  s.at_least_one = positive / n;
  s.at_least_one_percent = 100.0 * positive / n;
  return s;
}

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<AnnotationRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    AnnotationRecord rec;
    std::getline(fields, rec.sample_id, '\t');
    std::string cell;
    while (std::getline(fields, cell, '\t')) {
      if (cell.empty()) continue;
      try {
        std::size_t used = 0;
        const int label = std::stoi(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        rec.labels.push_back(label);
      } catch (const std::exception&) {
        throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": bad label '" + cell + "'");
      }
    }
    if (rec.labels.empty()) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": no labels for '" +
                                  rec.sample_id + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace memeface
