#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memeface/model.hpp"

namespace memeface {

// EpochPeriodic follows the published schedule: discriminator updates on every
// batch, generator updates only in epochs divisible by the update period.
// PerBatchAlternating updates both on every batch.
enum class UpdateSchedule { EpochPeriodic, PerBatchAlternating };

struct LossWeights {
  double damsm = 5.0;
  double kl = 1.0;
};

struct TrainConfig {
  double learning_rate = 0.0002;
  int batch_size = 14;
  int epochs = 200;
  int generator_update_period_epochs = 5;
  int checkpoint_period_epochs = 5;
  UpdateSchedule schedule = UpdateSchedule::EpochPeriodic;
  LossWeights weights;
  bool mismatched_captions = true;
  bool share_text_encoder = true;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::uint64_t seed = 0;
  ModelConfig model;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Epochs (1-based) at which a checkpoint is written: multiples of the period
// plus the final epoch.
std::vector<int> checkpoint_epochs(int epochs, int period);
bool generator_updates_in_epoch(const TrainConfig& config, int epoch);

inline constexpr double kProbabilityFloor = 1e-7;

// logistic(logit) clamped to [1e-7, 1 - 1e-7].
Var clamped_probability(const Var& logit);

// -1/2 log D(x̄) - 1/2 log D(x̄, ĉ) for one fake sample.
Var generator_adversarial_term(const DiscriminatorOutput& fake);

// -1/2 [log D(x) + log D(x, ĉ)] - 1/2 [log(1 - D(x̄)) + log(1 - D(x̄, ĉ))].
// With a mismatched conditional logit the last term becomes
// 1/2 [log(1 - D(x̄, ĉ)) + log(1 - D(x, ĉ'))].
Var discriminator_objective(const DiscriminatorOutput& real, const DiscriminatorOutput& fake,
                            const Var* mismatched_cond_logit = nullptr);

struct GeneratorLoss {
  Var total;
  std::vector<double> stage_adversarial;  // batch mean per stage
  double adversarial = 0.0;
  double damsm = 0.0;  // unweighted
  double kl = 0.0;     // unweighted, batch mean
};

// Sum over stages of the batch-mean adversarial term, plus weighted DAMSM loss
// on the final-stage images and the batch-mean KL term. `damsm` may be null
// when its weight is zero. Throws std::runtime_error naming the stage when a
// term is not finite.
GeneratorLoss generator_loss(std::span<const Generation> batch, std::span<const Caption> captions,
                             const std::vector<Discriminator>& discriminators, const DamsmModel* damsm,
                             const LossWeights& weights);

struct DiscriminatorBatch {
  std::vector<std::vector<Tensor>> real;  // [sample][stage]
  std::vector<std::vector<Tensor>> fake;  // [sample][stage]
  std::vector<Tensor> sentences;          // ĉ per sample
};

struct DiscriminatorLoss {
  Var total;
  std::vector<double> stage_terms;
};

// Sum over stages of the batch-mean discriminator objective. Mismatched pairs
// pair real image b with the sentence of sample (b + 1) mod B and are skipped
// when B = 1.
DiscriminatorLoss discriminator_loss(const DiscriminatorBatch& batch, const std::vector<Discriminator>& discriminators,
                                     bool mismatched_captions);

struct TrainingExample {
  Caption caption;
  int cluster_id = -1;
  std::vector<Tensor> real_levels;  // the real image at every stage resolution
};

struct TrainingData {
  std::vector<TrainingExample> examples;
  std::map<int, PatternPyramid> patterns;  // by cluster id
};

// Area-resamples `image` to each stage resolution.
TrainingExample make_training_example(const Tensor& image, Caption caption, int cluster_id, const ModelConfig& config);

struct StepResult {
  double discriminator_loss = 0.0;
  std::optional<GeneratorLoss> generator;
};

struct EpochSummary {
  int epoch = 0;
  double discriminator_loss = 0.0;  // mean over batches
  std::optional<double> generator_loss;
  std::optional<std::filesystem::path> checkpoint;
};

class Trainer {
 public:
  // The DAMSM parameters are copied and frozen. With share_text_encoder the
  // GAN's text encoder starts from (and stays at) the DAMSM text encoder.
  Trainer(TrainConfig config, TrainingData data, const DamsmModel& damsm);

  // One discriminator update, then a generator update when requested. Both use
  // the same noise draws.
  StepResult step(std::span<const std::size_t> batch, bool update_generator);

  // Full epoch loop. Checkpoints go to `checkpoint_dir` (created if needed);
  // one JSON line per batch is written to `log` when given.
  std::vector<EpochSummary> run(const std::filesystem::path& checkpoint_dir, std::ostream* log = nullptr,
                                const std::function<void(const EpochSummary&)>& on_epoch = {});

  GanModel& model() { return model_; }
  const GanModel& model() const { return model_; }
  const DamsmModel& damsm() const { return damsm_; }
  const TrainingData& data() const { return data_; }
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  TrainingData data_;
  DamsmModel damsm_;
  GanModel model_;
  Rng rng_;
  Adam discriminator_opt_;
  Adam generator_opt_;
  int epoch_ = 0;
  int batch_index_ = 0;
};

std::filesystem::path checkpoint_filename(const std::filesystem::path& dir, std::int64_t epoch);

// Mean matching score between each example's generated final image and its
// own caption. Noise is drawn from `seed`, so repeated calls on the same model
// agree exactly.
double mean_matching_score(const GanModel& model, const DamsmModel& damsm, const TrainingData& data,
                           std::uint64_t seed);

struct AnnotationRecord {
  std::string sample_id;
  std::vector<int> labels;  // one per annotator, each in {0, 1, 2}
};

struct AnnotationSummary {
  std::size_t total = 0;
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> fraction{};
  std::array<double, 3> percent{};
  double at_least_one = 0.0;  // fraction labelled 1 or 2
  double at_least_one_percent = 0.0;
};

// Most frequent label; ties go to the lower label.
int majority_label(std::span<const int> labels);
AnnotationSummary aggregate_annotations(std::span<const AnnotationRecord> records);
// Tab-separated: sample id, then one label per column.
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path);

}  // namespace memeface
