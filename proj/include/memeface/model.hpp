#pragma once

#include <cstdint>
#include <vector>

#include "memeface/adversary.hpp"
#include "memeface/checkpoint.hpp"
#include "memeface/config.hpp"
#include "memeface/damsm.hpp"
#include "memeface/generator.hpp"
#include "memeface/text_encoder.hpp"

namespace memeface {

struct Generation {
  TextEncoding text;
  AugmentedCondition condition;
  Tensor noise;
  StageOutputs stages;

  const Var& final_image() const { return stages.edited.back(); }
};

// Every network the GAN needs at inference and training time.
class GanModel {
 public:
  GanModel() = default;
  GanModel(const ModelConfig& config, std::uint64_t seed);

  // Runs text encoding, conditioning augmentation and the generator with the
  // supplied noise draws (`ca_noise` [cond_dim], `z` [noise_dim]).
  Generation generate(const Caption& caption, const PatternPyramid& pyramid, const Tensor& ca_noise,
                      const Tensor& z) const;
  Generation generate(const Caption& caption, const PatternPyramid& pyramid, Rng& rng) const;

  ParameterList text_parameters() const;
  ParameterList generator_parameters() const;  // conditioning augmentation + generator
  ParameterList discriminator_parameters() const;
  ParameterList parameters() const;

  Checkpoint to_checkpoint(std::int64_t epoch) const;
  static GanModel from_checkpoint(const Checkpoint& checkpoint);

  ModelConfig config;
  TextEncoder text_encoder;
  ConditioningAugmentation cond_aug;
  Generator generator;
  std::vector<Discriminator> discriminators;
};

Checkpoint damsm_checkpoint(const DamsmModel& model, std::int64_t epoch);
DamsmModel damsm_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace memeface
