#include "memeface/model.hpp"

#include <stdexcept>

namespace memeface {

GanModel::GanModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  Rng rng(seed);
  text_encoder = TextEncoder(config, rng);
  cond_aug = ConditioningAugmentation(config, rng);
  generator = Generator(config, rng);
  for (int i = 0; i < config.stages; ++i) discriminators.emplace_back(config, config.stage_resolution(i), rng);
}

Generation GanModel::generate(const Caption& caption, const PatternPyramid& pyramid, const Tensor& ca_noise,
                              const Tensor& z) const {
  Generation out;
  out.text = text_encoder.encode(caption);
  out.condition = cond_aug(out.text.sentence, ca_noise);
  out.noise = z;
  out.stages = generator.generate(out.condition.c, constant(z), out.text.word_features, pyramid);
  return out;
}

Generation GanModel::generate(const Caption& caption, const PatternPyramid& pyramid, Rng& rng) const {
  Tensor ca_noise = rng.normal_tensor({config.cond_dim});
  Tensor z = sample_noise(config, rng);
  return generate(caption, pyramid, ca_noise, z);
}

ParameterList GanModel::text_parameters() const { return text_encoder.parameters("text_encoder"); }

ParameterList GanModel::generator_parameters() const {
  ParameterList out = cond_aug.parameters("cond_aug");
  for (auto& p : generator.parameters("generator")) out.push_back(std::move(p));
  return out;
}

ParameterList GanModel::discriminator_parameters() const {
  ParameterList out;
  for (std::size_t i = 0; i < discriminators.size(); ++i) {
    for (auto& p : discriminators[i].parameters("discriminator" + std::to_string(i))) out.push_back(std::move(p));
  }
  return out;
}

ParameterList GanModel::parameters() const {
  ParameterList out = text_parameters();
  for (auto& p : generator_parameters()) out.push_back(std::move(p));
  for (auto& p : discriminator_parameters()) out.push_back(std::move(p));
  return out;
}

Checkpoint GanModel::to_checkpoint(std::int64_t epoch) const {
  Checkpoint ck;
  ck.epoch = epoch;
  ck.kind = "gan";
  ck.config = config;
  ck.tensors = state_dict(parameters());
  return ck;
}

GanModel GanModel::from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "gan") throw std::invalid_argument("expected a gan checkpoint, got '" + checkpoint.kind + "'");
  GanModel model(checkpoint.config.get<ModelConfig>(), 0);
  load_state_dict(model.parameters(), checkpoint.tensors);
  return model;
}

Checkpoint damsm_checkpoint(const DamsmModel& model, std::int64_t epoch) {
  Checkpoint ck;
  ck.epoch = epoch;
  ck.kind = "damsm";
  ck.config = {{"model", model.config},
               {"gamma1", model.temps.gamma1},
               {"gamma2", model.temps.gamma2},
               {"gamma3", model.temps.gamma3}};
  ck.tensors = state_dict(model.parameters());
  return ck;
}

DamsmModel damsm_from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "damsm") {
    throw std::invalid_argument("expected a damsm checkpoint, got '" + checkpoint.kind + "'");
  }
  DamsmModel model(checkpoint.config.at("model").get<ModelConfig>(), 0);
  model.temps.gamma1 = checkpoint.config.at("gamma1").get<double>();
  model.temps.gamma2 = checkpoint.config.at("gamma2").get<double>();
  model.temps.gamma3 = checkpoint.config.at("gamma3").get<double>();
  load_state_dict(model.parameters(), checkpoint.tensors);
  return model;
}

}  // namespace memeface
