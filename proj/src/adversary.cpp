#include "memeface/adversary.hpp"

#include <cmath>
#include <stdexcept>

#include "memeface/ops.hpp"

namespace memeface {

double logistic(double logit) { return 1.0 / (1.0 + std::exp(-logit)); }

Discriminator::Discriminator(const ModelConfig& config, int resolution, Rng& rng)
    : stem_(3, config.disc_channels, 3, 1, 1, rng),
      uncond_head_(config.disc_channels * 16, 1, rng),
      joint_(config.disc_channels + config.text_dim, config.disc_channels, 3, 1, 1, rng),
      cond_head_(config.disc_channels * 16, 1, rng),
      resolution_(resolution),
      channels_(config.disc_channels),
      text_dim_(config.text_dim) {
  if (resolution < 4 || (resolution & (resolution - 1)) != 0) {
    throw std::invalid_argument("discriminator resolution must be a power of two >= 4");
  }
  for (int r = resolution; r > 4; r /= 2) down_.emplace_back(config.disc_channels, config.disc_channels, 3, 2, 1, rng);
}

Var Discriminator::trunk(const Var& image) const {
  if (image.value().rank() != 3 || image.dim(0) != 3 || image.dim(1) != resolution_ || image.dim(2) != resolution_) {
    throw std::invalid_argument("discriminate: expected [3 x " + std::to_string(resolution_) + " x " +
                                std::to_string(resolution_) + "], got " + shape_string(image.shape()));
  }
  Var h = ops::leaky_relu(stem_(image));
  for (const auto& conv : down_) h = ops::leaky_relu(conv(h));
  return h;
}

Var Discriminator::unconditional(const Var& features) const {
  return ops::reshape(uncond_head_(ops::reshape(features, {channels_ * 16})), {});
}

Var Discriminator::conditional(const Var& features, const Var& sentence) const {
  if (sentence.value().rank() != 1 || sentence.dim(0) != text_dim_) {
    throw std::invalid_argument("discriminate: sentence vector " + shape_string(sentence.shape()) + ", expected [" +
                                std::to_string(text_dim_) + "]");
  }
  Var joined = ops::concat({features, ops::repeat_spatial(sentence, 4, 4)});
  Var h = ops::leaky_relu(joint_(joined));
  return ops::reshape(cond_head_(ops::reshape(h, {channels_ * 16})), {});
}

DiscriminatorOutput Discriminator::operator()(const Var& image, const Var& sentence) const {
  Var features = trunk(image);
  return DiscriminatorOutput{unconditional(features), conditional(features, sentence)};
}

ParameterList Discriminator::parameters(const std::string& prefix) const {
  ParameterList out;
  stem_.collect(prefix + ".stem", out);
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
  uncond_head_.collect(prefix + ".uncond_head", out);
  joint_.collect(prefix + ".joint", out);
  cond_head_.collect(prefix + ".cond_head", out);
  return out;
}

}  // namespace memeface
