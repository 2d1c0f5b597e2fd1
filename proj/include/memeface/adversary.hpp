#pragma once

#include <string>
#include <vector>

#include "memeface/config.hpp"
#include "memeface/layers.hpp"

namespace memeface {

struct DiscriminatorOutput {
  Var uncond_logit;  // scalar
  Var cond_logit;    // scalar
};

double logistic(double logit);

// Stage discriminator. A shared convolutional trunk reduces the stage image to
// [D_d, 4, 4]; the unconditional head reads the trunk alone, the conditional
// head reads the trunk joined with the spatially replicated sentence vector.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const ModelConfig& config, int resolution, Rng& rng);

  DiscriminatorOutput operator()(const Var& image, const Var& sentence) const;
  Var trunk(const Var& image) const;
  Var unconditional(const Var& features) const;
  Var conditional(const Var& features, const Var& sentence) const;

  ParameterList parameters(const std::string& prefix) const;
  int resolution() const { return resolution_; }

 private:
  Conv2d stem_;
  std::vector<Conv2d> down_;
  Linear uncond_head_;
  Conv2d joint_;
  Linear cond_head_;
  int resolution_ = 0;
  int channels_ = 0;
  int text_dim_ = 0;
};

}  // namespace memeface
