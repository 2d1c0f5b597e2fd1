#pragma once

#include <string>
#include <utility>
#include <vector>

#include "memeface/autograd.hpp"
#include "memeface/random.hpp"

namespace memeface {

// A trainable tensor together with its dotted path inside a network. Vars are
// handles, so the list aliases the module's parameters.
struct NamedParameter {
  std::string name;
  Var var;
};
using ParameterList = std::vector<NamedParameter>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using StateDict = std::vector<NamedTensor>;

StateDict state_dict(const ParameterList& params);
// Copies values into the parameters. Names and shapes must match exactly.
void load_state_dict(const ParameterList& params, const StateDict& state);
void zero_grad(const ParameterList& params);
void set_requires_grad(const ParameterList& params, bool requires_grad);
std::size_t parameter_count(const ParameterList& params);

// Weight and bias initialized uniform in +-1/sqrt(fan_in).
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng);

  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  int in_features() const { return weight_.dim(1); }
  int out_features() const { return weight_.dim(0); }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  Var weight_;
  Var bias_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng);

  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  int in_channels() const { return weight_.dim(1); }
  int out_channels() const { return weight_.dim(0); }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  Var weight_;
  Var bias_;
  int stride_ = 1;
  int padding_ = 0;
};

// Nearest-neighbour 2x upsample, 3x3 conv, leaky ReLU.
class UpBlock {
 public:
  UpBlock() = default;
  UpBlock(int in_channels, int out_channels, Rng& rng);
  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  Conv2d conv_;
};

// x + conv(leaky(conv(x))), channel count preserved.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(int channels, Rng& rng);
  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  Conv2d first_;
  Conv2d second_;
};

// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(ParameterList params, double learning_rate, double beta1 = 0.5, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();
  const ParameterList& params() const { return params_; }
  long steps() const { return steps_; }

 private:
  ParameterList params_;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
};

}  // namespace memeface
