#include "memeface/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "memeface/ops.hpp"

namespace memeface {

StateDict state_dict(const ParameterList& params) {
  StateDict out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.var.value()});
  return out;
}

void load_state_dict(const ParameterList& params, const StateDict& state) {
  if (params.size() != state.size()) {
    throw std::runtime_error("state dict has " + std::to_string(state.size()) + " tensors, network expects " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != state[i].name) {
      throw std::runtime_error("state dict entry " + std::to_string(i) + " is '" + state[i].name + "', expected '" +
                               params[i].name + "'");
    }
    if (params[i].var.shape() != state[i].tensor.shape()) {
      throw std::runtime_error("shape mismatch for '" + params[i].name + "': " +
                               shape_string(state[i].tensor.shape()) + " vs " + shape_string(params[i].var.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var v = params[i].var;
    v.mutable_value() = state[i].tensor;
  }
}

void zero_grad(const ParameterList& params) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
}

void set_requires_grad(const ParameterList& params, bool requires_grad) {
  for (const auto& p : params) p.var.node()->requires_grad = requires_grad;
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.size();
  return n;
}

Linear::Linear(int in_features, int out_features, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight_ = Var(rng.uniform_tensor({out_features, in_features}, -bound, bound), true);
  bias_ = Var(rng.uniform_tensor({out_features}, -bound, bound), true);
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight_, bias_); }

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng)
    : stride_(stride), padding_(padding) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  weight_ = Var(rng.uniform_tensor({out_channels, in_channels, kernel, kernel}, -bound, bound), true);
  bias_ = Var(rng.uniform_tensor({out_channels}, -bound, bound), true);
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight_, bias_, stride_, padding_); }

void Conv2d::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

UpBlock::UpBlock(int in_channels, int out_channels, Rng& rng) : conv_(in_channels, out_channels, 3, 1, 1, rng) {}

Var UpBlock::operator()(const Var& x) const { return ops::leaky_relu(conv_(ops::upsample_nearest2x(x))); }

void UpBlock::collect(const std::string& prefix, ParameterList& out) const { conv_.collect(prefix + ".conv", out); }

ResidualBlock::ResidualBlock(int channels, Rng& rng)
    : first_(channels, channels, 3, 1, 1, rng), second_(channels, channels, 3, 1, 1, rng) {}

Var ResidualBlock::operator()(const Var& x) const { return ops::add(x, second_(ops::leaky_relu(first_(x)))); }

void ResidualBlock::collect(const std::string& prefix, ParameterList& out) const {
  first_.collect(prefix + ".conv1", out);
  second_.collect(prefix + ".conv2", out);
}

Adam::Adam(ParameterList params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    first_moment_.emplace_back(p.var.shape(), 0.0);
    second_moment_.emplace_back(p.var.shape(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var v = params_[k].var;
    const Tensor& g = v.node()->grad;
    if (g.empty()) continue;
    Tensor& value = v.mutable_value();
    Tensor& m = first_moment_[k];
    Tensor& s = second_moment_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      s[i] = beta2_ * s[i] + (1.0 - beta2_) * g[i] * g[i];
      value[i] -= lr_ * (m[i] / c1) / (std::sqrt(s[i] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() { memeface::zero_grad(params_); }

}  // namespace memeface
