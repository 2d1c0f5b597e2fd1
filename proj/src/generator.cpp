#include "memeface/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "memeface/image.hpp"
#include "memeface/ops.hpp"

namespace memeface {

namespace {

void require_finite(const Var& v, const char* what) {
  if (!v.value().all_finite()) throw std::invalid_argument(std::string(what) + " contains non-finite values");
}

void require_square(const Var& img, int resolution, const char* who) {
  if (img.value().rank() != 3 || img.dim(1) != resolution || img.dim(2) != resolution) {
    throw std::invalid_argument(std::string(who) + ": expected resolution " + std::to_string(resolution) + "x" +
                                std::to_string(resolution) + ", got " + shape_string(img.shape()));
  }
}

}  // namespace

PatternPyramid build_pattern_pyramid(const Tensor& template_image, int stages, int base_resolution, int cluster_id,
                                     std::string source_path) {
  image::require_image(template_image, "build_pattern_pyramid");
  if (stages < 1 || base_resolution < 1) throw std::invalid_argument("build_pattern_pyramid: bad stage geometry");
  const int top = base_resolution << (stages - 1);
  if (template_image.dim(1) < top || template_image.dim(2) < top) {
    throw std::invalid_argument("build_pattern_pyramid: template " + shape_string(template_image.shape()) +
                                " is smaller than the top resolution " + std::to_string(top));
  }
  PatternPyramid pyramid;
  pyramid.cluster_id = cluster_id;
  pyramid.source_path = std::move(source_path);
  for (int i = 0; i < stages; ++i) {
    const int r = base_resolution << i;
    Tensor level = image::resize_area(template_image, r, r);
    if (level.dim(0) != 3) throw std::invalid_argument("build_pattern_pyramid: template must have 3 channels");
    for (double& v : level.storage()) v = std::clamp(v, -1.0, 1.0);
    pyramid.levels.push_back(std::move(level));
  }
  return pyramid;
}

Tensor sample_noise(const ModelConfig& config, Rng& rng) {
  if (config.noise == NoiseDistribution::Uniform) return rng.uniform_tensor({config.noise_dim}, -1.0, 1.0);
  return rng.normal_tensor({config.noise_dim});
}

AttentionResult word_attention(const Var& projected_words, const Var& hidden) {
  if (projected_words.value().rank() != 2 || projected_words.dim(1) == 0) {
    throw std::invalid_argument("attend: need at least one word, got " + shape_string(projected_words.shape()));
  }
  const int depth = projected_words.dim(0);
  Var flat = hidden;
  if (hidden.value().rank() == 3) flat = ops::reshape(hidden, {hidden.dim(0), hidden.dim(1) * hidden.dim(2)});
  if (flat.value().rank() != 2 || flat.dim(0) != depth) {
    throw std::invalid_argument("attend: word depth " + std::to_string(depth) + " does not match hidden " +
                                shape_string(hidden.shape()));
  }
  Var scores = ops::matmul(ops::transpose(projected_words), flat);
  Var weights = ops::softmax(scores, 0);
  return AttentionResult{ops::matmul(projected_words, weights), weights};
}

WordAttention::WordAttention(int text_dim, int hidden_channels, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(text_dim));
  projection_ = Var(rng.uniform_tensor({hidden_channels, text_dim}, -bound, bound), true);
}

AttentionResult WordAttention::operator()(const Var& word_features, const Var& hidden) const {
  if (word_features.value().rank() != 2 || word_features.dim(1) == 0) {
    throw std::invalid_argument("attend: need at least one word, got " + shape_string(word_features.shape()));
  }
  return word_attention(ops::matmul(projection_, word_features), hidden);
}

void WordAttention::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".projection", projection_});
}

InitialStage::InitialStage(const ModelConfig& config, Rng& rng)
    : fc_(config.cond_dim + config.noise_dim, config.hidden_channels * 16, rng),
      channels_(config.hidden_channels),
      cond_dim_(config.cond_dim),
      noise_dim_(config.noise_dim) {
  for (int r = 4; r < config.base_resolution; r *= 2) up_.emplace_back(config.hidden_channels, config.hidden_channels, rng);
}

Var InitialStage::operator()(const Var& condition, const Var& noise) const {
  if (condition.size() != static_cast<std::size_t>(cond_dim_) || noise.size() != static_cast<std::size_t>(noise_dim_)) {
    throw std::invalid_argument("initial_stage: condition " + shape_string(condition.shape()) + " / noise " +
                                shape_string(noise.shape()) + " do not match the configuration");
  }
  require_finite(condition, "initial_stage: condition");
  require_finite(noise, "initial_stage: noise");
  Var h = ops::leaky_relu(fc_(ops::concat({condition, noise})));
  h = ops::reshape(h, {channels_, 4, 4});
  for (const auto& up : up_) h = up(h);
  return h;
}

void InitialStage::collect(const std::string& prefix, ParameterList& out) const {
  fc_.collect(prefix + ".fc", out);
  for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(prefix + ".up" + std::to_string(i), out);
}

ImageHead::ImageHead(int channels, Rng& rng) : conv_(channels, 3, 3, 1, 1, rng) {}

Var ImageHead::operator()(const Var& hidden) const { return ops::tanh(conv_(hidden)); }

void ImageHead::collect(const std::string& prefix, ParameterList& out) const { conv_.collect(prefix + ".conv", out); }

RefinementStage::RefinementStage(const ModelConfig& config, int input_resolution, Rng& rng)
    : joint_(2 * config.hidden_channels, config.hidden_channels, 3, 1, 1, rng),
      up_(config.hidden_channels, config.hidden_channels, rng),
      head_(config.hidden_channels, rng),
      input_resolution_(input_resolution),
      channels_(config.hidden_channels) {
  for (int i = 0; i < config.residual_blocks; ++i) residual_.emplace_back(config.hidden_channels, rng);
}

RefinementStage::Output RefinementStage::operator()(const Var& previous_hidden, const Var& context) const {
  require_square(previous_hidden, input_resolution_, "next_stage");
  const std::size_t expected = static_cast<std::size_t>(channels_) * input_resolution_ * input_resolution_;
  if (context.size() != expected) {
    throw std::invalid_argument("next_stage: context " + shape_string(context.shape()) +
                                " does not match the previous hidden map");
  }
  Var ctx = ops::reshape(context, {channels_, input_resolution_, input_resolution_});
  Var h = ops::leaky_relu(joint_(ops::concat({previous_hidden, ctx})));
  for (const auto& block : residual_) h = block(h);
  h = up_(h);
  return Output{h, head_(h)};
}

void RefinementStage::collect(const std::string& prefix, ParameterList& out) const {
  joint_.collect(prefix + ".joint", out);
  for (std::size_t i = 0; i < residual_.size(); ++i) residual_[i].collect(prefix + ".res" + std::to_string(i), out);
  up_.collect(prefix + ".up", out);
  head_.collect(prefix + ".head", out);
}

PatternEditor::PatternEditor(const ModelConfig& config, int resolution, Rng& rng)
    : image_down1_(3, config.hidden_channels, 3, 2, 1, rng),
      image_down2_(config.hidden_channels, config.hidden_channels, 3, 2, 1, rng),
      pattern_down1_(3, config.hidden_channels, 3, 2, 1, rng),
      pattern_down2_(config.hidden_channels, config.hidden_channels, 3, 2, 1, rng),
      fuse1_(2 * config.hidden_channels, config.hidden_channels, 1, 1, 0, rng),
      fuse2_(config.hidden_channels, config.hidden_channels, 1, 1, 0, rng),
      up1_(config.hidden_channels, config.hidden_channels, rng),
      up2_(config.hidden_channels, config.hidden_channels, rng),
      out_(config.hidden_channels, 3, 3, 1, 1, rng),
      resolution_(resolution) {
  if (resolution % 4 != 0) throw std::invalid_argument("pattern editor needs a resolution divisible by 4");
}

Var PatternEditor::operator()(const Var& stage_image, const Var& pattern) const {
  if (stage_image.shape() != pattern.shape()) {
    throw std::invalid_argument("edit_with_pattern: stage image " + shape_string(stage_image.shape()) +
                                " and pattern " + shape_string(pattern.shape()) + " differ in resolution");
  }
  require_square(stage_image, resolution_, "edit_with_pattern");
  Var img = ops::leaky_relu(image_down2_(ops::leaky_relu(image_down1_(stage_image))));
  Var pat = ops::leaky_relu(pattern_down2_(ops::leaky_relu(pattern_down1_(pattern))));
  Var fused = ops::leaky_relu(fuse2_(ops::leaky_relu(fuse1_(ops::concat({img, pat})))));
  return ops::tanh(out_(up2_(up1_(fused))));
}

void PatternEditor::collect(const std::string& prefix, ParameterList& out) const {
  image_down1_.collect(prefix + ".image_down1", out);
  image_down2_.collect(prefix + ".image_down2", out);
  pattern_down1_.collect(prefix + ".pattern_down1", out);
  pattern_down2_.collect(prefix + ".pattern_down2", out);
  fuse1_.collect(prefix + ".fuse1", out);
  fuse2_.collect(prefix + ".fuse2", out);
  up1_.collect(prefix + ".up1", out);
  up2_.collect(prefix + ".up2", out);
  out_.collect(prefix + ".out", out);
}

Generator::Generator(const ModelConfig& config, Rng& rng)
    : config_(config), initial_(config, rng), head0_(config.hidden_channels, rng) {
  config.validate();
  for (int i = 1; i < config.stages; ++i) {
    attention_.emplace_back(config.text_dim, config.hidden_channels, rng);
    stages_.emplace_back(config, config.stage_resolution(i - 1), rng);
  }
  for (int i = 0; i < config.stages; ++i) editors_.emplace_back(config, config.stage_resolution(i), rng);
}

AttentionResult Generator::attend(int stage, const Var& word_features, const Var& hidden) const {
  if (stage < 1 || stage >= config_.stages) throw std::out_of_range("attend: no attention at stage " + std::to_string(stage));
  return attention_[static_cast<std::size_t>(stage - 1)](word_features, hidden);
}

RefinementStage::Output Generator::next_stage(int stage, const Var& previous_hidden, const Var& context) const {
  if (stage < 1 || stage >= config_.stages) throw std::out_of_range("next_stage: no stage " + std::to_string(stage));
  return stages_[static_cast<std::size_t>(stage - 1)](previous_hidden, context);
}

Var Generator::edit_with_pattern(int stage, const Var& stage_image, const Var& pattern) const {
  if (stage < 0 || stage >= config_.stages) throw std::out_of_range("edit_with_pattern: no stage " + std::to_string(stage));
  return editors_[static_cast<std::size_t>(stage)](stage_image, pattern);
}

StageOutputs Generator::generate(const Var& condition, const Var& noise, const Var& word_features,
                                 std::span<const Var> pattern_levels) const {
  if (static_cast<int>(pattern_levels.size()) != config_.stages) {
    throw std::invalid_argument("generate: pattern pyramid has " + std::to_string(pattern_levels.size()) +
                                " levels, generator has " + std::to_string(config_.stages) + " stages");
  }
  StageOutputs out;
  Var h = initial_(condition, noise);
  Var x = head0_(h);
  out.hidden.push_back(h);
  out.pre_edit.push_back(x);
  out.edited.push_back(edit_with_pattern(0, x, pattern_levels[0]));
  for (int i = 1; i < config_.stages; ++i) {
    AttentionResult att = attend(i, word_features, h);
    auto next = next_stage(i, h, att.context);
    h = next.hidden;
    out.hidden.push_back(h);
    out.pre_edit.push_back(next.image);
    out.edited.push_back(edit_with_pattern(i, next.image, pattern_levels[static_cast<std::size_t>(i)]));
    out.attention_maps.push_back(att.weights);
  }
  return out;
}

StageOutputs Generator::generate(const Var& condition, const Var& noise, const Var& word_features,
                                 const PatternPyramid& pyramid) const {
  std::vector<Var> levels;
  levels.reserve(pyramid.levels.size());
  for (const auto& level : pyramid.levels) levels.push_back(constant(level));
  return generate(condition, noise, word_features, levels);
}

ParameterList Generator::parameters(const std::string& prefix) const {
  ParameterList out;
  initial_.collect(prefix + ".initial", out);
  head0_.collect(prefix + ".head0", out);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i + 1);
    attention_[i].collect(p + ".attention", out);
    stages_[i].collect(p, out);
  }
  for (std::size_t i = 0; i < editors_.size(); ++i) editors_[i].collect(prefix + ".editor" + std::to_string(i), out);
  return out;
}

}  // namespace memeface
