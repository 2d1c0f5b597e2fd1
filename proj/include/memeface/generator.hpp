#pragma once

#include <span>
#include <string>
#include <vector>

#include "memeface/config.hpp"
#include "memeface/layers.hpp"

namespace memeface {

// One template rendered at every stage resolution, level i at base * 2^i.
struct PatternPyramid {
  std::vector<Tensor> levels;
  int cluster_id = -1;
  std::string source_path;
};

// Area-averaged down-scaling of `template_image` (pixels already in [-1, 1]) to
// each stage resolution. The template must be at least as large as the top level.
PatternPyramid build_pattern_pyramid(const Tensor& template_image, int stages, int base_resolution,
                                     int cluster_id = -1, std::string source_path = {});

struct StageOutputs {
  std::vector<Var> hidden;          // h_i [D_h, R_i, R_i]
  std::vector<Var> pre_edit;        // x̂_i [3, R_i, R_i]
  std::vector<Var> edited;          // x̄_i [3, R_i, R_i]
  std::vector<Var> attention_maps;  // [T, R_{i-1}^2] for stages 1..m-1
};

Tensor sample_noise(const ModelConfig& config, Rng& rng);

struct AttentionResult {
  Var context;  // [D_h, R * R]
  Var weights;  // [T, R * R], every column sums to 1
};

// Softmax over words of (word . hidden column) at every spatial location.
// `projected_words` is [D_h, T]; `hidden` is [D_h, R, R] or [D_h, R * R].
AttentionResult word_attention(const Var& projected_words, const Var& hidden);

// Projects word features into the generator width, then attends.
class WordAttention {
 public:
  WordAttention() = default;
  WordAttention(int text_dim, int hidden_channels, Rng& rng);

  AttentionResult operator()(const Var& word_features, const Var& hidden) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  Var& projection() { return projection_; }

 private:
  Var projection_;  // [D_h, D_text]
};

// (c, z) -> fc -> [D_h, 4, 4] -> up-blocks to the base resolution.
class InitialStage {
 public:
  InitialStage() = default;
  InitialStage(const ModelConfig& config, Rng& rng);

  Var operator()(const Var& condition, const Var& noise) const;
  void collect(const std::string& prefix, ParameterList& out) const;

 private:
  Linear fc_;
  std::vector<UpBlock> up_;
  int channels_ = 0;
  int cond_dim_ = 0;
  int noise_dim_ = 0;
};

// 3x3 conv to RGB followed by tanh.
class ImageHead {
 public:
  ImageHead() = default;
  ImageHead(int channels, Rng& rng);
  Var operator()(const Var& hidden) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  Conv2d& conv() { return conv_; }

 private:
  Conv2d conv_;
};

// Joins the previous hidden map with the word context, runs residual blocks and
// doubles the resolution; the head renders x̂_i from the result.
class RefinementStage {
 public:
  RefinementStage() = default;
  RefinementStage(const ModelConfig& config, int input_resolution, Rng& rng);

  struct Output {
    Var hidden;
    Var image;
  };
  Output operator()(const Var& previous_hidden, const Var& context) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  ImageHead& head() { return head_; }

 private:
  Conv2d joint_;
  std::vector<ResidualBlock> residual_;
  UpBlock up_;
  ImageHead head_;
  int input_resolution_ = 0;
  int channels_ = 0;
};

// Template-conditioned editing network. The stage image and the pattern each
// pass through two stride-2 convolutions to [D_e, R/4, R/4], are concatenated,
// fused by a per-location MLP (1x1 convolutions) and brought back to R by two
// nearest-neighbour up-sampling blocks and a tanh output conv.
class PatternEditor {
 public:
  PatternEditor() = default;
  PatternEditor(const ModelConfig& config, int resolution, Rng& rng);

  Var operator()(const Var& stage_image, const Var& pattern) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  int resolution() const { return resolution_; }

 private:
  Conv2d image_down1_, image_down2_;
  Conv2d pattern_down1_, pattern_down2_;
  Conv2d fuse1_, fuse2_;
  UpBlock up1_, up2_;
  Conv2d out_;
  int resolution_ = 0;
};

class Generator {
 public:
  Generator() = default;
  Generator(const ModelConfig& config, Rng& rng);

  Var initial_stage(const Var& condition, const Var& noise) const { return initial_(condition, noise); }
  AttentionResult attend(int stage, const Var& word_features, const Var& hidden) const;
  RefinementStage::Output next_stage(int stage, const Var& previous_hidden, const Var& context) const;
  Var edit_with_pattern(int stage, const Var& stage_image, const Var& pattern) const;

  // initial stage -> head_0 -> editor_0, then for i >= 1:
  // attend(h_{i-1}) -> refine -> editor_i.
  StageOutputs generate(const Var& condition, const Var& noise, const Var& word_features,
                        std::span<const Var> pattern_levels) const;
  StageOutputs generate(const Var& condition, const Var& noise, const Var& word_features,
                        const PatternPyramid& pyramid) const;

  ParameterList parameters(const std::string& prefix = "generator") const;
  const ModelConfig& config() const { return config_; }
  ImageHead& base_head() { return head0_; }
  RefinementStage& stage(int i) { return stages_.at(static_cast<std::size_t>(i - 1)); }

 private:
  ModelConfig config_;
  InitialStage initial_;
  ImageHead head0_;
  std::vector<WordAttention> attention_;  // stages 1..m-1
  std::vector<RefinementStage> stages_;   // stages 1..m-1
  std::vector<PatternEditor> editors_;    // stages 0..m-1
};

}  // namespace memeface
