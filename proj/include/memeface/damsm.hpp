#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "memeface/config.hpp"
#include "memeface/layers.hpp"
#include "memeface/text_encoder.hpp"

namespace memeface {

struct DamsmTemperatures {
  double gamma1 = 5.0;   // word -> region attention sharpness
  double gamma2 = 5.0;   // relevance aggregation
  double gamma3 = 10.0;  // batch posterior smoothing
};

struct ImageEncoding {
  Var regions;  // [text_dim, grid * grid]
  Var global;   // [text_dim]
};

// Small convolutional encoder: stem, stride-2 convolutions down to the region
// grid, a 1x1 projection for region features and a linear map of the pooled
// trunk for the global feature.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const ModelConfig& config, Rng& rng);

  ImageEncoding encode(const Var& image) const;
  ParameterList parameters(const std::string& prefix = "image_encoder") const;
  int input_resolution() const { return resolution_; }

 private:
  Conv2d stem_;
  std::vector<Conv2d> down_;
  Conv2d region_projection_;
  Linear global_projection_;
  int resolution_ = 0;
  int grid_ = 0;
  int text_dim_ = 0;
};

// Cosine of two rank-1 vectors with each norm floored at 1e-8.
Var cosine_similarity(const Var& a, const Var& b);

// Per-word relevance r_t = cos(c_t, e_t), where c_t is the region context under
// softmax-over-regions attention with temperature gamma1. Returns [T].
Var word_relevance(const Var& regions, const Var& words, double gamma1);

// (1 / gamma2) * log(sum_t exp(gamma2 * r_t)).
Var matching_score(const Var& regions, const Var& words, double gamma1, double gamma2);
Var matching_score(const ImageEncoding& image, const TextEncoding& text, double gamma1, double gamma2);

struct BatchMatchingLoss {
  Var loss;
  Tensor image_to_caption;  // [B, B], row b = P(caption | image b)
  Tensor caption_to_image;  // [B, B], column b = P(image | caption b)
};

// -sum_b log P(caption b | image b) - sum_b log P(image b | caption b), with
// both posteriors softmax(gamma3 * scores) over the batch. scores[i][j] pairs
// image i with caption j.
BatchMatchingLoss batch_matching_loss(const Var& scores, double gamma3);

struct DamsmLoss {
  Var total;
  BatchMatchingLoss word;
  BatchMatchingLoss sentence;
};

DamsmLoss damsm_loss(std::span<const ImageEncoding> images, std::span<const TextEncoding> captions,
                     const DamsmTemperatures& temps);

class DamsmModel {
 public:
  DamsmModel() = default;
  DamsmModel(const ModelConfig& config, std::uint64_t seed);

  DamsmLoss loss(std::span<const Tensor> images, std::span<const Caption> captions) const;
  ParameterList parameters() const;

  ModelConfig config;
  DamsmTemperatures temps;
  TextEncoder text_encoder;
  ImageEncoder image_encoder;
};

struct DamsmSample {
  Tensor image;  // at the encoder's input resolution
  Caption caption;
};

struct DamsmTrainConfig {
  int epochs = 50;
  int batch_size = 14;
  double learning_rate = 0.002;
  std::uint64_t seed = 0;
};

struct DamsmTrainReport {
  double initial_loss = 0.0;  // mean batch loss before the first update
  double final_loss = 0.0;    // mean batch loss after the last update
  std::vector<double> epoch_losses;
};

// Minimizes damsm_loss over real pairs with Adam. Throws on an empty dataset.
DamsmTrainReport pretrain_damsm(DamsmModel& model, std::span<const DamsmSample> samples,
                                const DamsmTrainConfig& config,
                                const std::function<void(int epoch, double loss)>& on_epoch = {});

// Mean DAMSM loss over fixed consecutive batches, no gradient tracking.
double evaluate_damsm_loss(const DamsmModel& model, std::span<const DamsmSample> samples, int batch_size);

using PairScorer = std::function<double(std::size_t image, std::size_t caption)>;
using DistractorFilter = std::function<bool(std::size_t image, std::size_t caption)>;

// Fraction of images whose own caption scores strictly above K-1 distractor
// captions drawn without replacement from the other eligible captions.
double r_precision(std::size_t count, std::size_t k, const PairScorer& scorer, Rng& rng,
                   const DistractorFilter& eligible = {});

// Sentence-level cosine scorer; captions with identical token sequences to the
// query are never used as distractors.
double r_precision(const DamsmModel& model, std::span<const Tensor> images, std::span<const Caption> captions,
                   std::size_t k, std::uint64_t seed);

}  // namespace memeface
