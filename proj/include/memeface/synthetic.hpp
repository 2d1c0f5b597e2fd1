#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "memeface/damsm.hpp"
#include "memeface/trainer.hpp"

// Procedural stand-ins for meme-face data, used by the CLI demo commands and
// the tests.
namespace memeface::synthetic {

// Distinct face layouts on distinct backgrounds; template_id selects one of
// an open-ended family.
Tensor render_template(int template_id, int resolution);

// The template with a coloured "detail" patch (mouth region) and pixel noise.
Tensor render_variant(int template_id, int detail, int resolution, Rng& rng, double noise = 0.03);

// Dark band across the bottom `fraction` of rows with light block glyphs.
Tensor add_caption_band(const Tensor& img, double fraction, Rng& rng);

struct ToyCorpusConfig {
  int images = 64;
  int templates = 4;
  int resolution = 80;
  double band_fraction = 0.2;
  std::uint64_t seed = 0;
};

// Writes meme_XXXX.png files and captions.tsv into `dir`. Three captions in
// every sixteen are deliberately unusable: too short, too long, or repetitive.
void write_toy_corpus(const std::filesystem::path& dir, const ToyCorpusConfig& config);

struct ColorWordsSet {
  Vocabulary vocab;
  std::vector<DamsmSample> samples;
  std::vector<int> labels;  // colour class per sample
};

// Four colour classes, one caption per class, images are noisy colour fields
// with a random darker blob.
ColorWordsSet color_words(int resolution, int per_class, int max_caption_len, std::uint64_t seed);

struct OverfitSet {
  Vocabulary vocab;
  ModelConfig config;  // vocab_size filled in
  TrainingData data;
  std::vector<DamsmSample> damsm_samples;
  std::vector<Tensor> templates;  // at the final resolution, by cluster id
};

// Two templates with four captioned variants each. The caption names the
// template and the detail colour.
OverfitSet overfit_corpus(ModelConfig config, std::uint64_t seed);

}  // namespace memeface::synthetic
