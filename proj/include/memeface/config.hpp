#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace memeface {

enum class NoiseDistribution { Uniform, Gaussian };

// Network geometry shared by the text encoder, generator, discriminators and
// DAMSM. Desk-scale defaults; the 256 px setting is stages=3, base_resolution=64.
struct ModelConfig {
  int vocab_size = 0;
  int embedding_dim = 32;
  int text_dim = 64;         // word feature / sentence vector width, even
  int cond_dim = 32;         // conditioning augmentation output
  int noise_dim = 32;        // z
  int hidden_channels = 32;  // generator feature maps, also the editor width
  int disc_channels = 32;
  int damsm_channels = 32;
  int stages = 3;
  int base_resolution = 16;
  int region_grid = 8;  // DAMSM regions per side
  int residual_blocks = 1;
  int max_caption_len = 12;
  NoiseDistribution noise = NoiseDistribution::Uniform;

  int stage_resolution(int stage) const { return base_resolution << stage; }
  int final_resolution() const { return stage_resolution(stages - 1); }
  // Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace memeface
