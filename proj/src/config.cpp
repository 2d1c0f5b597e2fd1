#include "memeface/config.hpp"

#include <stdexcept>

namespace memeface {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid model config: " + what);
}

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size > 0, "vocab_size must be positive");
  require(embedding_dim > 0, "embedding_dim must be positive");
  require(text_dim > 0 && text_dim % 2 == 0, "text_dim must be positive and even");
  require(cond_dim > 0 && noise_dim > 0, "cond_dim and noise_dim must be positive");
  require(hidden_channels > 0 && disc_channels > 0 && damsm_channels > 0, "channel counts must be positive");
  require(stages >= 1, "stages must be >= 1");
  require(is_power_of_two(base_resolution) && base_resolution >= 4, "base_resolution must be a power of two >= 4");
  require(is_power_of_two(region_grid) && region_grid <= final_resolution(),
          "region_grid must be a power of two no larger than the final resolution");
  require(residual_blocks >= 0, "residual_blocks must be >= 0");
  require(max_caption_len >= 1, "max_caption_len must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"embedding_dim", c.embedding_dim},
                     {"text_dim", c.text_dim},
                     {"cond_dim", c.cond_dim},
                     {"noise_dim", c.noise_dim},
                     {"hidden_channels", c.hidden_channels},
                     {"disc_channels", c.disc_channels},
                     {"damsm_channels", c.damsm_channels},
                     {"stages", c.stages},
                     {"base_resolution", c.base_resolution},
                     {"region_grid", c.region_grid},
                     {"residual_blocks", c.residual_blocks},
                     {"max_caption_len", c.max_caption_len},
                     {"noise", c.noise == NoiseDistribution::Uniform ? "uniform" : "gaussian"}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.embedding_dim = j.value("embedding_dim", d.embedding_dim);
  c.text_dim = j.value("text_dim", d.text_dim);
  c.cond_dim = j.value("cond_dim", d.cond_dim);
  c.noise_dim = j.value("noise_dim", d.noise_dim);
  c.hidden_channels = j.value("hidden_channels", d.hidden_channels);
  c.disc_channels = j.value("disc_channels", d.disc_channels);
  c.damsm_channels = j.value("damsm_channels", d.damsm_channels);
  c.stages = j.value("stages", d.stages);
  c.base_resolution = j.value("base_resolution", d.base_resolution);
  c.region_grid = j.value("region_grid", d.region_grid);
  c.residual_blocks = j.value("residual_blocks", d.residual_blocks);
  c.max_caption_len = j.value("max_caption_len", d.max_caption_len);
  const std::string noise = j.value("noise", std::string("uniform"));
  if (noise == "uniform") {
    c.noise = NoiseDistribution::Uniform;
  } else if (noise == "gaussian") {
    c.noise = NoiseDistribution::Gaussian;
  } else {
    throw std::invalid_argument("unknown noise distribution '" + noise + "'");
  }
}

}  // namespace memeface
