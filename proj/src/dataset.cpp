#include "memeface/dataset.hpp"

#include <stdexcept>

#include "memeface/image.hpp"

namespace memeface {

namespace {

Tensor load_square(const std::filesystem::path& path, int resolution) {
  Tensor img = image::load_png(path);
  if (img.dim(1) != img.dim(2)) img = image::center_crop_square(img);
  if (img.dim(1) != resolution) img = image::resize_area(img, resolution, resolution);
  return img;
}

}  // namespace

CuratedDataset load_curated(const std::filesystem::path& dir, ModelConfig& config, const std::string& split,
                            const Vocabulary* vocab) {
  if (split != "train" && split != "test" && split != "all") throw std::invalid_argument("unknown split " + split);
  CuratedDataset out;
  out.manifest = pipeline::read_manifest(dir);
  if (vocab) {
    out.vocab = *vocab;
  } else {
    std::vector<std::string> corpus;
    for (const auto& s : out.manifest.samples) {
      if (s.split == "train") corpus.push_back(s.caption);
    }
    if (corpus.empty()) throw std::runtime_error(dir.string() + ": no train samples");
    out.vocab = Vocabulary::build(corpus);
  }
  config.vocab_size = out.vocab.size();
  config.validate();

  const int r = config.final_resolution();
  for (const auto& c : out.manifest.clusters) {
    const auto path = dir / c.template_image;
    out.data.patterns[c.cluster_id] =
        build_pattern_pyramid(load_square(path, r), config.stages, config.base_resolution, c.cluster_id, path.string());
  }
  for (const auto& s : out.manifest.samples) {
    if (split != "all" && s.split != split) continue;
    Tensor img = load_square(dir / s.image, r);
    Caption caption;
    try {
      caption = make_caption(out.vocab, s.caption, config.max_caption_len);
    } catch (const std::invalid_argument&) {
      continue;  // caption tokenizes to nothing
    }
    out.damsm_samples.push_back({img, caption});
    out.data.examples.push_back(make_training_example(img, std::move(caption), s.cluster_id, config));
  }
  if (out.data.examples.empty()) throw std::runtime_error(dir.string() + ": no usable samples in split " + split);
  return out;
}

}  // namespace memeface
