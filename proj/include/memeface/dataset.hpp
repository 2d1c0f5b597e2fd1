#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "memeface/damsm.hpp"
#include "memeface/pipeline.hpp"
#include "memeface/trainer.hpp"

namespace memeface {

// A curated directory (the data pipeline's output) in model-ready form.
struct CuratedDataset {
  pipeline::DatasetManifest manifest;
  Vocabulary vocab;
  TrainingData data;                       // samples of the requested split
  std::vector<DamsmSample> damsm_samples;  // same samples, final resolution
};

// Reads manifest.jsonl / clusters.json under `dir`. With an empty `vocab` the
// vocabulary is built from the train-split captions and `config.vocab_size`
// is set from it. `split` is "train", "test" or "all".
CuratedDataset load_curated(const std::filesystem::path& dir, ModelConfig& config, const std::string& split = "train",
                            const Vocabulary* vocab = nullptr);

}  // namespace memeface
