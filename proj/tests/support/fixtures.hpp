#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "memeface/config.hpp"
#include "memeface/text_encoder.hpp"

namespace memeface::test {

// Geometry small enough for finite differences: D <= 8, R_0 = 8, m = 2.
inline ModelConfig tiny_config(int vocab_size = 12) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embedding_dim = 6;
  c.text_dim = 8;
  c.cond_dim = 4;
  c.noise_dim = 4;
  c.hidden_channels = 8;
  c.disc_channels = 4;
  c.damsm_channels = 4;
  c.stages = 2;
  c.base_resolution = 8;
  c.region_grid = 4;
  c.residual_blocks = 1;
  c.max_caption_len = 6;
  return c;
}

inline Caption caption_of(std::vector<int> tokens) {
  Caption c;
  c.tokens = std::move(tokens);
  c.raw = "synthetic";
  return c;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("memeface_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace memeface::test
