#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memeface/model.hpp"

namespace memeface::service {

// Standard alphabet with padding.
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Carries the HTTP status the handler should answer with.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(message), status_(status), detail_(std::move(detail)) {}
  int status() const { return status_; }
  nlohmann::json body() const;

 private:
  int status_;
  nlohmann::json detail_;
};

struct CheckpointEntry {
  std::int64_t epoch = 0;
  std::filesystem::path path;
  std::string digest;  // SHA-256 of the file bytes
};

// GAN checkpoints (*.ckpt) in `dir`, ascending by epoch. Files whose header
// cannot be read are skipped. Throws when the directory cannot be listed.
std::vector<CheckpointEntry> list_checkpoints(const std::filesystem::path& dir);

struct ServiceConfig {
  std::filesystem::path checkpoint_dir;
  std::filesystem::path vocab_path;
  std::filesystem::path template_dir;  // holds clusters.json from the curation pipeline
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t cache_size = 4;
  int output_resolution = 0;  // 0 keeps the model's final resolution
  std::optional<int> default_template;
};

struct GenerateRequest {
  std::string text;
  std::optional<int> template_id;
  std::optional<std::uint64_t> seed;
  bool stream = false;
};

// Validates {text, template_id?, seed?, stream?}; throws ServiceError(400).
GenerateRequest parse_generate_request(const nlohmann::json& body);

struct Frame {
  std::int64_t epoch = 0;
  std::string image_b64;
  std::int64_t elapsed_ms = 0;
};

struct GenerateResponse {
  std::vector<Frame> frames;
  std::vector<std::string> log;
  int resolution = 0;
  std::uint64_t seed = 0;
  int template_id = -1;
};

nlohmann::json to_json(const Frame& frame);
nlohmann::json to_json(const GenerateResponse& response);

struct TemplateEntry {
  int id = -1;
  std::filesystem::path image;
  int members = 0;
};

class DemoService {
 public:
  explicit DemoService(ServiceConfig config);

  // {status, loaded_vocab, n_checkpoints}; status is "degraded" when the
  // vocabulary, the templates or every checkpoint is missing.
  nlohmann::json health() const;
  std::vector<CheckpointEntry> checkpoints() const { return list_checkpoints(config_.checkpoint_dir); }
  nlohmann::json templates() const;

  // Throws the ServiceError generate() would raise before producing frames;
  // returns the template id that would be used.
  int check_request(const GenerateRequest& request) const;

  // Called once per log line; `frame` is null for lines without an image.
  using FrameCallback = std::function<void(const Frame* frame, const std::string& log_line)>;

  // Runs the prompt through every checkpoint in epoch order. With a seed the
  // same noise is used for every checkpoint, so repeated requests agree
  // bitwise. Throws ServiceError for 400 / 503 conditions.
  GenerateResponse generate(const GenerateRequest& request, const FrameCallback& on_frame = {});

  const ServiceConfig& config() const { return config_; }

 private:
  std::shared_ptr<const GanModel> model_for(const CheckpointEntry& entry);
  PatternPyramid pyramid_for(int template_id, const ModelConfig& config);

  ServiceConfig config_;
  std::optional<Vocabulary> vocab_;
  std::vector<TemplateEntry> templates_;

  std::mutex cache_mutex_;
  std::list<std::pair<std::string, std::shared_ptr<const GanModel>>> lru_;  // key: path + digest
  std::map<std::string, PatternPyramid> pyramids_;
};

}  // namespace memeface::service
