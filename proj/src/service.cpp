#include "memeface/service.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <fstream>
#include <random>

#include "memeface/image.hpp"

namespace memeface::service {

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  if (bytes.empty()) return out;
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64: length is not a multiple of 4");
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool alnum = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    const bool pad_ok = c == '=' && i + 2 >= text.size() && (i + 1 == text.size() || text[i + 1] == '=');
    if (!alnum && c != '+' && c != '/' && !pad_ok) {
      throw std::invalid_argument("base64: invalid character at offset " + std::to_string(i));
    }
  }
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  if (text.empty()) return out;
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("base64: malformed input");
  std::size_t padding = 0;
  if (text.back() == '=') ++padding;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

nlohmann::json ServiceError::body() const {
  nlohmann::json j = detail_;
  j["error"] = what();
  return j;
}

std::vector<CheckpointEntry> list_checkpoints(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::directory_iterator it(dir, ec);
  if (ec) throw std::runtime_error("cannot list checkpoint directory " + dir.string() + ": " + ec.message());
  std::vector<CheckpointEntry> out;
  for (const auto& entry : it) {
    if (!entry.is_regular_file() || entry.path().extension() != ".ckpt") continue;
    try {
      const auto header = read_checkpoint_header(entry.path());
      if (header.kind != "gan") continue;
      out.push_back({header.epoch, entry.path(), file_sha256(entry.path())});
    } catch (const std::exception&) {
      continue;
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.epoch != b.epoch ? a.epoch < b.epoch : a.path.filename() < b.path.filename();
  });
  return out;
}

namespace {

std::string trim(std::string_view s) {
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_ws(s[b])) ++b;
  while (e > b && is_ws(s[e - 1])) --e;
  // Ideographic space (U+3000) is common in pasted CJK text.
  static constexpr std::string_view kIdeographic = "\xE3\x80\x80";
  std::string out(s.substr(b, e - b));
  while (out.starts_with(kIdeographic)) out.erase(0, kIdeographic.size());
  while (out.ends_with(kIdeographic)) out.erase(out.size() - kIdeographic.size());
  return out;
}

std::string short_digest(const std::string& d) { return d.substr(0, 12); }

}  // namespace

GenerateRequest parse_generate_request(const nlohmann::json& body) {
  if (!body.is_object()) throw ServiceError(400, "request body must be a JSON object");
  GenerateRequest r;
  if (!body.contains("text") || !body.at("text").is_string()) throw ServiceError(400, "field 'text' (string) is required");
  r.text = trim(body.at("text").get<std::string>());
  if (r.text.empty()) throw ServiceError(400, "empty text");
  if (decode_utf8(r.text).size() > 200) throw ServiceError(400, "text longer than 200 characters");
  if (body.contains("template_id") && !body.at("template_id").is_null()) {
    if (!body.at("template_id").is_number_integer()) throw ServiceError(400, "template_id must be an integer");
    r.template_id = body.at("template_id").get<int>();
  }
  if (body.contains("seed") && !body.at("seed").is_null()) {
    if (!body.at("seed").is_number_integer() || body.at("seed").get<std::int64_t>() < 0) {
      throw ServiceError(400, "seed must be a non-negative integer");
    }
    r.seed = body.at("seed").get<std::uint64_t>();
  }
  if (body.contains("stream")) {
    if (!body.at("stream").is_boolean()) throw ServiceError(400, "stream must be a boolean");
    r.stream = body.at("stream").get<bool>();
  }
  return r;
}

nlohmann::json to_json(const Frame& f) {
  return {{"epoch", f.epoch}, {"image_b64", f.image_b64}, {"elapsed_ms", f.elapsed_ms}};
}

nlohmann::json to_json(const GenerateResponse& r) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : r.frames) frames.push_back(to_json(f));
  return {{"frames", frames},
          {"log", r.log},
          {"resolution", r.resolution},
          {"seed", r.seed},
          {"template_id", r.template_id}};
}

DemoService::DemoService(ServiceConfig config) : config_(std::move(config)) {
  if (config_.cache_size == 0) throw std::invalid_argument("cache size must be at least 1");
  if (!config_.vocab_path.empty() && std::filesystem::exists(config_.vocab_path)) {
    vocab_ = Vocabulary::load(config_.vocab_path);
  }
  const auto clusters = config_.template_dir / "clusters.json";
  if (!config_.template_dir.empty() && std::filesystem::exists(clusters)) {
    std::ifstream in(clusters);
    const auto j = nlohmann::json::parse(in);
    for (const auto& c : j.at("clusters")) {
      templates_.push_back({c.at("cluster").get<int>(), config_.template_dir / c.at("template_image").get<std::string>(),
                            c.value("members", 0)});
    }
    std::sort(templates_.begin(), templates_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  }
}

nlohmann::json DemoService::health() const {
  std::size_t n = 0;
  bool listable = true;
  try {
    n = list_checkpoints(config_.checkpoint_dir).size();
  } catch (const std::exception&) {
    listable = false;
  }
  const bool ok = vocab_.has_value() && !templates_.empty() && listable && n > 0;
  return {{"status", ok ? "ok" : "degraded"},
          {"loaded_vocab", vocab_.has_value()},
          {"n_checkpoints", n},
          {"n_templates", templates_.size()}};
}

nlohmann::json DemoService::templates() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : templates_) {
    nlohmann::json j = {{"id", t.id}, {"members", t.members}};
    try {
      Tensor img = image::load_png(t.image);
      if (img.dim(1) > 64 || img.dim(2) > 64) img = image::resize_area(img, 64, 64);
      j["thumbnail_b64"] = base64_encode(image::encode_png(img));
    } catch (const std::exception& e) {
      j["thumbnail_b64"] = nullptr;
      j["error"] = e.what();
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::shared_ptr<const GanModel> DemoService::model_for(const CheckpointEntry& entry) {
  const std::string key = entry.path.string() + "#" + entry.digest;
  {
    std::lock_guard lock(cache_mutex_);
    for (auto it = lru_.begin(); it != lru_.end(); ++it) {
      if (it->first == key) {
        lru_.splice(lru_.begin(), lru_, it);
        return lru_.front().second;
      }
    }
  }
  // Loaded outside the lock so a slow read does not block cache hits.
  auto model = std::make_shared<const GanModel>(GanModel::from_checkpoint(load_checkpoint(entry.path)));
  std::lock_guard lock(cache_mutex_);
  lru_.emplace_front(key, model);
  while (lru_.size() > config_.cache_size) lru_.pop_back();
  return model;
}

PatternPyramid DemoService::pyramid_for(int template_id, const ModelConfig& config) {
  const std::string key = std::to_string(template_id) + "/" + std::to_string(config.stages) + "/" +
                          std::to_string(config.base_resolution);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = pyramids_.find(key); it != pyramids_.end()) return it->second;
  }
  auto t = std::find_if(templates_.begin(), templates_.end(), [&](const auto& e) { return e.id == template_id; });
  Tensor img = image::load_png(t->image);
  const int top = config.final_resolution();
  if (img.dim(1) != img.dim(2) || img.dim(1) < top) img = image::resize_area(img, top, top);
  PatternPyramid p = build_pattern_pyramid(img, config.stages, config.base_resolution, template_id, t->image.string());
  std::lock_guard lock(cache_mutex_);
  pyramids_.emplace(key, p);
  return p;
}

int DemoService::check_request(const GenerateRequest& request) const {
  if (trim(request.text).empty()) throw ServiceError(400, "empty text");
  if (templates_.empty()) throw ServiceError(503, "no templates configured");
  const int template_id = request.template_id.value_or(config_.default_template.value_or(templates_.front().id));
  if (std::none_of(templates_.begin(), templates_.end(), [&](const auto& t) { return t.id == template_id; })) {
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& t : templates_) ids.push_back(t.id);
    throw ServiceError(400, "unknown template_id " + std::to_string(template_id), {{"valid_template_ids", ids}});
  }
  if (!vocab_) throw ServiceError(503, "vocabulary not loaded");
  std::vector<CheckpointEntry> entries;
  try {
    entries = list_checkpoints(config_.checkpoint_dir);
  } catch (const std::exception& e) {
    throw ServiceError(503, e.what());
  }
  if (entries.empty()) throw ServiceError(503, "no checkpoints available");
  return template_id;
}

GenerateResponse DemoService::generate(const GenerateRequest& request, const FrameCallback& on_frame) {
  const int template_id = check_request(request);
  const std::string text = trim(request.text);
  std::vector<CheckpointEntry> entries;
  try {
    entries = list_checkpoints(config_.checkpoint_dir);
  } catch (const std::exception& e) {
    throw ServiceError(503, e.what());
  }
  if (entries.empty()) throw ServiceError(503, "no checkpoints available");

  GenerateResponse response;
  response.template_id = template_id;
  response.seed = request.seed ? *request.seed : std::random_device{}() * 0x100000000ULL + std::random_device{}();
  response.log.push_back("seed " + std::to_string(response.seed) + (request.seed ? " (from request)" : " (drawn)") +
                         ", template " + std::to_string(template_id) + ", " + std::to_string(entries.size()) +
                         " checkpoints");
  if (on_frame) on_frame(nullptr, response.log.back());

  for (const auto& entry : entries) {
    const auto start = std::chrono::steady_clock::now();
    std::shared_ptr<const GanModel> model;
    try {
      model = model_for(entry);
    } catch (const std::exception& e) {
      throw ServiceError(503, "cannot load " + entry.path.filename().string() + ": " + e.what());
    }
    const ModelConfig& mc = model->config;
    if (mc.vocab_size != vocab_->size()) {
      throw ServiceError(503, "vocabulary has " + std::to_string(vocab_->size()) + " tokens but " +
                                  entry.path.filename().string() + " expects " + std::to_string(mc.vocab_size));
    }
    Caption caption;
    try {
      caption = make_caption(*vocab_, text, mc.max_caption_len);
    } catch (const std::invalid_argument& e) {
      throw ServiceError(400, e.what());
    }
    const PatternPyramid pyramid = pyramid_for(template_id, mc);
    Tensor img;
    {
      NoGradGuard no_grad;
      Rng rng(response.seed);
      img = model->generate(caption, pyramid, rng).final_image().value();
    }
    int resolution = mc.final_resolution();
    if (config_.output_resolution > resolution) {
      img = image::resize_nearest(img, config_.output_resolution, config_.output_resolution);
      resolution = config_.output_resolution;
    }
    response.resolution = resolution;
    Frame frame;
    frame.epoch = entry.epoch;
    frame.image_b64 = base64_encode(image::encode_png(img));
    frame.elapsed_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    response.log.push_back("epoch " + std::to_string(entry.epoch) + ": " + entry.path.filename().string() +
                           " sha256 " + short_digest(entry.digest) + ", " + std::to_string(frame.elapsed_ms) + " ms");
    if (on_frame) on_frame(&frame, response.log.back());
    response.frames.push_back(std::move(frame));
  }
  return response;
}

}  // namespace memeface::service
