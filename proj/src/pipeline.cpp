#include "memeface/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "memeface/checkpoint.hpp"
#include "memeface/image.hpp"
#include "memeface/text_encoder.hpp"

namespace memeface::pipeline {

namespace {

void emit(const Log& log, const std::string& line) {
  if (log) log(line);
}

bool is_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\v' || cp == U'\f' || cp == 0x3000 ||
         cp == 0xA0;
}

constexpr const char* kStartSymbol = "\x02";

}  // namespace

TsvCaptionSource::TsvCaptionSource(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open caption file " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected image<TAB>caption");
    }
    captions_[line.substr(0, tab)] = line.substr(tab + 1);
  }
}

std::optional<std::string> TsvCaptionSource::caption_for(const std::string& image_name) const {
  auto it = captions_.find(image_name);
  if (it == captions_.end()) return std::nullopt;
  return it->second;
}

std::vector<RawSample> ingest(const std::filesystem::path& image_dir, const CaptionSource& captions, const Log& log) {
  if (!std::filesystem::is_directory(image_dir)) throw std::runtime_error("not a directory: " + image_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(image_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  std::vector<RawSample> out;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    auto caption = captions.caption_for(name);
    if (!caption) {
      emit(log, "ingest: no caption for " + name + ", skipped");
      continue;
    }
    out.push_back({f.string(), *caption, f.stem().string()});
  }
  return out;
}

std::vector<double> PixelGridExtractor::extract(const Tensor& image) const {
  const Tensor thumb = image::resize_area(image, grid_, grid_);
  return thumb.storage();
}

std::vector<double> EncoderFeatureExtractor::extract(const Tensor& image) const {
  const int r = model_.image_encoder.input_resolution();
  NoGradGuard no_grad;
  ImageEncoding enc = model_.image_encoder.encode(constant(image::resize_area(image, r, r)));
  return enc.global.value().storage();
}

std::optional<std::vector<double>> extract_features(const std::filesystem::path& image_path,
                                                    const FeatureExtractor& extractor, const Log& log) {
  Tensor img;
  try {
    img = image::load_png(image_path);
  } catch (const std::exception& e) {
    emit(log, "features: cannot decode " + image_path.filename().string() + " (" + e.what() + "), skipped");
    return std::nullopt;
  }
  return extractor.extract(img);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("squared_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace {

KMeansResult kmeans_once(const Points& points, int k, Rng& rng, int max_iters) {
  const std::size_t n = points.size();
  KMeansResult r;
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  r.centroids.push_back(points[rng.index(n)]);
  while (r.centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points[i], r.centroids.back()));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += nearest[i];
        if (acc > u && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(n);
    }
    r.centroids.push_back(points[pick]);
  }

  r.assignments.assign(n, -1);
  const std::size_t dim = points.front().size();
  auto assign = [&] {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(points[i], r.centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = squared_distance(points[i], r.centroids[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      changed |= r.assignments[i] != best;
      r.assignments[i] = best;
      inertia += best_d;
    }
    r.inertia_history.push_back(inertia);
    r.inertia = inertia;
    return changed;
  };
  auto update = [&] {
    Points sums(static_cast<std::size_t>(k), std::vector<double>(dim, 0.0));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = sums[static_cast<std::size_t>(r.assignments[i])];
      for (std::size_t d = 0; d < dim; ++d) s[d] += points[i][d];
      ++counts[static_cast<std::size_t>(r.assignments[i])];
    }
    for (std::size_t c = 0; c < sums.size(); ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) r.centroids[c][d] = sums[c][d] / counts[c];
    }
  };

  for (r.iterations = 1; r.iterations <= max_iters; ++r.iterations) {
    const bool changed = assign();
    if (!changed) {
      r.converged = true;
      return r;
    }
    update();
  }
  r.iterations = max_iters;
  r.converged = !assign();
  return r;
}

}  // namespace

KMeansResult kmeans(const Points& points, int k, std::uint64_t seed, int max_iters, int restarts) {
  if (k <= 0) throw std::invalid_argument("kmeans: k must be positive, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > points.size()) {
    throw std::invalid_argument("kmeans: k = " + std::to_string(k) + " exceeds the " + std::to_string(points.size()) +
                                " points");
  }
  if (max_iters <= 0 || restarts <= 0) throw std::invalid_argument("kmeans: max_iters and restarts must be positive");
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw std::invalid_argument("kmeans: points have different dimensions");
  }
  Rng rng(seed);
  KMeansResult best;
  for (int attempt = 0; attempt < restarts; ++attempt) {
    KMeansResult r = kmeans_once(points, k, rng, max_iters);
    if (attempt == 0 || r.inertia < best.inertia) best = std::move(r);
  }
  return best;
}

std::vector<int> remove_outliers(std::span<const int> assignments, const Points& points, const Points& centroids,
                                 const OutlierConfig& config, const Log& log) {
  if (assignments.size() != points.size()) throw std::invalid_argument("remove_outliers: assignment count mismatch");
  std::vector<int> out(assignments.begin(), assignments.end());
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    std::vector<std::size_t> members;
    std::vector<double> dist;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (assignments[i] != static_cast<int>(c)) continue;
      members.push_back(i);
      dist.push_back(std::sqrt(squared_distance(points[i], centroids[c])));
    }
    if (members.empty()) continue;
    const double mean = std::accumulate(dist.begin(), dist.end(), 0.0) / static_cast<double>(dist.size());
    double var = 0.0;
    for (double d : dist) var += (d - mean) * (d - mean);
    const double stddev = std::sqrt(var / static_cast<double>(dist.size()));
    // Rounding slack so a zero-variance cluster never loses members.
    const double limit = mean + config.z_threshold * stddev + 1e-12 * std::max(1.0, mean);
    int kept = 0;
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (dist[j] > limit) {
        out[members[j]] = -1;
        emit(log, "outliers: sample " + std::to_string(members[j]) + " dropped from cluster " + std::to_string(c));
      } else {
        ++kept;
      }
    }
    if (kept < config.min_cluster_size) {
      for (std::size_t m : members) out[m] = -1;
      emit(log, "outliers: cluster " + std::to_string(c) + " removed (" + std::to_string(kept) + " members, floor " +
                    std::to_string(config.min_cluster_size) + ")");
    }
  }
  return out;
}

std::vector<std::string> lm_units(std::string_view text) {
  std::vector<std::string> out;
  for (char32_t cp : decode_utf8(text)) {
    if (!is_space(cp)) out.push_back(encode_utf8(cp));
  }
  return out;
}

NgramLanguageModel::NgramLanguageModel(int order, double add_k) : order_(order), add_k_(add_k) {
  if (order < 1) throw std::invalid_argument("language model order must be >= 1");
  if (add_k < 0.0) throw std::invalid_argument("add-k smoothing constant must be >= 0");
}

std::string NgramLanguageModel::context_key(std::span<const std::string> history) const {
  std::string key;
  const std::size_t need = static_cast<std::size_t>(order_ - 1);
  for (std::size_t i = 0; i < need; ++i) {
    // Position i of the context window, counted from the oldest unit.
    const std::ptrdiff_t from_end = static_cast<std::ptrdiff_t>(need - i);
    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(history.size()) - from_end;
    key += idx >= 0 ? history[static_cast<std::size_t>(idx)] : std::string(kStartSymbol);
    key.push_back('\x1f');
  }
  return key;
}

void NgramLanguageModel::train(std::span<const std::string> corpus) {
  vocabulary_.clear();
  counts_.clear();
  context_totals_.clear();
  for (const auto& text : corpus) {
    const auto units = lm_units(text);
    for (std::size_t t = 0; t < units.size(); ++t) {
      vocabulary_.emplace(units[t], 0);
      const std::string key = context_key(std::span(units).first(t));
      counts_[key][units[t]] += 1.0;
      context_totals_[key] += 1.0;
    }
  }
  if (vocabulary_.empty()) throw std::invalid_argument("language model: training corpus has no units");
  trained_ = true;
}

double NgramLanguageModel::log_prob(std::span<const std::string> history, const std::string& unit) const {
  if (!trained_) throw std::logic_error("language model is not trained");
  const std::string key = context_key(history);
  double count = 0.0, total = 0.0;
  if (auto it = context_totals_.find(key); it != context_totals_.end()) {
    total = it->second;
    const auto& row = counts_.at(key);
    if (auto jt = row.find(unit); jt != row.end()) count = jt->second;
  }
  const double v = static_cast<double>(vocabulary_size());
  const double denom = total + add_k_ * v;
  // An unseen context with no smoothing falls back to uniform.
  if (denom == 0.0) return -std::log(v);
  return std::log((count + add_k_) / denom);
}

double perplexity(const LanguageModel& lm, std::string_view text) {
  if (!lm.trained()) throw std::logic_error("perplexity: language model is not trained");
  const auto units = lm_units(text);
  if (units.empty()) throw std::invalid_argument("perplexity: caption has no characters");
  double total = 0.0;
  for (std::size_t t = 0; t < units.size(); ++t) total += lm.log_prob(std::span(units).first(t), units[t]);
  return std::exp(-total / static_cast<double>(units.size()));
}

std::vector<std::string> perplexity_filter(std::span<const std::string> captions, const LanguageModel& lm, double low,
                                           double high) {
  if (!lm.trained()) throw std::logic_error("perplexity_filter: language model is not trained");
  std::vector<std::string> out;
  for (const auto& c : captions) {
    if (lm_units(c).empty()) continue;
    const double p = perplexity(lm, c);
    if (p >= low && p <= high) out.push_back(c);
  }
  return out;
}

bool length_ok(std::string_view caption, int min_len, int max_len) {
  const int n = static_cast<int>(tokenize(caption).size());
  return n > 0 && n >= min_len && n <= max_len;
}

std::vector<std::string> length_filter(std::span<const std::string> captions, int min_len, int max_len) {
  std::vector<std::string> out;
  for (const auto& c : captions) {
    if (length_ok(c, min_len, max_len)) out.push_back(c);
  }
  return out;
}

Tensor crop_caption_region(const Tensor& img, double band_fraction, int resolution) {
  image::require_image(img, "crop_caption_region");
  if (band_fraction < 0.0 || band_fraction >= 1.0) {
    throw std::invalid_argument("crop_caption_region: band fraction must be in [0, 1)");
  }
  if (resolution < 1) throw std::invalid_argument("crop_caption_region: resolution must be positive");
  const int height = img.dim(1);
  const int keep = height - static_cast<int>(std::lround(band_fraction * height));
  if (keep < 16) {
    throw std::invalid_argument("crop_caption_region: only " + std::to_string(keep) +
                                " rows would remain (minimum 16)");
  }
  const Tensor square = image::center_crop_square(image::crop_rows(img, 0, keep));
  return image::resize_area(square, resolution, resolution);
}

std::size_t derive_template(std::span<const std::string> ids, const Points& vectors) {
  if (ids.empty()) throw std::invalid_argument("derive_template: empty cluster");
  if (ids.size() != vectors.size()) throw std::invalid_argument("derive_template: one vector per member required");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::size_t best = order.front();
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t a : order) {
    double sum = 0.0;
    for (std::size_t b : order) sum += std::sqrt(squared_distance(vectors[a], vectors[b]));
    if (sum < best_sum) {
      best_sum = sum;
      best = a;
    }
  }
  return best;
}

void split(DatasetManifest& manifest, double train_fraction, std::uint64_t seed, const Log& log) {
  const std::size_t n = manifest.samples.size();
  if (n < 2) throw std::invalid_argument("split: need at least 2 samples");
  if (train_fraction < 0.0 || train_fraction > 1.0) throw std::invalid_argument("split: fraction must be in [0, 1]");
  const auto target = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[manifest.samples[i].cluster_id].push_back(i);
  for (auto& [cid, idx] : members) {
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return manifest.samples[a].id < manifest.samples[b].id; });
  }

  std::map<int, std::size_t> quota;
  std::size_t forced = 0, rest = 0;
  for (const auto& [cid, idx] : members) {
    if (idx.size() == 1) {
      quota[cid] = 1;
      ++forced;
      emit(log, "split: cluster " + std::to_string(cid) + " has a single sample, assigned to train");
    } else {
      rest += idx.size();
    }
  }
  const std::size_t remaining = target > forced ? target - forced : 0;
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (const auto& [cid, idx] : members) {
    if (idx.size() == 1) continue;
    const double ideal = static_cast<double>(remaining) * static_cast<double>(idx.size()) / static_cast<double>(rest);
    const auto whole = std::min(idx.size(), static_cast<std::size_t>(std::floor(ideal)));
    quota[cid] = whole;
    assigned += whole;
    remainders.emplace_back(ideal - std::floor(ideal), cid);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < remaining && !remainders.empty(); r = (r + 1) % remainders.size()) {
    const int cid = remainders[r].second;
    if (quota[cid] < members[cid].size()) {
      ++quota[cid];
      ++assigned;
    }
  }

  Rng rng(seed);
  for (auto& [cid, idx] : members) {
    rng.shuffle(idx);
    for (std::size_t j = 0; j < idx.size(); ++j) manifest.samples[idx[j]].split = j < quota[cid] ? "train" : "test";
  }
}

void validate_manifest(const DatasetManifest& manifest, const ManifestRules& rules) {
  std::set<int> cluster_ids;
  std::map<int, int> counts;
  for (const auto& c : manifest.clusters) {
    if (!cluster_ids.insert(c.cluster_id).second) {
      throw std::runtime_error("manifest: duplicate cluster " + std::to_string(c.cluster_id));
    }
  }
  std::set<std::string> ids;
  std::size_t train = 0;
  for (const auto& s : manifest.samples) {
    if (!ids.insert(s.id).second) throw std::runtime_error("manifest: duplicate sample id '" + s.id + "'");
    if (!cluster_ids.contains(s.cluster_id)) {
      throw std::runtime_error("manifest: sample '" + s.id + "' refers to unknown cluster " +
                               std::to_string(s.cluster_id));
    }
    if (!length_ok(s.caption, rules.min_len, rules.max_len)) {
      throw std::runtime_error("manifest: caption of '" + s.id + "' is outside [" + std::to_string(rules.min_len) +
                               ", " + std::to_string(rules.max_len) + "] tokens");
    }
    if (rules.train_fraction) {
      if (s.split != "train" && s.split != "test") {
        throw std::runtime_error("manifest: sample '" + s.id + "' has split '" + s.split + "'");
      }
      train += s.split == "train";
    }
    ++counts[s.cluster_id];
  }
  for (const auto& c : manifest.clusters) {
    if (counts[c.cluster_id] != c.member_count) {
      throw std::runtime_error("manifest: cluster " + std::to_string(c.cluster_id) + " declares " +
                               std::to_string(c.member_count) + " members but has " +
                               std::to_string(counts[c.cluster_id]));
    }
  }
  if (rules.train_fraction && !manifest.samples.empty()) {
    const double expected = *rules.train_fraction * static_cast<double>(manifest.samples.size());
    if (std::abs(static_cast<double>(train) - expected) > 1.0 + 1e-9) {
      throw std::runtime_error("manifest: " + std::to_string(train) + " train samples, expected about " +
                               std::to_string(expected));
    }
  }
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string lines;
  for (const auto& s : manifest.samples) {
    nlohmann::json j = {
        {"id", s.id}, {"image", s.image}, {"caption", s.caption}, {"cluster", s.cluster_id}, {"split", s.split}};
    lines += j.dump() + "\n";
  }
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : manifest.clusters) {
    clusters.push_back({{"cluster", c.cluster_id},
                        {"template_image", c.template_image},
                        {"template_sample", c.template_sample},
                        {"members", c.member_count}});
  }
  write_file_atomic(dir / "manifest.jsonl", lines);
  write_file_atomic(dir / "clusters.json", nlohmann::json{{"clusters", clusters}}.dump(2) + "\n");
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  DatasetManifest m;
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.jsonl").string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      m.samples.push_back({j.at("id").get<std::string>(), j.at("image").get<std::string>(),
                           j.at("caption").get<std::string>(), j.at("cluster").get<int>(),
                           j.value("split", std::string())});
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("manifest.jsonl:" + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::ifstream cin(dir / "clusters.json");
  if (!cin) throw std::runtime_error("cannot open " + (dir / "clusters.json").string());
  const auto j = nlohmann::json::parse(cin);
  for (const auto& c : j.at("clusters")) {
    m.clusters.push_back({c.at("cluster").get<int>(), c.at("template_image").get<std::string>(),
                          c.value("template_sample", std::string()), c.at("members").get<int>()});
  }
  return m;
}

namespace {

struct Curated {
  DatasetManifest manifest;
  std::vector<std::pair<std::size_t, std::string>> template_copies;  // (sample index, template image)
};

void save_lm_corpus(const std::filesystem::path& path, const NgramLanguageModel& lm,
                    const std::vector<std::string>& corpus) {
  nlohmann::json j = {{"order", lm.order()}, {"add_k", lm.add_k()}, {"corpus", corpus}};
  write_file_atomic(path, j.dump(1) + "\n");
}

NgramLanguageModel load_lm_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto j = nlohmann::json::parse(in);
  NgramLanguageModel lm(j.at("order").get<int>(), j.at("add_k").get<double>());
  lm.train(j.at("corpus").get<std::vector<std::string>>());
  return lm;
}

// Caption filters, cluster floor, template choice and split over an already
// clustered manifest. Applying it to its own result changes nothing.
Curated curate(DatasetManifest manifest, const std::map<std::string, std::vector<double>>& features,
               const NgramLanguageModel& lm, const PipelineConfig& config, const Log& log) {
  std::vector<ManifestSample> kept;
  for (auto& s : manifest.samples) {
    if (!length_ok(s.caption, config.min_len, config.max_len)) {
      emit(log, "curate: '" + s.id + "' dropped by the length filter");
      continue;
    }
    const double ppl = perplexity(lm, s.caption);
    if (ppl < config.ppl_low || ppl > config.ppl_high) {
      emit(log, "curate: '" + s.id + "' dropped by the perplexity filter");
      continue;
    }
    kept.push_back(std::move(s));
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < kept.size(); ++i) members[kept[i].cluster_id].push_back(i);
  std::set<int> small;
  for (const auto& [cid, idx] : members) {
    if (static_cast<int>(idx.size()) < config.outliers.min_cluster_size) {
      small.insert(cid);
      emit(log, "curate: cluster " + std::to_string(cid) + " below the size floor, removed");
    }
  }
  std::erase_if(kept, [&](const ManifestSample& s) { return small.contains(s.cluster_id); });
  if (kept.size() < 2) throw std::runtime_error("pipeline: fewer than 2 samples survived curation");

  Curated out;
  out.manifest.samples = std::move(kept);
  members.clear();
  for (std::size_t i = 0; i < out.manifest.samples.size(); ++i) {
    members[out.manifest.samples[i].cluster_id].push_back(i);
  }
  for (const auto& [cid, idx] : members) {
    std::vector<std::string> ids;
    Points vectors;
    for (std::size_t i : idx) {
      ids.push_back(out.manifest.samples[i].id);
      vectors.push_back(features.at(out.manifest.samples[i].id));
    }
    const auto& medoid = out.manifest.samples[idx[derive_template(ids, vectors)]];
    char name[48];
    std::snprintf(name, sizeof(name), "templates/cluster_%03d.png", cid);
    out.manifest.clusters.push_back({cid, name, medoid.id, static_cast<int>(idx.size())});
    out.template_copies.emplace_back(static_cast<std::size_t>(&medoid - out.manifest.samples.data()), name);
  }
  validate_manifest(out.manifest, {config.min_len, config.max_len, std::nullopt});
  split(out.manifest, config.train_fraction, config.seed, log);
  validate_manifest(out.manifest, {config.min_len, config.max_len, config.train_fraction});
  return out;
}

using PngCache = std::map<std::string, std::vector<std::uint8_t>>;

// Images come from `pngs` when given (fresh run), otherwise they are already on disk.
void write_outputs(const Curated& curated, const std::filesystem::path& out_dir, const PngCache* pngs) {
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "templates");
  if (pngs != nullptr) {
    for (const auto& s : curated.manifest.samples) write_file_atomic(out_dir / s.image, pngs->at(s.id));
  }
  for (const auto& [index, target] : curated.template_copies) {
    const auto& s = curated.manifest.samples[index];
    write_file_atomic(out_dir / target, pngs != nullptr ? pngs->at(s.id) : read_file_bytes(out_dir / s.image));
  }
  write_manifest(curated.manifest, out_dir);
}

PipelineReport summarize(const DatasetManifest& m, PipelineReport report) {
  report.after_outliers = report.after_outliers == 0 ? m.samples.size() : report.after_outliers;
  report.clusters = m.clusters.size();
  for (const auto& s : m.samples) (s.split == "train" ? report.train : report.test) += 1;
  return report;
}

PipelineReport recurate(const std::filesystem::path& dir, const FeatureExtractor& extractor,
                        const PipelineConfig& config, const std::filesystem::path& out_dir, const Log& log) {
  if (std::filesystem::weakly_canonical(dir) != std::filesystem::weakly_canonical(out_dir)) {
    throw std::invalid_argument("re-curation writes in place; output directory must equal the input directory");
  }
  DatasetManifest manifest = read_manifest(dir);
  const NgramLanguageModel lm = load_lm_corpus(dir / "lm.json");
  std::map<std::string, std::vector<double>> features;
  for (const auto& s : manifest.samples) {
    auto f = extract_features(dir / s.image, extractor, log);
    if (!f) throw std::runtime_error("pipeline: cannot decode " + s.image);
    features[s.id] = std::move(*f);
  }
  PipelineReport report;
  report.ingested = manifest.samples.size();
  manifest.clusters.clear();
  Curated curated = curate(std::move(manifest), features, lm, config, log);
  write_outputs(curated, out_dir, nullptr);
  return summarize(curated.manifest, report);
}

}  // namespace

PipelineReport run_pipeline(const std::filesystem::path& input_dir, const CaptionSource* captions,
                            const FeatureExtractor& extractor, const PipelineConfig& config,
                            const std::filesystem::path& out_dir) {
  std::vector<std::string> log_lines;
  Log log = [&](const std::string& line) { log_lines.push_back(line); };

  if (std::filesystem::exists(input_dir / "manifest.jsonl")) return recurate(input_dir, extractor, config, out_dir, log);
  if (captions == nullptr) throw std::invalid_argument("run_pipeline: raw input needs a caption source");

  PipelineReport report;
  const auto raw = ingest(input_dir, *captions, log);
  report.ingested = raw.size();
  if (raw.empty()) throw std::runtime_error("pipeline: no captioned images in " + input_dir.string());

  std::vector<std::string> corpus;
  for (const auto& r : raw) corpus.push_back(r.caption_text);
  NgramLanguageModel lm(config.lm_order, config.lm_add_k);
  lm.train(corpus);

  std::vector<RawSample> text_ok;
  for (const auto& r : raw) {
    if (!length_ok(r.caption_text, config.min_len, config.max_len)) {
      log("length: '" + r.source_id + "' dropped");
      continue;
    }
    const double ppl = perplexity(lm, r.caption_text);
    if (ppl < config.ppl_low || ppl > config.ppl_high) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.3f", ppl);
      log("perplexity: '" + r.source_id + "' dropped (" + buf + ")");
      continue;
    }
    text_ok.push_back(r);
  }
  report.after_text_filters = text_ok.size();

  std::vector<ManifestSample> samples;
  PngCache pngs;
  std::map<std::string, std::vector<double>> features;
  Points points;
  for (const auto& r : text_ok) {
    Tensor cropped;
    try {
      cropped = crop_caption_region(image::load_png(r.image_path), config.band_fraction, config.resolution);
    } catch (const std::exception& e) {
      log("crop: '" + r.source_id + "' skipped (" + e.what() + ")");
      continue;
    }
    auto png = image::encode_png(cropped);
    const std::string rel = "images/" + r.source_id + ".png";
    // Features come from the stored 8-bit image so a re-run sees the same input.
    auto f = extractor.extract(image::decode_png(png));
    pngs[r.source_id] = std::move(png);
    points.push_back(f);
    features[r.source_id] = std::move(f);
    samples.push_back({r.source_id, rel, r.caption_text, -1, ""});
  }
  report.after_crop = samples.size();
  if (samples.size() < 2) throw std::runtime_error("pipeline: fewer than 2 images survived cropping");

  const int k = std::min<int>(config.k, static_cast<int>(samples.size()));
  const KMeansResult km = kmeans(points, k, config.seed, config.kmeans_max_iters, config.kmeans_restarts);
  report.inertia_history = km.inertia_history;
  log("kmeans: k=" + std::to_string(k) + " iterations=" + std::to_string(km.iterations) +
      (km.converged ? " converged" : " not converged"));
  const auto filtered = remove_outliers(km.assignments, points, km.centroids, config.outliers, log);

  std::map<int, int> renumber;
  for (int a : filtered) {
    if (a >= 0) renumber.emplace(a, 0);
  }
  int next = 0;
  for (auto& [old_id, new_id] : renumber) new_id = next++;
  DatasetManifest manifest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (filtered[i] < 0) continue;
    samples[i].cluster_id = renumber.at(filtered[i]);
    manifest.samples.push_back(samples[i]);
  }
  report.after_outliers = manifest.samples.size();
  if (manifest.samples.empty()) throw std::runtime_error("pipeline: outlier removal dropped every sample");

  Curated curated = curate(std::move(manifest), features, lm, config, log);
  std::filesystem::create_directories(out_dir);
  save_lm_corpus(out_dir / "lm.json", lm, corpus);
  write_outputs(curated, out_dir, &pngs);

  std::string text;
  for (const auto& l : log_lines) text += l + "\n";
  write_file_atomic(out_dir / "pipeline.log", text);
  return summarize(curated.manifest, report);
}

}  // namespace memeface::pipeline
