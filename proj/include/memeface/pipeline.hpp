#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memeface/damsm.hpp"
#include "memeface/tensor.hpp"

// Corpus curation: caption ingestion, clustering into template families,
// outlier removal, caption filters, caption-band cropping, template choice and
// the train/test split.
namespace memeface::pipeline {

using Log = std::function<void(const std::string&)>;

struct RawSample {
  std::string image_path;  // absolute or relative to the working directory
  std::string caption_text;
  std::string source_id;
};

// Where captions come from. The real system used an OCR engine; the stub
// below reads them from a sidecar file.
class CaptionSource {
 public:
  virtual ~CaptionSource() = default;
  virtual std::optional<std::string> caption_for(const std::string& image_name) const = 0;
};

// Lines of "image_name<TAB>caption", UTF-8. Blank lines and lines starting
// with '#' are skipped.
class TsvCaptionSource : public CaptionSource {
 public:
  explicit TsvCaptionSource(const std::filesystem::path& path);
  std::optional<std::string> caption_for(const std::string& image_name) const override;
  std::size_t size() const { return captions_.size(); }

 private:
  std::map<std::string, std::string> captions_;
};

// Every *.png directly inside `image_dir`, in byte order of the file name,
// paired with its caption. Images without a caption are skipped and logged.
std::vector<RawSample> ingest(const std::filesystem::path& image_dir, const CaptionSource& captions,
                              const Log& log = {});

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual int dimension() const = 0;
  virtual std::vector<double> extract(const Tensor& image) const = 0;
};

// Area-downscaled g x g thumbnail, flattened.
class PixelGridExtractor : public FeatureExtractor {
 public:
  explicit PixelGridExtractor(int grid = 8) : grid_(grid) {}
  std::string name() const override { return "pixel_grid_" + std::to_string(grid_); }
  int dimension() const override { return 3 * grid_ * grid_; }
  std::vector<double> extract(const Tensor& image) const override;

 private:
  int grid_;
};

// Global feature of a trained DAMSM image encoder.
class EncoderFeatureExtractor : public FeatureExtractor {
 public:
  explicit EncoderFeatureExtractor(DamsmModel model) : model_(std::move(model)) {}
  std::string name() const override { return "damsm_image_encoder"; }
  int dimension() const override { return model_.config.text_dim; }
  std::vector<double> extract(const Tensor& image) const override;

 private:
  DamsmModel model_;
};

// nullopt (and a log line) when the file cannot be decoded.
std::optional<std::vector<double>> extract_features(const std::filesystem::path& image_path,
                                                    const FeatureExtractor& extractor, const Log& log = {});

using Points = std::vector<std::vector<double>>;

struct KMeansResult {
  std::vector<int> assignments;
  Points centroids;
  std::vector<double> inertia_history;  // after every assignment step
  double inertia = 0.0;
  int iterations = 0;
  bool converged = false;
};

double squared_distance(std::span<const double> a, std::span<const double> b);

// k-means++ seeding followed by Lloyd iterations until the assignments stop
// changing or max_iters is reached. An emptied cluster keeps its centroid.
// With restarts > 1 the lowest-inertia run is returned.
KMeansResult kmeans(const Points& points, int k, std::uint64_t seed, int max_iters = 100, int restarts = 32);

struct OutlierConfig {
  double z_threshold = 2.0;
  int min_cluster_size = 3;
};

// Returns the assignments with dropped samples set to -1: first members whose
// centroid distance exceeds mean + z * stddev of their cluster, then every
// member of a cluster left below the size floor.
std::vector<int> remove_outliers(std::span<const int> assignments, const Points& points, const Points& centroids,
                                 const OutlierConfig& config, const Log& log = {});

// Units of the caption language model: code points with whitespace removed.
std::vector<std::string> lm_units(std::string_view text);

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual bool trained() const = 0;
  // log p(unit | up to order-1 preceding units)
  virtual double log_prob(std::span<const std::string> history, const std::string& unit) const = 0;
};

// Character n-gram model with add-k smoothing over the training units plus one
// unknown slot. Contexts are padded with a start symbol; there is no end symbol.
class NgramLanguageModel : public LanguageModel {
 public:
  explicit NgramLanguageModel(int order = 3, double add_k = 0.1);
  void train(std::span<const std::string> corpus);
  bool trained() const override { return trained_; }
  double log_prob(std::span<const std::string> history, const std::string& unit) const override;
  int order() const { return order_; }
  double add_k() const { return add_k_; }
  std::size_t vocabulary_size() const { return vocabulary_.size() + 1; }

 private:
  std::string context_key(std::span<const std::string> history) const;

  int order_;
  double add_k_;
  bool trained_ = false;
  std::map<std::string, int> vocabulary_;
  std::map<std::string, std::map<std::string, double>> counts_;
  std::map<std::string, double> context_totals_;
};

// exp(-(1/N) sum log p(unit | context)). Throws on an untrained model or a
// caption with no units.
double perplexity(const LanguageModel& lm, std::string_view text);

// Captions kept when low <= perplexity <= high, in input order.
std::vector<std::string> perplexity_filter(std::span<const std::string> captions, const LanguageModel& lm,
                                           double low, double high);

// Token count under the project tokenizer, inclusive bounds.
bool length_ok(std::string_view caption, int min_len, int max_len);
std::vector<std::string> length_filter(std::span<const std::string> captions, int min_len = 3, int max_len = 12);

// Drops the bottom `band_fraction` of rows, centre-crops to a square and area
// resizes to `resolution`. Throws when fewer than 16 rows would remain.
Tensor crop_caption_region(const Tensor& image, double band_fraction, int resolution);

// Member minimizing the summed feature distance to the others. Ties go to the
// smallest id, and distances are summed in id order, so the result does not
// depend on the order of `ids`.
std::size_t derive_template(std::span<const std::string> ids, const Points& vectors);

struct ManifestSample {
  std::string id;
  std::string image;  // relative to the manifest directory
  std::string caption;
  int cluster_id = -1;
  std::string split;  // "train" or "test"

  friend bool operator==(const ManifestSample&, const ManifestSample&) = default;
};

struct ClusterInfo {
  int cluster_id = -1;
  std::string template_image;  // relative to the manifest directory
  std::string template_sample;
  int member_count = 0;

  friend bool operator==(const ClusterInfo&, const ClusterInfo&) = default;
};

struct DatasetManifest {
  std::vector<ManifestSample> samples;
  std::vector<ClusterInfo> clusters;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Tags samples per cluster: train total is floor(fraction * N); clusters get
// their share by largest remainder after single-member clusters are sent to
// train. Within a cluster, members are shuffled from id order with `seed`.
void split(DatasetManifest& manifest, double train_fraction, std::uint64_t seed, const Log& log = {});

struct ManifestRules {
  int min_len = 3;
  int max_len = 12;
  std::optional<double> train_fraction;  // checked to within one sample when set
};

// Throws std::runtime_error describing the first violation.
void validate_manifest(const DatasetManifest& manifest, const ManifestRules& rules);

// manifest.jsonl (one sample per line) and clusters.json, written atomically.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

struct PipelineConfig {
  int k = 40;
  int kmeans_max_iters = 100;
  int kmeans_restarts = 32;
  OutlierConfig outliers;
  int lm_order = 3;
  double lm_add_k = 0.1;
  double ppl_low = 2.0;
  double ppl_high = 500.0;
  int min_len = 3;
  int max_len = 12;
  double band_fraction = 0.2;
  int resolution = 64;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
};

struct PipelineReport {
  std::size_t ingested = 0;
  std::size_t after_text_filters = 0;
  std::size_t after_crop = 0;
  std::size_t after_outliers = 0;
  std::size_t clusters = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  std::vector<double> inertia_history;
};

// Full run from raw images plus captions. Writes images/, templates/,
// manifest.jsonl, clusters.json, lm.json and pipeline.log under `out_dir`.
// When `input_dir` already holds a manifest.jsonl, the run re-curates that
// manifest instead (filters, templates, split) and leaves it unchanged if it
// is already the pipeline's own output.
PipelineReport run_pipeline(const std::filesystem::path& input_dir, const CaptionSource* captions,
                            const FeatureExtractor& extractor, const PipelineConfig& config,
                            const std::filesystem::path& out_dir);

}  // namespace memeface::pipeline
