#include "memeface/damsm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "memeface/ops.hpp"

namespace memeface {

ImageEncoder::ImageEncoder(const ModelConfig& config, Rng& rng)
    : stem_(3, config.damsm_channels, 3, 1, 1, rng),
      region_projection_(config.damsm_channels, config.text_dim, 1, 1, 0, rng),
      global_projection_(config.damsm_channels, config.text_dim, rng),
      resolution_(config.final_resolution()),
      grid_(std::min(config.region_grid, config.final_resolution())),
      text_dim_(config.text_dim) {
  for (int r = resolution_; r > grid_; r /= 2) {
    down_.emplace_back(config.damsm_channels, config.damsm_channels, 3, 2, 1, rng);
  }
}

ImageEncoding ImageEncoder::encode(const Var& image) const {
  if (image.value().rank() != 3 || image.dim(0) != 3 || image.dim(1) != resolution_ || image.dim(2) != resolution_) {
    throw std::invalid_argument("encode_image: expected [3 x " + std::to_string(resolution_) + " x " +
                                std::to_string(resolution_) + "], got " + shape_string(image.shape()));
  }
  Var h = ops::leaky_relu(stem_(image));
  for (const auto& conv : down_) h = ops::leaky_relu(conv(h));
  Var regions = ops::reshape(region_projection_(h), {text_dim_, grid_ * grid_});
  Var global = global_projection_(ops::mean_spatial(h));
  return ImageEncoding{regions, global};
}

ParameterList ImageEncoder::parameters(const std::string& prefix) const {
  ParameterList out;
  stem_.collect(prefix + ".stem", out);
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
  region_projection_.collect(prefix + ".region_projection", out);
  global_projection_.collect(prefix + ".global_projection", out);
  return out;
}

namespace {

constexpr double kNormFloor = 1e-8;

Var norm(const Var& v) {
  return ops::clamp(ops::sqrt(ops::sum(ops::square(v))), kNormFloor,
                    std::numeric_limits<double>::max());
}

}  // namespace

Var cosine_similarity(const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.value().rank() != 1) {
    throw std::invalid_argument("cosine_similarity: need equal rank-1 vectors, got " + shape_string(a.shape()) +
                                " and " + shape_string(b.shape()));
  }
  // sqrt has an infinite slope at 0; route an exact zero vector around it.
  auto safe_norm = [](const Var& v) {
    double sq = 0.0;
    for (double x : v.value().values()) sq += x * x;
    if (sq == 0.0) return constant(Tensor::scalar(kNormFloor));
    return norm(v);
  };
  return ops::div(ops::sum(ops::mul(a, b)), ops::mul(safe_norm(a), safe_norm(b)));
}

Var word_relevance(const Var& regions, const Var& words, double gamma1) {
  if (regions.value().rank() != 2 || words.value().rank() != 2 || regions.dim(0) != words.dim(0)) {
    throw std::invalid_argument("matching_score: encodings differ in width: " + shape_string(regions.shape()) +
                                " vs " + shape_string(words.shape()));
  }
  if (words.dim(1) == 0 || regions.dim(1) == 0) throw std::invalid_argument("matching_score: empty encoding");
  Var similarity = ops::matmul(ops::transpose(words), regions);          // [T, N]
  Var attention = ops::softmax(ops::scale(similarity, gamma1), 1);       // over regions
  Var context = ops::matmul(regions, ops::transpose(attention));         // [D, T]
  std::vector<Var> relevance;
  for (int t = 0; t < words.dim(1); ++t) {
    relevance.push_back(cosine_similarity(ops::column(context, t), ops::column(words, t)));
  }
  return ops::stack_scalars(relevance);
}

Var matching_score(const Var& regions, const Var& words, double gamma1, double gamma2) {
  Var relevance = word_relevance(regions, words, gamma1);
  return ops::scale(ops::logsumexp(ops::scale(relevance, gamma2)), 1.0 / gamma2);
}

Var matching_score(const ImageEncoding& image, const TextEncoding& text, double gamma1, double gamma2) {
  return matching_score(image.regions, text.word_features, gamma1, gamma2);
}

BatchMatchingLoss batch_matching_loss(const Var& scores, double gamma3) {
  if (scores.value().rank() != 2 || scores.dim(0) != scores.dim(1) || scores.dim(0) == 0) {
    throw std::invalid_argument("damsm_loss: need a non-empty square score matrix, got " +
                                shape_string(scores.shape()));
  }
  const int batch = scores.dim(0);
  Var scaled = ops::scale(scores, gamma3);
  Var per_image = ops::log_softmax(scaled, 1);
  Var per_caption = ops::log_softmax(scaled, 0);
  std::vector<Var> terms;
  for (int b = 0; b < batch; ++b) {
    const std::size_t diag = static_cast<std::size_t>(b) * batch + b;
    terms.push_back(ops::element(per_image, diag));
    terms.push_back(ops::element(per_caption, diag));
  }
  BatchMatchingLoss out;
  out.loss = ops::neg(ops::sum(ops::stack_scalars(terms)));
  out.image_to_caption = per_image.value();
  out.caption_to_image = per_caption.value();
  for (double& v : out.image_to_caption.storage()) v = std::exp(v);
  for (double& v : out.caption_to_image.storage()) v = std::exp(v);
  return out;
}

DamsmLoss damsm_loss(std::span<const ImageEncoding> images, std::span<const TextEncoding> captions,
                     const DamsmTemperatures& temps) {
  if (images.empty()) throw std::invalid_argument("damsm_loss: empty batch");
  if (images.size() != captions.size()) {
    throw std::invalid_argument("damsm_loss: " + std::to_string(images.size()) + " images but " +
                                std::to_string(captions.size()) + " captions");
  }
  const int batch = static_cast<int>(images.size());
  std::vector<Var> word_scores, sentence_scores;
  for (int i = 0; i < batch; ++i) {
    for (int j = 0; j < batch; ++j) {
      word_scores.push_back(matching_score(images[i], captions[j], temps.gamma1, temps.gamma2));
      sentence_scores.push_back(cosine_similarity(images[i].global, captions[j].sentence));
    }
  }
  DamsmLoss out;
  out.word = batch_matching_loss(ops::reshape(ops::stack_scalars(word_scores), {batch, batch}), temps.gamma3);
  out.sentence = batch_matching_loss(ops::reshape(ops::stack_scalars(sentence_scores), {batch, batch}), temps.gamma3);
  out.total = ops::add(out.word.loss, out.sentence.loss);
  return out;
}

DamsmModel::DamsmModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  Rng rng(seed);
  text_encoder = TextEncoder(config, rng);
  image_encoder = ImageEncoder(config, rng);
}

DamsmLoss DamsmModel::loss(std::span<const Tensor> images, std::span<const Caption> captions) const {
  std::vector<ImageEncoding> image_enc;
  std::vector<TextEncoding> text_enc;
  for (const auto& img : images) image_enc.push_back(image_encoder.encode(constant(img)));
  for (const auto& cap : captions) text_enc.push_back(text_encoder.encode(cap));
  return damsm_loss(image_enc, text_enc, temps);
}

ParameterList DamsmModel::parameters() const {
  ParameterList out = text_encoder.parameters("text_encoder");
  for (auto& p : image_encoder.parameters("image_encoder")) out.push_back(std::move(p));
  return out;
}

namespace {

double batch_loss_value(const DamsmModel& model, std::span<const DamsmSample> samples,
                        const std::vector<std::size_t>& indices) {
  std::vector<Tensor> images;
  std::vector<Caption> captions;
  for (std::size_t i : indices) {
    images.push_back(samples[i].image);
    captions.push_back(samples[i].caption);
  }
  return model.loss(images, captions).total.item();
}

}  // namespace

double evaluate_damsm_loss(const DamsmModel& model, std::span<const DamsmSample> samples, int batch_size) {
  if (samples.empty()) throw std::invalid_argument("evaluate_damsm_loss: empty dataset");
  NoGradGuard no_grad;
  double total = 0.0;
  int batches = 0;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    total += batch_loss_value(model, samples, idx);
    ++batches;
  }
  return total / batches;
}

DamsmTrainReport pretrain_damsm(DamsmModel& model, std::span<const DamsmSample> samples,
                                const DamsmTrainConfig& config,
                                const std::function<void(int, double)>& on_epoch) {
  if (samples.empty()) throw std::invalid_argument("pretrain_damsm: empty dataset");
  if (config.batch_size < 1 || config.epochs < 0) throw std::invalid_argument("pretrain_damsm: bad configuration");
  DamsmTrainReport report;
  report.initial_loss = evaluate_damsm_loss(model, samples, config.batch_size);

  Rng rng(config.seed);
  Adam optimizer(model.parameters(), config.learning_rate);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      std::vector<Tensor> images;
      std::vector<Caption> captions;
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
        images.push_back(samples[order[k]].image);
        captions.push_back(samples[order[k]].caption);
      }
      optimizer.zero_grad();
      DamsmLoss loss = model.loss(images, captions);
      if (!std::isfinite(loss.total.item())) {
        throw std::runtime_error("pretrain_damsm: non-finite loss at epoch " + std::to_string(epoch));
      }
      backward(loss.total);
      optimizer.step();
      epoch_loss += loss.total.item();
      ++batches;
    }
    report.epoch_losses.push_back(epoch_loss / batches);
    if (on_epoch) on_epoch(epoch, epoch_loss / batches);
  }
  optimizer.zero_grad();
  report.final_loss = evaluate_damsm_loss(model, samples, config.batch_size);
  return report;
}

double r_precision(std::size_t count, std::size_t k, const PairScorer& scorer, Rng& rng,
                   const DistractorFilter& eligible) {
  if (k == 0) throw std::invalid_argument("r_precision: K must be >= 1");
  if (k > count) {
    throw std::invalid_argument("r_precision: K=" + std::to_string(k) + " exceeds N=" + std::to_string(count));
  }
  std::size_t hits = 0;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < count; ++i) {
    pool.clear();
    for (std::size_t j = 0; j < count; ++j) {
      if (j != i && (!eligible || eligible(i, j))) pool.push_back(j);
    }
    if (pool.size() < k - 1) {
      throw std::invalid_argument("r_precision: only " + std::to_string(pool.size()) + " eligible distractors for item " +
                                  std::to_string(i));
    }
    const double own = scorer(i, i);
    bool best = true;
    for (std::size_t d = 0; d + 1 < k; ++d) {
      std::swap(pool[d], pool[d + rng.index(pool.size() - d)]);
      if (scorer(i, pool[d]) >= own) best = false;
    }
    if (best) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

double r_precision(const DamsmModel& model, std::span<const Tensor> images, std::span<const Caption> captions,
                   std::size_t k, std::uint64_t seed) {
  if (images.size() != captions.size()) throw std::invalid_argument("r_precision: images/captions size mismatch");
  NoGradGuard no_grad;
  std::vector<Var> globals, sentences;
  for (const auto& img : images) globals.push_back(model.image_encoder.encode(constant(img)).global);
  for (const auto& cap : captions) sentences.push_back(model.text_encoder.encode(cap).sentence);
  Rng rng(seed);
  return r_precision(
      images.size(), k,
      [&](std::size_t i, std::size_t j) { return cosine_similarity(globals[i], sentences[j]).item(); }, rng,
      [&](std::size_t i, std::size_t j) { return captions[j].tokens != captions[i].tokens; });
}

}  // namespace memeface
