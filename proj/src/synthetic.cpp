#include "memeface/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "memeface/image.hpp"

namespace memeface::synthetic {

namespace {

struct Rgb {
  double r, g, b;
};

constexpr std::array<Rgb, 6> kBackgrounds{{
    {0.90, 0.88, 0.80},
    {-0.70, -0.60, -0.45},
    {0.55, 0.80, 0.90},
    {-0.45, -0.75, -0.40},
    {0.90, 0.70, 0.45},
    {-0.30, -0.55, -0.80},
}};

constexpr std::array<Rgb, 4> kDetails{{
    {0.95, -0.85, -0.85},  // red
    {-0.85, 0.90, -0.80},  // green
    {-0.85, -0.70, 0.95},  // blue
    {0.95, 0.90, -0.90},   // yellow
}};

constexpr std::array<const char*, 4> kDetailWords{"red", "green", "blue", "yellow"};

void put(Tensor& img, int y, int x, const Rgb& c) {
  img.at(0, y, x) = c.r;
  img.at(1, y, x) = c.g;
  img.at(2, y, x) = c.b;
}

double sq(double v) { return v * v; }

}  // namespace

Tensor render_template(int t, int resolution) {
  if (t < 0) throw std::invalid_argument("render_template: negative template id");
  if (resolution < 4) throw std::invalid_argument("render_template: resolution must be at least 4");
  const Rgb bg = kBackgrounds[static_cast<std::size_t>(t) % kBackgrounds.size()];
  const bool light_face = t % 2 == 1;
  const Rgb face = light_face ? Rgb{0.88, 0.86, 0.80} : Rgb{-0.85, -0.85, -0.80};
  const double radius = 0.30 + 0.04 * ((t / 2) % 3);
  const double cx = 0.5 + 0.06 * ((t / 6) % 3 - 1);
  const double cy = 0.46;
  const bool stripes = (t / 2) % 2 == 1;
  const double eye_dx = 0.11 + 0.02 * (t % 3);

  Tensor img(Shape{3, resolution, resolution});
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const double u = (x + 0.5) / resolution, v = (y + 0.5) / resolution;
      Rgb c = bg;
      if (stripes) {
        const double s = 0.15 * std::sin(2.0 * std::numbers::pi * 6.0 * u);
        c = {c.r + s, c.g + s, c.b + s};
      }
      if (sq(u - cx) + sq(v - cy) < sq(radius)) c = face;
      for (double side : {-1.0, 1.0}) {
        if (sq(u - (cx + side * eye_dx)) + sq(v - (cy - 0.06)) < sq(0.055)) c = light_face ? Rgb{-0.9, -0.9, -0.9} : bg;
      }
      put(img, y, x, {std::clamp(c.r, -1.0, 1.0), std::clamp(c.g, -1.0, 1.0), std::clamp(c.b, -1.0, 1.0)});
    }
  }
  return img;
}

Tensor render_variant(int t, int detail, int resolution, Rng& rng, double noise) {
  Tensor img = render_template(t, resolution);
  const Rgb patch = kDetails[static_cast<std::size_t>(detail) % kDetails.size()];
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const double u = (x + 0.5) / resolution, v = (y + 0.5) / resolution;
      if (v > 0.58 && v < 0.70 && u > 0.36 && u < 0.64) put(img, y, x, patch);
    }
  }
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i] + noise * rng.normal(), -1.0, 1.0);
  return img;
}

Tensor add_caption_band(const Tensor& src, double fraction, Rng& rng) {
  image::require_image(src, "add_caption_band");
  Tensor img = src;
  const int h = img.dim(1), w = img.dim(2);
  const int top = h - static_cast<int>(std::lround(fraction * h));
  const int glyph = std::max(2, w / 16);
  const int band = h - top;
  for (int y = top; y < h; ++y) {
    for (int x = 0; x < w; ++x) put(img, y, x, {-0.9, -0.9, -0.9});
  }
  for (int x0 = glyph; x0 + glyph < w - glyph; x0 += glyph + glyph / 2) {
    if (rng.uniform() < 0.25) continue;
    for (int y = top + band / 5; y < h - band / 5; ++y) {
      for (int x = x0; x < x0 + glyph; ++x) {
        if (rng.uniform() < 0.8) put(img, y, x, {0.95, 0.95, 0.95});
      }
    }
  }
  return img;
}

void write_toy_corpus(const std::filesystem::path& dir, const ToyCorpusConfig& config) {
  if (config.images <= 0 || config.templates <= 0) throw std::invalid_argument("toy corpus: counts must be positive");
  static const std::array<const char*, 6> subjects{"熊猫头", "蘑菇头", "金馆长", "小黄脸", "狗头", "猫猫"};
  static const std::array<const char*, 16> words{"今天", "不想", "上班", "好累", "呀", "我", "太难了", "你",
                                                 "在说", "什么", "真的", "可以", "吃饭", "睡觉", "开心", "算了"};
  std::filesystem::create_directories(dir);
  Rng rng(config.seed);
  std::string tsv;
  for (int i = 0; i < config.images; ++i) {
    const int t = i % config.templates;
    Tensor img = render_variant(t, static_cast<int>(rng.index(4)), config.resolution, rng);
    img = add_caption_band(img, config.band_fraction, rng);
    char name[32];
    std::snprintf(name, sizeof(name), "meme_%04d.png", i);
    image::save_png(img, dir / name);

    std::string caption;
    switch (i % 16) {
      case 3:
        caption = "哈哈";
        break;
      case 9:
        caption = "我今天真的真的真的不想去上班了";
        break;
      case 13:
        caption = "哈哈哈哈哈哈";
        break;
      default: {
        caption = subjects[static_cast<std::size_t>(t) % subjects.size()];
        const int n = 1 + static_cast<int>(rng.index(3));
        for (int k = 0; k < n; ++k) caption += words[rng.index(words.size())];
      }
    }
    tsv += std::string(name) + "\t" + caption + "\n";
  }
  std::ofstream out(dir / "captions.tsv", std::ios::binary);
  out << tsv;
  if (!out) throw std::runtime_error("cannot write " + (dir / "captions.tsv").string());
}

ColorWordsSet color_words(int resolution, int per_class, int max_caption_len, std::uint64_t seed) {
  if (per_class <= 0) throw std::invalid_argument("color_words: per_class must be positive");
  std::vector<std::string> captions;
  for (const char* w : kDetailWords) captions.push_back(std::string("a ") + w + " face");
  ColorWordsSet set;
  set.vocab = Vocabulary::build(captions);
  Rng rng(seed);
  for (int k = 0; k < per_class; ++k) {
    for (std::size_t c = 0; c < kDetails.size(); ++c) {
      const Rgb col = kDetails[c];
      Tensor img(Shape{3, resolution, resolution});
      const double bx = rng.uniform(0.25, 0.75), by = rng.uniform(0.25, 0.75);
      for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
          const double u = (x + 0.5) / resolution, v = (y + 0.5) / resolution;
          const double f = sq(u - bx) + sq(v - by) < sq(0.2) ? 0.5 : 1.0;
          put(img, y, x, {col.r * f, col.g * f, col.b * f});
        }
      }
      for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i] + 0.1 * rng.normal(), -1.0, 1.0);
      set.samples.push_back({std::move(img), make_caption(set.vocab, captions[c], max_caption_len)});
      set.labels.push_back(static_cast<int>(c));
    }
  }
  return set;
}

OverfitSet overfit_corpus(ModelConfig config, std::uint64_t seed) {
  static const std::array<const char*, 2> names{"panda", "mushroom"};
  std::vector<std::string> captions;
  for (const char* n : names) {
    for (const char* w : kDetailWords) captions.push_back(std::string(n) + " face with " + w + " mouth");
  }
  OverfitSet set;
  set.vocab = Vocabulary::build(captions);
  config.vocab_size = set.vocab.size();
  config.validate();
  set.config = config;
  const int r = config.final_resolution();
  Rng rng(seed);
  for (int t = 0; t < 2; ++t) {
    Tensor tmpl = render_template(t, r);
    set.data.patterns[t] = build_pattern_pyramid(tmpl, config.stages, config.base_resolution, t);
    set.templates.push_back(std::move(tmpl));
  }
  for (int t = 0; t < 2; ++t) {
    for (int d = 0; d < 4; ++d) {
      Tensor img = render_variant(t, d, r, rng, 0.02);
      Caption cap = make_caption(set.vocab, captions[static_cast<std::size_t>(t * 4 + d)], config.max_caption_len);
      set.damsm_samples.push_back({img, cap});
      set.data.examples.push_back(make_training_example(img, std::move(cap), t, config));
    }
  }
  return set;
}

}  // namespace memeface::synthetic
