#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memeface/config.hpp"
#include "memeface/layers.hpp"

namespace memeface {

// UTF-8 code points of `text`. Malformed bytes decode to U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view text);
std::string encode_utf8(char32_t cp);

// CJK ideographs and full-width punctuation become one token each, runs of
// other non-space characters become one lower-cased word, and ASCII
// punctuation is split off as its own token.
std::vector<std::string> tokenize(std::string_view text);

// Token table; id 0 is reserved for unknown tokens. On disk: one token per
// line, line index = id, UTF-8.
class Vocabulary {
 public:
  static constexpr int kUnknownId = 0;
  static constexpr std::string_view kUnknownToken = "<unk>";

  Vocabulary();
  // Tokens ordered by descending frequency, ties by byte order.
  static Vocabulary build(std::span<const std::string> corpus, int min_count = 1);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::vector<int> encode(std::string_view text) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct Caption {
  std::vector<int> tokens;
  std::string raw;

  int length() const { return static_cast<int>(tokens.size()); }
};

// Tokenizes and truncates to max_len. Throws std::invalid_argument("empty caption")
// when no tokens remain.
Caption make_caption(const Vocabulary& vocab, std::string_view text, int max_len);
void validate_caption(const Caption& caption, int vocab_size, int max_len);

struct TextEncoding {
  Var word_features;  // [text_dim, T]
  Var sentence;       // [text_dim]
};

// Embedding followed by a bidirectional LSTM. Word features are the per-step
// concatenation of both directions; the sentence vector concatenates the two
// final states.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const ModelConfig& config, Rng& rng);

  TextEncoding encode(const Caption& caption) const;
  ParameterList parameters(const std::string& prefix = "text_encoder") const;
  int vocab_size() const { return embedding_.dim(1); }
  int text_dim() const { return 2 * hidden_; }

 private:
  struct Direction {
    Var input_weight, hidden_weight, input_bias, hidden_bias;
  };
  Var run_direction(const Direction& dir, const Var& embedded, bool reverse, std::vector<Var>& outputs) const;

  Var embedding_;  // [embedding_dim, vocab]
  Direction forward_;
  Direction backward_;
  int hidden_ = 0;
};

struct AugmentedCondition {
  Var c;
  Var mu;
  Var logvar;
  Tensor noise_used;
};

// Fc + GLU projection to (mu, logvar), then c = mu + exp(logvar / 2) * noise.
class ConditioningAugmentation {
 public:
  ConditioningAugmentation() = default;
  ConditioningAugmentation(const ModelConfig& config, Rng& rng);

  AugmentedCondition operator()(const Var& sentence, const Tensor& noise) const;
  AugmentedCondition sample(const Var& sentence, Rng& rng) const;
  ParameterList parameters(const std::string& prefix = "cond_aug") const;
  int cond_dim() const { return cond_dim_; }

 private:
  Linear fc_;
  int cond_dim_ = 0;
};

// KL(N(mu, diag(exp(logvar))) || N(0, I)) summed over dimensions.
Var kl_regularizer(const Var& mu, const Var& logvar);
double kl_regularizer(std::span<const double> mu, std::span<const double> logvar);

}  // namespace memeface
