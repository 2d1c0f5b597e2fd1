#include "memeface/text_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "memeface/ops.hpp"

namespace memeface {

std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      cp = lead & 0x1F;
      extra = 1;
    } else if ((lead & 0xF0) == 0xE0) {
      cp = lead & 0x0F;
      extra = 2;
    } else if ((lead & 0xF8) == 0xF0) {
      cp = lead & 0x07;
      extra = 3;
    } else {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    bool ok = true;
    for (int k = 1; k <= extra; ++k) {
      if (i + k >= text.size() || (static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        ok = false;
        break;
      }
      cp = (cp << 6) | (static_cast<unsigned char>(text[i + k]) & 0x3F);
    }
    if (!ok) {
      out.push_back(0xFFFD);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string encode_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

namespace {

bool is_space(char32_t cp) {
  return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\f' || cp == U'\v' || cp == 0x00A0 ||
         cp == 0x3000;
}

bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) || (cp >= 0x20000 && cp <= 0x2A6DF) ||
         (cp >= 0xF900 && cp <= 0xFAFF) || (cp >= 0x3000 && cp <= 0x30FF) || (cp >= 0xFF00 && cp <= 0xFFEF);
}

bool is_ascii_punct(char32_t cp) {
  return cp < 0x80 && ((cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) || (cp >= 0x5B && cp <= 0x60) ||
                       (cp >= 0x7B && cp <= 0x7E));
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
  };
  for (char32_t cp : decode_utf8(text)) {
    if (is_space(cp)) {
      flush();
    } else if (is_cjk(cp) || is_ascii_punct(cp)) {
      flush();
      tokens.push_back(encode_utf8(cp));
    } else {
      if (cp >= U'A' && cp <= U'Z') cp = cp - U'A' + U'a';
      word += encode_utf8(cp);
    }
  }
  flush();
  return tokens;
}

Vocabulary::Vocabulary() { add(std::string(kUnknownToken)); }

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) throw std::runtime_error("duplicate vocabulary token '" + token + "'");
  index_.emplace(token, size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& text : corpus)
    for (auto& tok : tokenize(text)) ++counts[tok];
  std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [tok, count] : ranked) {
    if (count >= min_count && tok != kUnknownToken) vocab.add(tok);
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.index_.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.add(line);
  }
  if (vocab.tokens_.empty() || vocab.tokens_[0] != kUnknownToken) {
    throw std::runtime_error("vocabulary file " + path.string() + " must start with " + std::string(kUnknownToken));
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& tok : tokens_) out << tok << '\n';
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknownId : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  return ids;
}

Caption make_caption(const Vocabulary& vocab, std::string_view text, int max_len) {
  Caption caption{vocab.encode(text), std::string(text)};
  if (caption.tokens.empty()) throw std::invalid_argument("empty caption");
  if (static_cast<int>(caption.tokens.size()) > max_len) caption.tokens.resize(static_cast<std::size_t>(max_len));
  return caption;
}

void validate_caption(const Caption& caption, int vocab_size, int max_len) {
  if (caption.tokens.empty()) throw std::invalid_argument("empty caption");
  if (caption.length() > max_len) {
    throw std::invalid_argument("caption length " + std::to_string(caption.length()) + " exceeds maximum " +
                                std::to_string(max_len));
  }
  for (std::size_t i = 0; i < caption.tokens.size(); ++i) {
    const int t = caption.tokens[i];
    if (t < 0 || t >= vocab_size) {
      throw std::invalid_argument("token index " + std::to_string(t) + " at position " + std::to_string(i) +
                                  " is outside the vocabulary (size " + std::to_string(vocab_size) + ")");
    }
  }
}

TextEncoder::TextEncoder(const ModelConfig& config, Rng& rng) : hidden_(config.text_dim / 2) {
  embedding_ = Var(rng.uniform_tensor({config.embedding_dim, config.vocab_size}, -0.1, 0.1), true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
  auto make_direction = [&] {
    Direction d;
    d.input_weight = Var(rng.uniform_tensor({4 * hidden_, config.embedding_dim}, -bound, bound), true);
    d.hidden_weight = Var(rng.uniform_tensor({4 * hidden_, hidden_}, -bound, bound), true);
    d.input_bias = Var(rng.uniform_tensor({4 * hidden_}, -bound, bound), true);
    d.hidden_bias = Var(rng.uniform_tensor({4 * hidden_}, -bound, bound), true);
    return d;
  };
  forward_ = make_direction();
  backward_ = make_direction();
}

Var TextEncoder::run_direction(const Direction& dir, const Var& embedded, bool reverse,
                               std::vector<Var>& outputs) const {
  const int steps = embedded.dim(1);
  outputs.assign(static_cast<std::size_t>(steps), Var());
  Var h = constant(Tensor(Shape{hidden_}));
  Var c = constant(Tensor(Shape{hidden_}));
  for (int k = 0; k < steps; ++k) {
    const int t = reverse ? steps - 1 - k : k;
    Var gates = ops::add(ops::linear(ops::column(embedded, t), dir.input_weight, dir.input_bias),
                         ops::linear(h, dir.hidden_weight, dir.hidden_bias));
    Var in_gate = ops::sigmoid(ops::slice(gates, 0, hidden_));
    Var forget_gate = ops::sigmoid(ops::slice(gates, hidden_, 2 * hidden_));
    Var candidate = ops::tanh(ops::slice(gates, 2 * hidden_, 3 * hidden_));
    Var out_gate = ops::sigmoid(ops::slice(gates, 3 * hidden_, 4 * hidden_));
    c = ops::add(ops::mul(forget_gate, c), ops::mul(in_gate, candidate));
    h = ops::mul(out_gate, ops::tanh(c));
    outputs[static_cast<std::size_t>(t)] = h;
  }
  return h;
}

TextEncoding TextEncoder::encode(const Caption& caption) const {
  if (caption.tokens.empty()) throw std::invalid_argument("empty caption");
  for (std::size_t i = 0; i < caption.tokens.size(); ++i) {
    const int t = caption.tokens[i];
    if (t < 0 || t >= vocab_size()) {
      throw std::invalid_argument("token index " + std::to_string(t) + " at position " + std::to_string(i) +
                                  " is outside the vocabulary (size " + std::to_string(vocab_size()) + ")");
    }
  }
  Var embedded = ops::gather_columns(embedding_, caption.tokens);
  std::vector<Var> fwd, bwd;
  Var last_fwd = run_direction(forward_, embedded, false, fwd);
  Var last_bwd = run_direction(backward_, embedded, true, bwd);
  return TextEncoding{ops::concat({ops::stack_columns(fwd), ops::stack_columns(bwd)}),
                      ops::concat({last_fwd, last_bwd})};
}

ParameterList TextEncoder::parameters(const std::string& prefix) const {
  ParameterList out;
  out.push_back({prefix + ".embedding", embedding_});
  for (const auto& [name, dir] : {std::pair{"fwd", &forward_}, std::pair{"bwd", &backward_}}) {
    const std::string p = prefix + "." + name;
    out.push_back({p + ".w_ih", dir->input_weight});
    out.push_back({p + ".w_hh", dir->hidden_weight});
    out.push_back({p + ".b_ih", dir->input_bias});
    out.push_back({p + ".b_hh", dir->hidden_bias});
  }
  return out;
}

ConditioningAugmentation::ConditioningAugmentation(const ModelConfig& config, Rng& rng)
    : fc_(config.text_dim, 4 * config.cond_dim, rng), cond_dim_(config.cond_dim) {}

AugmentedCondition ConditioningAugmentation::operator()(const Var& sentence, const Tensor& noise) const {
  if (!sentence.value().all_finite()) throw std::invalid_argument("conditioning augmentation: non-finite sentence vector");
  if (noise.size() != static_cast<std::size_t>(cond_dim_)) {
    throw std::invalid_argument("conditioning augmentation: noise has " + std::to_string(noise.size()) +
                                " entries, expected " + std::to_string(cond_dim_));
  }
  Var projected = fc_(sentence);
  Var glu = ops::mul(ops::slice(projected, 0, 2 * cond_dim_),
                     ops::sigmoid(ops::slice(projected, 2 * cond_dim_, 4 * cond_dim_)));
  AugmentedCondition out;
  out.mu = ops::slice(glu, 0, cond_dim_);
  out.logvar = ops::slice(glu, cond_dim_, 2 * cond_dim_);
  out.noise_used = noise.reshaped({cond_dim_});
  Var stddev = ops::exp(ops::scale(out.logvar, 0.5));
  out.c = ops::add(out.mu, ops::mul(stddev, constant(out.noise_used)));
  return out;
}

AugmentedCondition ConditioningAugmentation::sample(const Var& sentence, Rng& rng) const {
  return (*this)(sentence, rng.normal_tensor({cond_dim_}));
}

ParameterList ConditioningAugmentation::parameters(const std::string& prefix) const {
  ParameterList out;
  fc_.collect(prefix + ".fc", out);
  return out;
}

Var kl_regularizer(const Var& mu, const Var& logvar) {
  if (mu.shape() != logvar.shape()) {
    throw std::invalid_argument("kl_regularizer: shape mismatch " + shape_string(mu.shape()) + " vs " +
                                shape_string(logvar.shape()));
  }
  Var inner = ops::sub(ops::sub(ops::add_scalar(logvar, 1.0), ops::square(mu)), ops::exp(logvar));
  return ops::scale(ops::sum(inner), -0.5);
}

double kl_regularizer(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw std::invalid_argument("kl_regularizer: shape mismatch");
  double acc = 0.0;
  for (std::size_t d = 0; d < mu.size(); ++d) acc += 1.0 + logvar[d] - mu[d] * mu[d] - std::exp(logvar[d]);
  return -0.5 * acc;
}

}  // namespace memeface
