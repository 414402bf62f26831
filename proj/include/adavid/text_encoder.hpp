#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "adavid/adaptive.hpp"
#include "adavid/config.hpp"
#include "adavid/rng.hpp"
#include "adavid/tensor.hpp"

namespace adavid {

// Closed-world vocabulary. Ids are dense; 0..2 are reserved.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;

  Vocab();
  // Explicit token -> id entries (reserved tokens added if absent). Ids must
  // end up dense.
  explicit Vocab(const std::map<std::string, std::size_t>& entries);

  // Every word of every text, sorted, ids from 3 upwards.
  static Vocab build(std::span<const std::string> texts);

  std::size_t id(const std::string& token) const;  // kUnk on a miss
  const std::string& token(std::size_t id) const;
  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  // "token<TAB>id" lines sorted by token.
  std::string serialize() const;
  static Vocab deserialize(const std::string& text);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::map<std::string, std::size_t> ids_;
  std::vector<std::string> tokens_;
};

// Lowercased words; anything that is not a letter or digit separates.
std::vector<std::string> split_words(const std::string& text);

struct TokenizedText {
  std::vector<std::size_t> ids;
  std::vector<char> mask;
};

// [cls, words...] truncated / padded to max_len.
TokenizedText tokenize(const std::string& text, const Vocab& vocab, std::size_t max_len);

struct TextBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::size_t> ids;  // [batch * length]
  std::vector<char> mask;
};

TextBatch make_text_batch(std::span<const std::string> texts, const Vocab& vocab, std::size_t max_len);

struct TextConfig {
  std::size_t layers = 4;
  std::size_t width = 64;
  std::size_t head_dim = 16;
  std::size_t max_len = 16;
  std::size_t embed_dim = 32;
  std::size_t vocab_size = 0;
  double init_std = 0.02;

  void validate() const;
  void write(Config& out, const std::string& prefix) const;
  static TextConfig read(const Config& in, const std::string& prefix);
};

// Fixed-width transformer text encoder with cls pooling.
class TextEncoder {
 public:
  TextEncoder(const TextConfig& config, Rng& rng, std::string name = "text");

  const TextConfig& config() const { return config_; }
  const std::string& name() const { return name_; }

  // [B x E] unit-norm rows.
  Tensor encode(const TextBatch& batch) const;

  NamedTensors parameters() const;

  Tensor token_embed;  // [V x W]
  Tensor pos;          // [max_len x W]
  std::vector<AdaptiveTransformerLayer> layers;
  AdaptiveLayerNorm final_norm;
  AdaptiveLinear head;  // [E x W]

 private:
  TextConfig config_;
  std::string name_;
};

}  // namespace adavid
