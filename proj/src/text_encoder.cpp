#include "adavid/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>
#include <sstream>

#include "adavid/error.hpp"

namespace adavid {
namespace {

const std::vector<std::string> kReserved = {"[pad]", "[unk]", "[cls]"};

}  // namespace

Vocab::Vocab() {
  for (std::size_t i = 0; i < kReserved.size(); ++i) {
    ids_[kReserved[i]] = i;
    tokens_.push_back(kReserved[i]);
  }
}

Vocab::Vocab(const std::map<std::string, std::size_t>& entries) : Vocab() {
  std::map<std::size_t, std::string> by_id;
  for (std::size_t i = 0; i < kReserved.size(); ++i) by_id[i] = kReserved[i];
  for (const auto& [tok, id] : entries) {
    if (id < kReserved.size()) {
      if (tok != kReserved[id]) throw InvalidArgument("vocab: id " + std::to_string(id) + " is reserved");
      continue;
    }
    if (!by_id.emplace(id, tok).second) throw InvalidArgument("vocab: duplicate id " + std::to_string(id));
  }
  tokens_.clear();
  ids_.clear();
  for (const auto& [id, tok] : by_id) {
    if (id != tokens_.size()) throw InvalidArgument("vocab: ids are not dense (missing " + std::to_string(tokens_.size()) + ")");
    if (!ids_.emplace(tok, id).second) throw InvalidArgument("vocab: duplicate token '" + tok + "'");
    tokens_.push_back(tok);
  }
}

Vocab Vocab::build(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) words.insert(std::move(w));
  Vocab v;
  for (const auto& w : words) {
    if (v.ids_.count(w)) continue;
    v.ids_[w] = v.tokens_.size();
    v.tokens_.push_back(w);
  }
  return v;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw InvalidArgument("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& [tok, id] : ids_) out += tok + "\t" + std::to_string(id) + "\n";
  return out;
}

Vocab Vocab::deserialize(const std::string& text) {
  std::map<std::string, std::size_t> entries;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw IoError("vocab: malformed line '" + line + "'");
    try {
      entries[line.substr(0, tab)] = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw IoError("vocab: malformed id in '" + line + "'");
    }
  }
  try {
    return Vocab(entries);
  } catch (const InvalidArgument& e) {
    throw IoError(e.what());
  }
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenizedText tokenize(const std::string& text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw InvalidArgument("tokenize: max_len must be at least 2");
  TokenizedText out;
  out.ids.assign(max_len, Vocab::kPad);
  out.mask.assign(max_len, 0);
  out.ids[0] = Vocab::kCls;
  out.mask[0] = 1;
  std::size_t pos = 1;
  for (const auto& w : split_words(text)) {
    if (pos == max_len) break;
    out.ids[pos] = vocab.id(w);
    out.mask[pos] = 1;
    ++pos;
  }
  return out;
}

TextBatch make_text_batch(std::span<const std::string> texts, const Vocab& vocab, std::size_t max_len) {
  TextBatch b;
  b.batch = texts.size();
  b.length = max_len;
  for (const auto& t : texts) {
    auto tok = tokenize(t, vocab, max_len);
    b.ids.insert(b.ids.end(), tok.ids.begin(), tok.ids.end());
    b.mask.insert(b.mask.end(), tok.mask.begin(), tok.mask.end());
  }
  return b;
}

void TextConfig::validate() const {
  if (layers == 0 || width == 0 || head_dim == 0 || embed_dim == 0) {
    throw InvalidArgument("text config: sizes must be positive");
  }
  if (width % head_dim != 0) throw InvalidArgument("text config: width must be a multiple of head_dim");
  if (max_len < 2) throw InvalidArgument("text config: max_len must be at least 2");
  if (vocab_size < 3) throw InvalidArgument("text config: vocab_size must cover the reserved ids");
}

void TextConfig::write(Config& out, const std::string& p) const {
  out.set(p + "layers", std::to_string(layers));
  out.set(p + "width", std::to_string(width));
  out.set(p + "head_dim", std::to_string(head_dim));
  out.set(p + "max_len", std::to_string(max_len));
  out.set(p + "embed_dim", std::to_string(embed_dim));
  out.set(p + "vocab_size", std::to_string(vocab_size));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", init_std);
  out.set(p + "init_std", buf);
}

TextConfig TextConfig::read(const Config& in, const std::string& p) {
  TextConfig c;
  c.layers = in.get_size(p + "layers", c.layers);
  c.width = in.get_size(p + "width", c.width);
  c.head_dim = in.get_size(p + "head_dim", c.head_dim);
  c.max_len = in.get_size(p + "max_len", c.max_len);
  c.embed_dim = in.get_size(p + "embed_dim", c.embed_dim);
  c.vocab_size = in.get_size(p + "vocab_size", c.vocab_size);
  c.init_std = in.get_double(p + "init_std", c.init_std);
  c.validate();
  return c;
}

TextEncoder::TextEncoder(const TextConfig& config, Rng& rng, std::string name)
    : config_(config), name_(std::move(name)) {
  config_.validate();
  const std::size_t w = config_.width;
  token_embed = Tensor(Shape{config_.vocab_size, w}, true);
  for (double& v : token_embed.mutable_data()) v = rng.normal() * config_.init_std;
  pos = Tensor(Shape{config_.max_len, w}, true);
  for (double& v : pos.mutable_data()) v = rng.normal() * config_.init_std;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    layers.push_back(make_adaptive_layer(w, config_.head_dim, AttentionMode::kJoint, rng, config_.init_std));
  }
  final_norm = make_adaptive_layernorm(w);
  head = make_adaptive_linear(config_.embed_dim, w, rng, config_.init_std);
}

Tensor TextEncoder::encode(const TextBatch& batch) const {
  if (batch.batch == 0) throw InvalidArgument("encode_text: empty batch");
  if (batch.length > config_.max_len) {
    throw InvalidArgument("encode_text: length " + std::to_string(batch.length) + " exceeds max_len " +
                          std::to_string(config_.max_len));
  }
  if (batch.ids.size() != batch.batch * batch.length || batch.mask.size() != batch.ids.size()) {
    throw InvalidArgument("encode_text: id/mask buffers do not match the batch shape");
  }
  for (std::size_t id : batch.ids) {
    if (id >= config_.vocab_size) {
      throw InvalidArgument("encode_text: token id " + std::to_string(id) + " >= vocab size " +
                            std::to_string(config_.vocab_size));
    }
  }
  const std::size_t w = config_.width;
  std::vector<std::size_t> positions(batch.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % batch.length;
  Tensor x = add(gather_rows(token_embed, batch.ids), gather_rows(pos, positions));
  const LayerGroups groups{masked_sequence_groups(batch.batch, batch.length, batch.mask), nullptr};
  for (const auto& layer : layers) x = adaptive_layer_forward(layer, x, w, groups);
  std::vector<std::size_t> cls_rows(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) cls_rows[b] = b * batch.length;
  Tensor c = adaptive_layernorm(final_norm, gather_rows(x, cls_rows), w);
  return l2_normalize_rows(adaptive_linear(head, c, config_.embed_dim, w));
}

NamedTensors TextEncoder::parameters() const {
  NamedTensors out;
  out.emplace_back(name_ + ".token_embed", token_embed);
  out.emplace_back(name_ + ".pos", pos);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(out, name_ + ".layer" + std::to_string(l));
  final_norm.collect(out, name_ + ".final_norm");
  head.collect(out, name_ + ".head");
  return out;
}

}  // namespace adavid
