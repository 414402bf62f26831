#include "adavid/adaptive.hpp"

#include <sstream>

#include "adavid/error.hpp"
#include "adavid/flop_counter.hpp"

namespace adavid {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double std_dev) {
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = rng.normal() * std_dev;
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor filled(Shape shape, double value) {
  std::vector<double> values(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(values), true);
}

}  // namespace

void AdaptiveLinear::collect(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

void AdaptiveLayerNorm::collect(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

void AdaptiveMha::collect(NamedTensors& out, const std::string& prefix) const {
  q.collect(out, prefix + ".q");
  k.collect(out, prefix + ".k");
  v.collect(out, prefix + ".v");
  o.collect(out, prefix + ".o");
}

void AdaptiveFfn::collect(NamedTensors& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

void AdaptiveTransformerLayer::collect(NamedTensors& out, const std::string& prefix) const {
  norm_attn.collect(out, prefix + ".norm_attn");
  attn.collect(out, prefix + ".attn");
  if (mode == AttentionMode::kSpaceTime) {
    norm_time.collect(out, prefix + ".norm_time");
    time_attn.collect(out, prefix + ".time_attn");
  }
  norm_ffn.collect(out, prefix + ".norm_ffn");
  ffn.collect(out, prefix + ".ffn");
}

std::string to_string(AttentionMode mode) { return mode == AttentionMode::kJoint ? "dense" : "spacetime"; }

AttentionMode parse_attention_mode(const std::string& text) {
  if (text == "dense" || text == "plain" || text == "joint") return AttentionMode::kJoint;
  if (text == "spacetime" || text == "space-time") return AttentionMode::kSpaceTime;
  throw InvalidArgument("unknown attention mode '" + text + "' (expected dense or spacetime)");
}

AdaptiveLinear make_adaptive_linear(std::size_t out, std::size_t in, Rng& rng, double std_dev) {
  AdaptiveLinear lin;
  lin.weight = random_tensor({out, in}, rng, std_dev);
  lin.bias = filled({out}, 0.0);
  return lin;
}

AdaptiveLayerNorm make_adaptive_layernorm(std::size_t width) {
  return AdaptiveLayerNorm{filled({width}, 1.0), filled({width}, 0.0)};
}

AdaptiveMha make_adaptive_mha(std::size_t width, std::size_t head_dim, Rng& rng, double std_dev) {
  validate_head_width(width, width, head_dim);
  AdaptiveMha mha;
  mha.q = make_adaptive_linear(width, width, rng, std_dev);
  mha.k = make_adaptive_linear(width, width, rng, std_dev);
  mha.v = make_adaptive_linear(width, width, rng, std_dev);
  mha.o = make_adaptive_linear(width, width, rng, std_dev);
  mha.head_dim = head_dim;
  return mha;
}

AdaptiveFfn make_adaptive_ffn(std::size_t width, Rng& rng, double std_dev) {
  return AdaptiveFfn{make_adaptive_linear(4 * width, width, rng, std_dev),
                     make_adaptive_linear(width, 4 * width, rng, std_dev)};
}

AdaptiveTransformerLayer make_adaptive_layer(std::size_t width, std::size_t head_dim, AttentionMode mode,
                                             Rng& rng, double std_dev) {
  AdaptiveTransformerLayer layer;
  layer.mode = mode;
  layer.norm_attn = make_adaptive_layernorm(width);
  layer.attn = make_adaptive_mha(width, head_dim, rng, std_dev);
  if (mode == AttentionMode::kSpaceTime) {
    layer.norm_time = make_adaptive_layernorm(width);
    layer.time_attn = make_adaptive_mha(width, head_dim, rng, std_dev);
  }
  layer.norm_ffn = make_adaptive_layernorm(width);
  layer.ffn = make_adaptive_ffn(width, rng, std_dev);
  return layer;
}

// ---- groups ------------------------------------------------------------------

AttentionGroups space_groups(const TokenGrid& grid) {
  auto groups = std::make_shared<std::vector<AttentionGroup>>();
  for (std::size_t b = 0; b < grid.batch; ++b) {
    if (grid.has_cls) {
      AttentionGroup cls;
      cls.queries = {grid.cls_row(b)};
      cls.keys.push_back(grid.cls_row(b));
      for (std::size_t t = 0; t < grid.frames; ++t)
        for (std::size_t n = 0; n < grid.patches; ++n) cls.keys.push_back(grid.patch_row(b, t, n));
      groups->push_back(std::move(cls));
    }
    for (std::size_t t = 0; t < grid.frames; ++t) {
      AttentionGroup g;
      if (grid.has_cls) g.keys.push_back(grid.cls_row(b));
      for (std::size_t n = 0; n < grid.patches; ++n) {
        g.queries.push_back(grid.patch_row(b, t, n));
        g.keys.push_back(grid.patch_row(b, t, n));
      }
      groups->push_back(std::move(g));
    }
  }
  return groups;
}

AttentionGroups time_groups(const TokenGrid& grid) {
  auto groups = std::make_shared<std::vector<AttentionGroup>>();
  for (std::size_t b = 0; b < grid.batch; ++b) {
    if (grid.has_cls) groups->push_back(AttentionGroup{{grid.cls_row(b)}, {grid.cls_row(b)}});
    for (std::size_t n = 0; n < grid.patches; ++n) {
      AttentionGroup g;
      if (grid.has_cls) g.keys.push_back(grid.cls_row(b));
      for (std::size_t t = 0; t < grid.frames; ++t) {
        g.queries.push_back(grid.patch_row(b, t, n));
        g.keys.push_back(grid.patch_row(b, t, n));
      }
      groups->push_back(std::move(g));
    }
  }
  return groups;
}

AttentionGroups joint_groups(const TokenGrid& grid) {
  auto groups = std::make_shared<std::vector<AttentionGroup>>();
  for (std::size_t b = 0; b < grid.batch; ++b) {
    AttentionGroup g;
    if (grid.has_cls) g.queries.push_back(grid.cls_row(b));
    for (std::size_t t = 0; t < grid.frames; ++t)
      for (std::size_t n = 0; n < grid.patches; ++n) g.queries.push_back(grid.patch_row(b, t, n));
    g.keys = g.queries;
    groups->push_back(std::move(g));
  }
  return groups;
}

AttentionGroups masked_sequence_groups(std::size_t batch, std::size_t length, std::span<const char> mask) {
  if (mask.size() != batch * length) throw InvalidArgument("masked_sequence_groups: mask size mismatch");
  auto groups = std::make_shared<std::vector<AttentionGroup>>();
  for (std::size_t b = 0; b < batch; ++b) {
    AttentionGroup g;
    for (std::size_t i = 0; i < length; ++i) {
      g.queries.push_back(b * length + i);
      if (mask[b * length + i]) g.keys.push_back(b * length + i);
    }
    if (g.keys.empty()) throw InvalidArgument("masked_sequence_groups: row without real tokens");
    groups->push_back(std::move(g));
  }
  return groups;
}

LayerGroups layer_groups(AttentionMode mode, const TokenGrid& grid) {
  if (mode == AttentionMode::kJoint) return LayerGroups{joint_groups(grid), nullptr};
  return LayerGroups{space_groups(grid), time_groups(grid)};
}

// ---- forward -----------------------------------------------------------------

void validate_head_width(std::size_t d, std::size_t full_width, std::size_t head_dim) {
  if (head_dim == 0 || d == 0 || d > full_width || d % head_dim != 0) {
    std::ostringstream os;
    os << "attention width " << d << " is not allowed; widths must be multiples of head_dim " << head_dim
       << " up to " << full_width << ":";
    for (std::size_t w = head_dim; head_dim != 0 && w <= full_width; w += head_dim) os << ' ' << w;
    throw InvalidArgument(os.str());
  }
}

Tensor adaptive_linear(const AdaptiveLinear& params, const Tensor& x, std::size_t d_out, std::size_t d_in) {
  const std::size_t out = params.out_features(), in = params.in_features();
  if (d_out == 0 || d_in == 0 || d_out > out || d_in > in) {
    throw InvalidArgument("adaptive_linear: width (" + std::to_string(d_out) + ", " + std::to_string(d_in) +
                          ") exceeds full extent (" + std::to_string(out) + ", " + std::to_string(in) + ")");
  }
  if ((!params.slice_out && d_out != out) || (!params.slice_in && d_in != in)) {
    throw InvalidArgument("adaptive_linear: this projection is not sliceable on the requested side");
  }
  if (x.cols() != d_in) {
    throw InvalidArgument("adaptive_linear: input width " + std::to_string(x.cols()) + " != d_in " +
                          std::to_string(d_in));
  }
  if (d_out == out && d_in == in) return linear(x, params.weight, params.bias);
  return linear(x, slice(params.weight, d_out, d_in), slice_prefix(params.bias, d_out));
}

Tensor adaptive_layernorm(const AdaptiveLayerNorm& params, const Tensor& x, std::size_t d) {
  if (d == 0) throw InvalidArgument("adaptive_layernorm: width must be positive");
  if (d > params.width()) {
    throw InvalidArgument("adaptive_layernorm: width " + std::to_string(d) + " exceeds " +
                          std::to_string(params.width()));
  }
  if (x.cols() != d) throw InvalidArgument("adaptive_layernorm: input width does not match d");
  if (d == params.width()) return layer_norm(x, params.gamma, params.beta, params.eps);
  return layer_norm(x, slice_prefix(params.gamma, d), slice_prefix(params.beta, d), params.eps);
}

Tensor adaptive_mha(const AdaptiveMha& params, const Tensor& tokens, std::size_t d) {
  return adaptive_mha(params, tokens, d, joint_groups(TokenGrid{1, 1, tokens.rows(), false}));
}

Tensor adaptive_mha(const AdaptiveMha& params, const Tensor& tokens, std::size_t d, const AttentionGroups& groups) {
  validate_head_width(d, params.width(), params.head_dim);
  Tensor q, k, v;
  {
    FlopTag tag("qkv");
    q = adaptive_linear(params.q, tokens, d, d);
    k = adaptive_linear(params.k, tokens, d, d);
    v = adaptive_linear(params.v, tokens, d, d);
  }
  Tensor mixed = attention(q, k, v, groups, params.head_dim);
  FlopTag tag("out");
  return adaptive_linear(params.o, mixed, d, d);
}

Tensor adaptive_ffn(const AdaptiveFfn& params, const Tensor& tokens, std::size_t d) {
  if (d == 0 || d > params.width()) {
    throw InvalidArgument("adaptive_ffn: width " + std::to_string(d) + " exceeds " + std::to_string(params.width()));
  }
  FlopTag tag("ffn");
  Tensor hidden = gelu(adaptive_linear(params.fc1, tokens, 4 * d, d));
  return adaptive_linear(params.fc2, hidden, d, 4 * d);
}

Tensor transition(const Tensor& tokens, std::size_t d_from, std::size_t d_to) {
  if (tokens.cols() != d_from) throw InvalidArgument("transition: token width does not match d_from");
  if (d_to == d_from) return tokens;
  return resize_cols(tokens, d_to);
}

Tensor transition(const Tensor& tokens, std::size_t d_from, std::size_t d_to, std::span<const std::size_t> allowed) {
  auto ok = [&](std::size_t w) {
    for (std::size_t a : allowed)
      if (a == w) return true;
    return false;
  };
  if (!ok(d_from) || !ok(d_to)) {
    throw InvalidArgument("transition: widths " + std::to_string(d_from) + " -> " + std::to_string(d_to) +
                          " are not both in the allowed set");
  }
  return transition(tokens, d_from, d_to);
}

Tensor adaptive_layer_forward(const AdaptiveTransformerLayer& layer, const Tensor& tokens, std::size_t d,
                              const TokenGrid& grid) {
  if (tokens.rows() != grid.tokens()) {
    throw InvalidArgument("adaptive_layer_forward: " + std::to_string(tokens.rows()) +
                          " tokens do not match grid (batch " + std::to_string(grid.batch) + ", T " +
                          std::to_string(grid.frames) + ", N " + std::to_string(grid.patches) +
                          (grid.has_cls ? ", cls)" : ")"));
  }
  return adaptive_layer_forward(layer, tokens, d, layer_groups(layer.mode, grid));
}

Tensor adaptive_layer_forward(const AdaptiveTransformerLayer& layer, const Tensor& tokens, std::size_t d,
                              const LayerGroups& groups) {
  if (tokens.cols() != d) throw InvalidArgument("adaptive_layer_forward: token width does not match d");
  Tensor x = tokens;
  {
    FlopTag tag(layer.mode == AttentionMode::kSpaceTime ? "space" : "attn");
    x = add(x, adaptive_mha(layer.attn, adaptive_layernorm(layer.norm_attn, x, d), d, groups.attn));
  }
  if (layer.mode == AttentionMode::kSpaceTime) {
    if (!groups.time) throw InvalidArgument("adaptive_layer_forward: space-time layer needs time groups");
    FlopTag tag("time");
    x = add(x, adaptive_mha(layer.time_attn, adaptive_layernorm(layer.norm_time, x, d), d, groups.time));
  }
  return add(x, adaptive_ffn(layer.ffn, adaptive_layernorm(layer.norm_ffn, x, d), d));
}

}  // namespace adavid
