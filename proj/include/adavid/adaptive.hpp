#pragma once

// Width-adaptive transformer blocks. Every block owns full-width parameters
// and runs at any active width d <= D by reading the leading slices:
//
//   linear:     y[:d_out] = W[:d_out, :d_in] x[:d_in] + b[:d_out]
//   layer norm: statistics over the first d channels, affine gamma[:d], beta[:d]
//   attention:  the first d/H heads (head-major rows), scale 1/sqrt(H)
//   FFN:        hidden width 4d
//
// Running at d == D is bit-identical to the plain dense computation, and at
// any d the result equals a standalone d-wide block built from the sliced
// sub-tensors.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adavid/rng.hpp"
#include "adavid/tensor.hpp"

namespace adavid {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct AdaptiveLinear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
  bool slice_out = true;
  bool slice_in = true;

  std::size_t out_features() const { return weight.rows(); }
  std::size_t in_features() const { return weight.cols(); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

struct AdaptiveLayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  std::size_t width() const { return gamma.numel(); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

struct AdaptiveMha {
  AdaptiveLinear q, k, v, o;  // each [D x D], head-major rows
  std::size_t head_dim = 0;

  std::size_t width() const { return q.out_features(); }
  std::size_t max_heads() const { return width() / head_dim; }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

struct AdaptiveFfn {
  AdaptiveLinear fc1;  // [4D x D]
  AdaptiveLinear fc2;  // [D x 4D]

  std::size_t width() const { return fc2.out_features(); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

enum class AttentionMode { kJoint, kSpaceTime };

std::string to_string(AttentionMode mode);
AttentionMode parse_attention_mode(const std::string& text);

// Pre-norm layer. Joint mode uses (norm_attn, attn); space-time mode adds a
// second sub-block (norm_time, time_attn) between space attention and FFN.
struct AdaptiveTransformerLayer {
  AttentionMode mode = AttentionMode::kSpaceTime;
  AdaptiveLayerNorm norm_attn;
  AdaptiveMha attn;
  AdaptiveLayerNorm norm_time;
  AdaptiveMha time_attn;
  AdaptiveLayerNorm norm_ffn;
  AdaptiveFfn ffn;

  std::size_t width() const { return attn.width(); }
  std::size_t head_dim() const { return attn.head_dim; }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

// Construction with N(0, std^2) weights, zero biases, unit gamma.
AdaptiveLinear make_adaptive_linear(std::size_t out, std::size_t in, Rng& rng, double std_dev);
AdaptiveLayerNorm make_adaptive_layernorm(std::size_t width);
AdaptiveMha make_adaptive_mha(std::size_t width, std::size_t head_dim, Rng& rng, double std_dev);
AdaptiveFfn make_adaptive_ffn(std::size_t width, Rng& rng, double std_dev);
AdaptiveTransformerLayer make_adaptive_layer(std::size_t width, std::size_t head_dim, AttentionMode mode,
                                             Rng& rng, double std_dev);

// ---- token layout ----------------------------------------------------------

// Row layout of a batch of token grids: the `batch` cls rows come first (when
// present), followed by patch tokens ordered (item, frame, position). For a
// single item this is [cls, frame0..., frame1..., ...].
struct TokenGrid {
  std::size_t batch = 1;
  std::size_t frames = 1;
  std::size_t patches = 1;
  bool has_cls = true;

  std::size_t tokens() const { return (has_cls ? batch : 0) + batch * frames * patches; }
  std::size_t cls_row(std::size_t b) const { return b; }
  std::size_t patch_row(std::size_t b, std::size_t t, std::size_t n) const {
    return (has_cls ? batch : 0) + (b * frames + t) * patches + n;
  }
};

using AttentionGroups = std::shared_ptr<const std::vector<AttentionGroup>>;

// Space sub-block: patches attend within their frame (+ own cls as an extra
// key); cls attends over every token of its item.
AttentionGroups space_groups(const TokenGrid& grid);
// Time sub-block: each position attends across frames (+ own cls as an extra
// key); cls attends to itself only.
AttentionGroups time_groups(const TokenGrid& grid);
// Joint (dense) attention over all tokens of each item.
AttentionGroups joint_groups(const TokenGrid& grid);
// Joint attention for padded sequences laid out as `batch` consecutive rows of
// `length`; keys are restricted to positions whose mask is set. mask is
// [batch * length].
AttentionGroups masked_sequence_groups(std::size_t batch, std::size_t length, std::span<const char> mask);

// Groups a layer needs for one forward pass.
struct LayerGroups {
  AttentionGroups attn;
  AttentionGroups time;  // only used in space-time mode
};

LayerGroups layer_groups(AttentionMode mode, const TokenGrid& grid);

// ---- forward ---------------------------------------------------------------

Tensor adaptive_linear(const AdaptiveLinear& params, const Tensor& x, std::size_t d_out, std::size_t d_in);
Tensor adaptive_layernorm(const AdaptiveLayerNorm& params, const Tensor& x, std::size_t d);
// Dense attention of all rows over all rows.
Tensor adaptive_mha(const AdaptiveMha& params, const Tensor& tokens, std::size_t d);
Tensor adaptive_mha(const AdaptiveMha& params, const Tensor& tokens, std::size_t d, const AttentionGroups& groups);
Tensor adaptive_ffn(const AdaptiveFfn& params, const Tensor& tokens, std::size_t d);

// Zero-pads (d_to > d_from) or truncates (d_to < d_from) the channel axis.
Tensor transition(const Tensor& tokens, std::size_t d_from, std::size_t d_to);
// Same, validating both widths against the allowed set.
Tensor transition(const Tensor& tokens, std::size_t d_from, std::size_t d_to, std::span<const std::size_t> allowed);

Tensor adaptive_layer_forward(const AdaptiveTransformerLayer& layer, const Tensor& tokens, std::size_t d,
                              const TokenGrid& grid);
Tensor adaptive_layer_forward(const AdaptiveTransformerLayer& layer, const Tensor& tokens, std::size_t d,
                              const LayerGroups& groups);

// Throws InvalidArgument unless d is a positive multiple of head_dim, <= D.
void validate_head_width(std::size_t d, std::size_t full_width, std::size_t head_dim);

}  // namespace adavid
