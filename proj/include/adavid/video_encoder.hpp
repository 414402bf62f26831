#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "adavid/adaptive.hpp"
#include "adavid/config.hpp"
#include "adavid/rng.hpp"
#include "adavid/schedule.hpp"
#include "adavid/tensor.hpp"

namespace adavid {

// Frames stored [T x C x H x W], row-major, values nominally in [0, 1].
struct VideoClip {
  std::size_t frames = 0;
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  std::size_t frame_size() const { return channels * height * width; }
  double at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[((t * channels + c) * height + y) * width + x];
  }
  // Copy of frames [first, first + count).
  VideoClip frame_range(std::size_t first, std::size_t count) const;
  // Copy of the listed frames, in order.
  VideoClip select_frames(std::span<const std::size_t> indices) const;
};

struct EncoderConfig {
  std::size_t layers = 8;
  std::size_t width = 64;      // D
  std::size_t head_dim = 8;    // H
  std::size_t patch = 8;       // P
  std::size_t image = 32;      // H_img = W_img
  std::size_t channels = 3;
  std::size_t frames = 4;      // frames per clip during training
  std::size_t max_frames = 16; // rows of the temporal position table
  std::size_t embed_dim = 32;  // E
  AttentionMode attention = AttentionMode::kSpaceTime;
  double init_std = 0.02;

  std::size_t patches_per_frame() const { return (image / patch) * (image / patch); }
  std::size_t patch_features() const { return patch * patch * channels; }
  // quarter widths that hold whole heads
  std::vector<std::size_t> allowed() const;

  void validate() const;
  void write(Config& out, const std::string& prefix) const;
  static EncoderConfig read(const Config& in, const std::string& prefix);
};

using EmbeddingVector = std::vector<double>;

// Adaptive video encoder: patch projection, learned cls / spatial / temporal
// embeddings, L adaptive layers run under a DimSchedule, final norm and an
// output head whose input side is sliced to the last layer's width.
class VideoEncoder {
 public:
  VideoEncoder(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }

  // [B*T*N (+B cls) x d0] tokens laid out as TokenGrid{B, T, N, with_cls}.
  Tensor patchify(std::span<const VideoClip> clips, std::size_t d0, bool with_cls = true) const;
  TokenGrid grid_for(std::size_t batch, std::size_t frames, bool with_cls = true) const;

  // Runs the layer stack; returns tokens at width schedule.widths.back().
  Tensor forward_layers(const Tensor& tokens, const TokenGrid& grid, const DimSchedule& schedule) const;

  // [B x E] unit-norm rows; differentiable w.r.t. the parameters.
  Tensor encode_batch(std::span<const VideoClip> clips, const DimSchedule& schedule) const;
  EmbeddingVector encode(const VideoClip& clip, const DimSchedule& schedule) const;

  NamedTensors parameters() const;

  // Parameter blocks, exposed for tests and reference implementations.
  AdaptiveLinear patch_embed;  // [D x P*P*C], output side sliceable only
  Tensor cls;                  // [1 x D]
  Tensor pos_space;            // [N x D]
  Tensor pos_time;             // [max_frames x D]
  std::vector<AdaptiveTransformerLayer> layers;
  AdaptiveLayerNorm final_norm;
  AdaptiveLinear head;         // [E x D], input side sliceable only

 private:
  void validate_clip(const VideoClip& clip) const;
  void check_schedule(const DimSchedule& schedule) const;

  EncoderConfig config_;
};

}  // namespace adavid
