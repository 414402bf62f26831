#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "adavid/adaptive.hpp"
#include "adavid/config.hpp"
#include "adavid/schedule.hpp"
#include "adavid/tensor.hpp"
#include "adavid/video_encoder.hpp"

namespace adavid {

// Contiguous, order-preserving split into `segments` clips.
std::vector<VideoClip> segment_video(const VideoClip& video, std::size_t segments);

struct AggregatorConfig {
  std::size_t layers = 4;
  std::size_t width = 64;
  std::size_t head_dim = 16;
  std::size_t segments = 4;  // S, rows of the segment position table
  std::size_t embed_dim = 32;
  double init_std = 0.02;

  void validate() const;
  void write(Config& out, const std::string& prefix) const;
  static AggregatorConfig read(const Config& in, const std::string& prefix);
};

// Transformer over [cls, segment features]; always full width.
class Aggregator {
 public:
  Aggregator(const AggregatorConfig& config, Rng& rng);

  const AggregatorConfig& config() const { return config_; }

  // features [batch * S x E], rows grouped per video -> [batch x E] unit rows.
  Tensor forward(const Tensor& features, std::size_t batch) const;

  NamedTensors parameters() const;

  AdaptiveLinear input_proj;  // [W x E]
  Tensor cls;                 // [1 x W]
  Tensor seg_pos;             // [S x W]
  std::vector<AdaptiveTransformerLayer> layers;
  AdaptiveLayerNorm final_norm;
  AdaptiveLinear head;  // [E x W]

 private:
  AggregatorConfig config_;
};

// Segment embeddings from the frozen encoder, [S x E], no gradient.
Tensor segment_features(const VideoEncoder& encoder, const VideoClip& video, std::size_t segments,
                        const DimSchedule& schedule);

EmbeddingVector encode_long(const VideoClip& video, const DimSchedule& schedule, const Aggregator& agg,
                            const VideoEncoder& frozen_encoder);

// Mean of the segment rows, L2-normalized. Throws NumericError
// ("degenerate norm") when the mean vanishes.
EmbeddingVector average_pool(const Tensor& features);
EmbeddingVector average_pool_baseline(const VideoClip& video, std::size_t segments, const DimSchedule& schedule,
                                      const VideoEncoder& frozen_encoder);

}  // namespace adavid
