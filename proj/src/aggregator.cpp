#include "adavid/aggregator.hpp"

#include <algorithm>
#include <cstdio>

#include "adavid/error.hpp"

namespace adavid {

std::vector<VideoClip> segment_video(const VideoClip& video, std::size_t segments) {
  if (segments == 0 || video.frames % segments != 0) {
    throw InvalidArgument("cannot split " + std::to_string(video.frames) + " frames into " +
                          std::to_string(segments) + " equal segments");
  }
  const std::size_t len = video.frames / segments;
  std::vector<VideoClip> out;
  out.reserve(segments);
  for (std::size_t s = 0; s < segments; ++s) out.push_back(video.frame_range(s * len, len));
  return out;
}

void AggregatorConfig::validate() const {
  if (layers == 0 || width == 0 || head_dim == 0 || segments == 0 || embed_dim == 0) {
    throw InvalidArgument("aggregator config: sizes must be positive");
  }
  if (width % head_dim != 0) throw InvalidArgument("aggregator config: width must be a multiple of head_dim");
}

void AggregatorConfig::write(Config& out, const std::string& p) const {
  out.set(p + "layers", std::to_string(layers));
  out.set(p + "width", std::to_string(width));
  out.set(p + "head_dim", std::to_string(head_dim));
  out.set(p + "segments", std::to_string(segments));
  out.set(p + "embed_dim", std::to_string(embed_dim));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", init_std);
  out.set(p + "init_std", buf);
}

AggregatorConfig AggregatorConfig::read(const Config& in, const std::string& p) {
  AggregatorConfig c;
  c.layers = in.get_size(p + "layers", c.layers);
  c.width = in.get_size(p + "width", c.width);
  c.head_dim = in.get_size(p + "head_dim", c.head_dim);
  c.segments = in.get_size(p + "segments", c.segments);
  c.embed_dim = in.get_size(p + "embed_dim", c.embed_dim);
  c.init_std = in.get_double(p + "init_std", c.init_std);
  c.validate();
  return c;
}

Aggregator::Aggregator(const AggregatorConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t w = config_.width;
  const double s = config_.init_std;
  input_proj = make_adaptive_linear(w, config_.embed_dim, rng, s);
  cls = Tensor(Shape{1, w}, true);
  for (double& v : cls.mutable_data()) v = rng.normal() * s;
  seg_pos = Tensor(Shape{config_.segments, w}, true);
  for (double& v : seg_pos.mutable_data()) v = rng.normal() * s;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    layers.push_back(make_adaptive_layer(w, config_.head_dim, AttentionMode::kJoint, rng, s));
  }
  final_norm = make_adaptive_layernorm(w);
  head = make_adaptive_linear(config_.embed_dim, w, rng, s);
}

Tensor Aggregator::forward(const Tensor& features, std::size_t batch) const {
  if (batch == 0 || features.rows() % batch != 0) throw InvalidArgument("aggregator: rows not divisible by batch");
  const std::size_t S = features.rows() / batch, w = config_.width;
  if (S > config_.segments) {
    throw InvalidArgument("aggregator: " + std::to_string(S) + " segments exceed the configured " +
                          std::to_string(config_.segments));
  }
  if (features.cols() != config_.embed_dim) throw InvalidArgument("aggregator: feature width != embed_dim");
  std::vector<std::size_t> pos_idx(features.rows());
  for (std::size_t i = 0; i < pos_idx.size(); ++i) pos_idx[i] = i % S;
  Tensor x = add(linear(features, input_proj.weight, input_proj.bias), gather_rows(seg_pos, pos_idx));
  std::vector<std::size_t> zeros(batch, 0);
  std::vector<Tensor> parts{gather_rows(cls, zeros), x};
  x = concat_rows(parts);
  const TokenGrid grid{batch, 1, S, true};
  const LayerGroups groups = layer_groups(AttentionMode::kJoint, grid);
  for (const auto& layer : layers) x = adaptive_layer_forward(layer, x, w, groups);
  std::vector<std::size_t> cls_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) cls_rows[b] = grid.cls_row(b);
  Tensor c = adaptive_layernorm(final_norm, gather_rows(x, cls_rows), w);
  return l2_normalize_rows(linear(c, head.weight, head.bias));
}

NamedTensors Aggregator::parameters() const {
  NamedTensors out;
  input_proj.collect(out, "agg.input_proj");
  out.emplace_back("agg.cls", cls);
  out.emplace_back("agg.seg_pos", seg_pos);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(out, "agg.layer" + std::to_string(l));
  final_norm.collect(out, "agg.final_norm");
  head.collect(out, "agg.head");
  return out;
}

Tensor segment_features(const VideoEncoder& encoder, const VideoClip& video, std::size_t segments,
                        const DimSchedule& schedule) {
  NoGradGuard guard;
  const auto clips = segment_video(video, segments);
  return encoder.encode_batch(clips, schedule).detach();
}

EmbeddingVector encode_long(const VideoClip& video, const DimSchedule& schedule, const Aggregator& agg,
                            const VideoEncoder& frozen_encoder) {
  const Tensor features = segment_features(frozen_encoder, video, agg.config().segments, schedule);
  NoGradGuard guard;
  const Tensor e = agg.forward(features, 1);
  return EmbeddingVector(e.data().begin(), e.data().end());
}

EmbeddingVector average_pool(const Tensor& features) {
  NoGradGuard guard;
  if (features.dim() != 2 || features.rows() == 0) throw InvalidArgument("average_pool: need [S x E] features");
  // columns summed in sorted order so any segment permutation gives the same bits
  const std::size_t S = features.rows(), E = features.cols();
  std::vector<double> mean(E), col(S);
  for (std::size_t c = 0; c < E; ++c) {
    for (std::size_t r = 0; r < S; ++r) col[r] = features.at(r, c);
    std::sort(col.begin(), col.end());
    double sum = 0.0;
    for (double v : col) sum += v;
    mean[c] = sum / static_cast<double>(S);
  }
  const Tensor e = l2_normalize_rows(Tensor(Shape{1, E}, std::move(mean)));
  return EmbeddingVector(e.data().begin(), e.data().end());
}

EmbeddingVector average_pool_baseline(const VideoClip& video, std::size_t segments, const DimSchedule& schedule,
                                      const VideoEncoder& frozen_encoder) {
  return average_pool(segment_features(frozen_encoder, video, segments, schedule));
}

}  // namespace adavid
