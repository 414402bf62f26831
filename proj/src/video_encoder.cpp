#include "adavid/video_encoder.hpp"

#include <algorithm>

#include "adavid/error.hpp"
#include "adavid/flop_counter.hpp"

namespace adavid {

VideoClip VideoClip::frame_range(std::size_t first, std::size_t count) const {
  if (first + count > frames) throw InvalidArgument("frame range exceeds clip length");
  VideoClip out{count, channels, height, width, {}};
  const auto fs = static_cast<std::ptrdiff_t>(frame_size());
  out.pixels.assign(pixels.begin() + static_cast<std::ptrdiff_t>(first) * fs,
                    pixels.begin() + static_cast<std::ptrdiff_t>(first + count) * fs);
  return out;
}

VideoClip VideoClip::select_frames(std::span<const std::size_t> indices) const {
  VideoClip out{indices.size(), channels, height, width, {}};
  const std::size_t fs = frame_size();
  out.pixels.reserve(indices.size() * fs);
  for (std::size_t t : indices) {
    if (t >= frames) throw InvalidArgument("frame index out of range");
    out.pixels.insert(out.pixels.end(), pixels.begin() + static_cast<std::ptrdiff_t>(t * fs),
                      pixels.begin() + static_cast<std::ptrdiff_t>((t + 1) * fs));
  }
  return out;
}

std::vector<std::size_t> EncoderConfig::allowed() const {
  std::vector<std::size_t> out;
  for (std::size_t w : allowed_widths(width))
    if (w % head_dim == 0) out.push_back(w);
  return out;
}

void EncoderConfig::validate() const {
  if (layers == 0 || width == 0 || head_dim == 0 || patch == 0 || image == 0 || channels == 0 || frames == 0 ||
      embed_dim == 0) {
    throw InvalidArgument("encoder config: all sizes must be positive");
  }
  if (image % patch != 0) {
    throw InvalidArgument("encoder config: image size " + std::to_string(image) + " is not a multiple of patch " +
                          std::to_string(patch));
  }
  allowed_widths(width);
  if (width % head_dim != 0) {
    throw InvalidArgument("encoder config: width " + std::to_string(width) + " is not a multiple of head_dim " +
                          std::to_string(head_dim));
  }
  if (max_frames < frames) throw InvalidArgument("encoder config: max_frames < frames");
  if (!(init_std > 0.0)) throw InvalidArgument("encoder config: init_std must be positive");
}

void EncoderConfig::write(Config& out, const std::string& p) const {
  out.set(p + "layers", std::to_string(layers));
  out.set(p + "width", std::to_string(width));
  out.set(p + "head_dim", std::to_string(head_dim));
  out.set(p + "patch", std::to_string(patch));
  out.set(p + "image", std::to_string(image));
  out.set(p + "channels", std::to_string(channels));
  out.set(p + "frames", std::to_string(frames));
  out.set(p + "max_frames", std::to_string(max_frames));
  out.set(p + "embed_dim", std::to_string(embed_dim));
  out.set(p + "attention", to_string(attention));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", init_std);
  out.set(p + "init_std", buf);
}

EncoderConfig EncoderConfig::read(const Config& in, const std::string& p) {
  EncoderConfig c;
  c.layers = in.get_size(p + "layers", c.layers);
  c.width = in.get_size(p + "width", c.width);
  c.head_dim = in.get_size(p + "head_dim", c.head_dim);
  c.patch = in.get_size(p + "patch", c.patch);
  c.image = in.get_size(p + "image", c.image);
  c.channels = in.get_size(p + "channels", c.channels);
  c.frames = in.get_size(p + "frames", c.frames);
  c.max_frames = in.get_size(p + "max_frames", c.max_frames);
  c.embed_dim = in.get_size(p + "embed_dim", c.embed_dim);
  c.attention = parse_attention_mode(in.get_string(p + "attention", to_string(c.attention)));
  c.init_std = in.get_double(p + "init_std", c.init_std);
  c.validate();
  return c;
}

VideoEncoder::VideoEncoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.width;
  const double s = config_.init_std;
  patch_embed = make_adaptive_linear(d, config_.patch_features(), rng, s);
  patch_embed.slice_in = false;
  cls = Tensor(Shape{1, d}, true);
  for (double& v : cls.mutable_data()) v = rng.normal() * s;
  pos_space = Tensor(Shape{config_.patches_per_frame(), d}, true);
  for (double& v : pos_space.mutable_data()) v = rng.normal() * s;
  pos_time = Tensor(Shape{config_.max_frames, d}, true);
  for (double& v : pos_time.mutable_data()) v = rng.normal() * s;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    layers.push_back(make_adaptive_layer(d, config_.head_dim, config_.attention, rng, s));
  }
  final_norm = make_adaptive_layernorm(d);
  head = make_adaptive_linear(config_.embed_dim, d, rng, s);
  head.slice_out = false;
}

void VideoEncoder::check_schedule(const DimSchedule& schedule) const {
  validate_schedule(schedule, config_.width, config_.layers);
  const auto allowed = config_.allowed();
  for (std::size_t w : schedule.widths)
    if (std::find(allowed.begin(), allowed.end(), w) == allowed.end()) {
      throw InvalidArgument("schedule '" + schedule.label() + "' uses width " + std::to_string(w) +
                            ", not a multiple of head_dim " + std::to_string(config_.head_dim));
    }
}

void VideoEncoder::validate_clip(const VideoClip& clip) const {
  if (clip.channels != config_.channels) {
    throw InvalidArgument("clip has " + std::to_string(clip.channels) + " channels, encoder expects " +
                          std::to_string(config_.channels));
  }
  if (clip.height % config_.patch != 0 || clip.width % config_.patch != 0) {
    throw InvalidArgument("clip size " + std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                          " is not divisible by patch " + std::to_string(config_.patch));
  }
  if (clip.height != config_.image || clip.width != config_.image) {
    throw InvalidArgument("clip size " + std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                          " does not match the encoder image size " + std::to_string(config_.image));
  }
  if (clip.frames == 0 || clip.frames > config_.max_frames) {
    throw InvalidArgument("clip has " + std::to_string(clip.frames) + " frames; supported 1.." +
                          std::to_string(config_.max_frames));
  }
  if (clip.pixels.size() != clip.frames * clip.frame_size()) throw InvalidArgument("clip pixel buffer size mismatch");
}

TokenGrid VideoEncoder::grid_for(std::size_t batch, std::size_t frames, bool with_cls) const {
  return TokenGrid{batch, frames, config_.patches_per_frame(), with_cls};
}

Tensor VideoEncoder::patchify(std::span<const VideoClip> clips, std::size_t d0, bool with_cls) const {
  if (clips.empty()) throw InvalidArgument("patchify: empty batch");
  for (const auto& c : clips) validate_clip(c);
  const std::size_t T = clips[0].frames;
  for (const auto& c : clips)
    if (c.frames != T) throw InvalidArgument("patchify: clips in a batch must have equal frame counts");
  const auto allowed = config_.allowed();
  if (std::find(allowed.begin(), allowed.end(), d0) == allowed.end()) {
    throw InvalidArgument("patchify: width " + std::to_string(d0) + " is not in the allowed set");
  }

  const std::size_t P = config_.patch, C = config_.channels, side = config_.image / P;
  const std::size_t N = side * side, F = config_.patch_features(), B = clips.size();
  std::vector<double> raw(B * T * N * F);
  std::vector<std::size_t> space_idx(B * T * N), time_idx(B * T * N);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t row = (b * T + t) * N + n;
        const std::size_t oy = (n / side) * P, ox = (n % side) * P;
        double* dst = &raw[row * F];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t py = 0; py < P; ++py)
            for (std::size_t px = 0; px < P; ++px) dst[c * P * P + py * P + px] = clips[b].at(t, c, oy + py, ox + px);
        space_idx[row] = n;
        time_idx[row] = t;
      }

  Tensor patches(Shape{B * T * N, F}, std::move(raw));
  Tensor x = adaptive_linear(patch_embed, patches, d0, F);
  x = add(x, gather_rows(slice(pos_space, N, d0), space_idx));
  x = add(x, gather_rows(slice(pos_time, config_.max_frames, d0), time_idx));
  if (!with_cls) return x;
  std::vector<std::size_t> zeros(B, 0);
  std::vector<Tensor> parts{gather_rows(slice(cls, 1, d0), zeros), x};
  return concat_rows(parts);
}

Tensor VideoEncoder::forward_layers(const Tensor& tokens, const TokenGrid& grid, const DimSchedule& schedule) const {
  check_schedule(schedule);
  if (tokens.cols() != schedule.widths.front()) {
    throw InvalidArgument("forward_layers: token width " + std::to_string(tokens.cols()) +
                          " != first schedule width " + std::to_string(schedule.widths.front()));
  }
  const LayerGroups groups = layer_groups(config_.attention, grid);
  if (tokens.rows() != grid.tokens()) throw InvalidArgument("forward_layers: token count does not match the grid");
  Tensor x = tokens;
  std::size_t cur = tokens.cols();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t d = schedule.widths[l];
    if (d != cur) x = transition(x, cur, d);
    FlopTag tag("layer" + std::to_string(l));
    x = adaptive_layer_forward(layers[l], x, d, groups);
    cur = d;
  }
  return x;
}

Tensor VideoEncoder::encode_batch(std::span<const VideoClip> clips, const DimSchedule& schedule) const {
  check_schedule(schedule);
  const TokenGrid grid = grid_for(clips.size(), clips.empty() ? 0 : clips[0].frames);
  Tensor x = forward_layers(patchify(clips, schedule.widths.front()), grid, schedule);
  const std::size_t dl = schedule.widths.back();
  std::vector<std::size_t> cls_rows(clips.size());
  for (std::size_t b = 0; b < clips.size(); ++b) cls_rows[b] = grid.cls_row(b);
  Tensor c = adaptive_layernorm(final_norm, gather_rows(x, cls_rows), dl);
  return l2_normalize_rows(adaptive_linear(head, c, config_.embed_dim, dl));
}

EmbeddingVector VideoEncoder::encode(const VideoClip& clip, const DimSchedule& schedule) const {
  NoGradGuard guard;
  Tensor e = encode_batch(std::span<const VideoClip>(&clip, 1), schedule);
  return EmbeddingVector(e.data().begin(), e.data().end());
}

NamedTensors VideoEncoder::parameters() const {
  NamedTensors out;
  patch_embed.collect(out, "video.patch_embed");
  out.emplace_back("video.cls", cls);
  out.emplace_back("video.pos_space", pos_space);
  out.emplace_back("video.pos_time", pos_time);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(out, "video.layer" + std::to_string(l));
  final_norm.collect(out, "video.final_norm");
  head.collect(out, "video.head");
  return out;
}

}  // namespace adavid
