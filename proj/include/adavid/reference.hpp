#pragma once

// Oracles for the adaptive blocks, shared by the tests and selfcheck:
//  * straight-line loops over raw buffers (no Tensor ops, no slicing), written
//    with the same floating-point operation order as the kernels so results
//    can be compared bit for bit;
//  * materialization of a d-wide standalone block by copying the sliced
//    sub-tensors out of full-width parameters.

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "adavid/adaptive.hpp"
#include "adavid/rng.hpp"
#include "adavid/tensor.hpp"
#include "adavid/video_encoder.hpp"

namespace adavid::reference {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  explicit Mat(const Tensor& t) : rows(t.rows()), cols(t.cols()), v(t.data().begin(), t.data().end()) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

// y = x W^T + b using the full parameter tensors.
inline Mat linear(const Mat& x, const Tensor& w, const Tensor& b) {
  const std::size_t out = w.rows(), in = w.cols();
  Mat y(x.rows, out);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t k = 0; k < in; ++k) s += x(i, k) * w.data()[o * in + k];
      y(i, o) = s + b.data()[o];
    }
  return y;
}

inline Mat layer_norm(const Mat& x, const Tensor& gamma, const Tensor& beta, double eps) {
  Mat y(x.rows, x.cols);
  const double inv_d = 1.0 / static_cast<double>(x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) total += x(r, c);
    const double mu = total * inv_d;
    double sq = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) sq += (x(r, c) - mu) * (x(r, c) - mu);
    const double rs = 1.0 / std::sqrt(sq * inv_d + eps);
    for (std::size_t c = 0; c < x.cols; ++c) y(r, c) = ((x(r, c) - mu) * rs) * gamma.data()[c] + beta.data()[c];
  }
  return y;
}

inline Mat gelu(const Mat& x) {
  Mat y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double v = x.v[i];
    y.v[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
  }
  return y;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat y(a.rows, a.cols);
  for (std::size_t i = 0; i < a.v.size(); ++i) y.v[i] = a.v[i] + b.v[i];
  return y;
}

// Key rows (ascending) that query row r may attend to; empty = no output.
using KeyFn = std::function<std::vector<std::size_t>(std::size_t)>;

inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t head_dim, const KeyFn& keys_of) {
  const std::size_t d = q.cols, heads = d / head_dim;
  const double scl = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Mat out(q.rows, d);
  for (std::size_t r = 0; r < q.rows; ++r) {
    const auto keys = keys_of(r);
    if (keys.empty()) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> p(keys.size());
      for (std::size_t j = 0; j < keys.size(); ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < head_dim; ++c) s += q(r, h * head_dim + c) * k(keys[j], h * head_dim + c);
        p[j] = s * scl;
      }
      double mx = p[0];
      for (double s : p) mx = std::max(mx, s);
      double total = 0.0;
      for (double& s : p) {
        s = std::exp(s - mx);
        total += s;
      }
      for (double& s : p) s /= total;
      for (std::size_t c = 0; c < head_dim; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < keys.size(); ++j) acc += p[j] * v(keys[j], h * head_dim + c);
        out(r, h * head_dim + c) = acc;
      }
    }
  }
  return out;
}

inline Mat mha(const AdaptiveMha& p, const Mat& x, const KeyFn& keys_of) {
  Mat q = linear(x, p.q.weight, p.q.bias);
  Mat k = linear(x, p.k.weight, p.k.bias);
  Mat v = linear(x, p.v.weight, p.v.bias);
  return linear(attention(q, k, v, p.head_dim, keys_of), p.o.weight, p.o.bias);
}

inline Mat ffn(const AdaptiveFfn& p, const Mat& x) {
  return linear(gelu(linear(x, p.fc1.weight, p.fc1.bias)), p.fc2.weight, p.fc2.bias);
}

// Single-item token layout: row 0 is cls, patch (t, n) is row 1 + t*N + n.
struct Grid {
  std::size_t frames, patches;
};

inline KeyFn dense_keys(std::size_t rows) {
  return [rows](std::size_t) {
    std::vector<std::size_t> all(rows);
    for (std::size_t i = 0; i < rows; ++i) all[i] = i;
    return all;
  };
}

inline KeyFn space_keys(Grid g) {
  return [g](std::size_t r) {
    std::vector<std::size_t> keys;
    if (r == 0) {
      for (std::size_t i = 0; i < 1 + g.frames * g.patches; ++i) keys.push_back(i);
      return keys;
    }
    const std::size_t t = (r - 1) / g.patches;
    keys.push_back(0);
    for (std::size_t n = 0; n < g.patches; ++n) keys.push_back(1 + t * g.patches + n);
    return keys;
  };
}

inline KeyFn time_keys(Grid g) {
  return [g](std::size_t r) {
    std::vector<std::size_t> keys{0};
    if (r == 0) return keys;
    const std::size_t n = (r - 1) % g.patches;
    for (std::size_t t = 0; t < g.frames; ++t) keys.push_back(1 + t * g.patches + n);
    return keys;
  };
}

// Vanilla full-width pre-norm layer over a single item with cls.
inline Mat layer(const AdaptiveTransformerLayer& p, const Mat& x, Grid g) {
  Mat h = x;
  if (p.mode == AttentionMode::kSpaceTime) {
    h = add(h, mha(p.attn, layer_norm(h, p.norm_attn.gamma, p.norm_attn.beta, p.norm_attn.eps), space_keys(g)));
    h = add(h, mha(p.time_attn, layer_norm(h, p.norm_time.gamma, p.norm_time.beta, p.norm_time.eps), time_keys(g)));
  } else {
    h = add(h, mha(p.attn, layer_norm(h, p.norm_attn.gamma, p.norm_attn.beta, p.norm_attn.eps), dense_keys(h.rows)));
  }
  return add(h, ffn(p.ffn, layer_norm(h, p.norm_ffn.gamma, p.norm_ffn.beta, p.norm_ffn.eps)));
}

// ---- materialized sub-models ------------------------------------------------

inline Tensor copy_block(const Tensor& t, std::size_t rows, std::size_t cols) {
  if (t.dim() == 1) {
    std::vector<double> v(t.data().begin(), t.data().begin() + static_cast<std::ptrdiff_t>(rows));
    return Tensor(Shape{rows}, std::move(v), true);
  }
  std::vector<double> v;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) v.push_back(t.at(r, c));
  return Tensor(Shape{rows, cols}, std::move(v), true);
}

inline AdaptiveLinear materialize(const AdaptiveLinear& p, std::size_t d_out, std::size_t d_in) {
  return AdaptiveLinear{copy_block(p.weight, d_out, d_in), copy_block(p.bias, d_out, 0)};
}

inline AdaptiveLayerNorm materialize(const AdaptiveLayerNorm& p, std::size_t d) {
  return AdaptiveLayerNorm{copy_block(p.gamma, d, 0), copy_block(p.beta, d, 0), p.eps};
}

inline AdaptiveMha materialize(const AdaptiveMha& p, std::size_t d) {
  return AdaptiveMha{materialize(p.q, d, d), materialize(p.k, d, d), materialize(p.v, d, d), materialize(p.o, d, d),
                     p.head_dim};
}

inline AdaptiveFfn materialize(const AdaptiveFfn& p, std::size_t d) {
  return AdaptiveFfn{materialize(p.fc1, 4 * d, d), materialize(p.fc2, d, 4 * d)};
}

inline AdaptiveTransformerLayer materialize(const AdaptiveTransformerLayer& p, std::size_t d) {
  AdaptiveTransformerLayer out;
  out.mode = p.mode;
  out.norm_attn = materialize(p.norm_attn, d);
  out.attn = materialize(p.attn, d);
  if (p.mode == AttentionMode::kSpaceTime) {
    out.norm_time = materialize(p.norm_time, d);
    out.time_attn = materialize(p.time_attn, d);
  }
  out.norm_ffn = materialize(p.norm_ffn, d);
  out.ffn = materialize(p.ffn, d);
  return out;
}

// Overwrites every parameter with U(-scale, scale); gamma-like entries get
// 1 + U(-scale, scale).
inline void randomize(const NamedTensors& params, Rng& rng, double scale) {
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    const bool is_gamma = name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
    for (double& v : handle.mutable_data()) v = (is_gamma ? 1.0 : 0.0) + (2.0 * rng.uniform() - 1.0) * scale;
  }
}

// ---- whole encoder ----------------------------------------------------------

inline Mat normalize_rows(const Mat& x) {
  Mat y(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) sq += x(r, c) * x(r, c);
    const double n = std::sqrt(sq);
    for (std::size_t c = 0; c < x.cols; ++c) y(r, c) = x(r, c) / n;
  }
  return y;
}

// Zero-pad or truncate columns.
inline Mat resize(const Mat& x, std::size_t cols) {
  Mat y(x.rows, cols);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < std::min(cols, x.cols); ++c) y(r, c) = x(r, c);
  return y;
}

// One clip through per-layer materialized sub-models with explicit
// pad/truncate between them. With every width equal to D this is a plain
// non-adaptive encoder.
inline std::vector<double> encode(const VideoEncoder& enc, const VideoClip& clip, const std::vector<std::size_t>& widths) {
  const auto& cfg = enc.config();
  const std::size_t P = cfg.patch, side = clip.width / P, N = side * side, T = clip.frames;
  const std::size_t F = P * P * clip.channels, d0 = widths.front();

  Mat raw(T * N, F);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t gy = 0; gy < side; ++gy)
      for (std::size_t gx = 0; gx < side; ++gx)
        for (std::size_t c = 0; c < clip.channels; ++c)
          for (std::size_t py = 0; py < P; ++py)
            for (std::size_t px = 0; px < P; ++px)
              raw(t * N + gy * side + gx, (c * P + py) * P + px) = clip.at(t, c, gy * P + py, gx * P + px);

  const AdaptiveLinear embed = materialize(enc.patch_embed, d0, F);
  const Mat proj = linear(raw, embed.weight, embed.bias);
  const Tensor ps = copy_block(enc.pos_space, N, d0), pt = copy_block(enc.pos_time, T, d0);
  const Tensor cls = copy_block(enc.cls, 1, d0);
  Mat x(1 + T * N, d0);
  for (std::size_t c = 0; c < d0; ++c) x(0, c) = cls.at(0, c);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < d0; ++c) x(1 + t * N + n, c) = (proj(t * N + n, c) + ps.at(n, c)) + pt.at(t, c);

  for (std::size_t l = 0; l < widths.size(); ++l) {
    x = resize(x, widths[l]);
    x = layer(materialize(enc.layers[l], widths[l]), x, Grid{T, N});
  }
  const std::size_t dl = widths.back();
  Mat c(1, dl);
  for (std::size_t i = 0; i < dl; ++i) c(0, i) = x(0, i);
  const AdaptiveLayerNorm ln = materialize(enc.final_norm, dl);
  const AdaptiveLinear head = materialize(enc.head, enc.head.out_features(), dl);
  return normalize_rows(linear(layer_norm(c, ln.gamma, ln.beta, ln.eps), head.weight, head.bias)).v;
}

}  // namespace adavid::reference
