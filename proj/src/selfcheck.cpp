#include "adavid/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <map>

#include "adavid/aggregator.hpp"
#include "adavid/dataset.hpp"
#include "adavid/eval.hpp"
#include "adavid/flop_counter.hpp"
#include "adavid/flops.hpp"
#include "adavid/instrumented.hpp"
#include "adavid/io.hpp"
#include "adavid/reference.hpp"
#include "adavid/training.hpp"

namespace adavid {

namespace ref = reference;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * scale;
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

bool same(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && same(a.data(), b.data()); }

std::vector<double> dense_grad(const Tensor& t) {
  if (!t.has_grad()) return std::vector<double>(t.numel(), 0.0);
  auto g = t.grad();
  return {g.begin(), g.end()};
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

VideoClip random_clip(std::size_t frames, std::size_t image, Rng& rng) {
  VideoClip clip{frames, 3, image, image, {}};
  clip.pixels.resize(clip.frames * clip.frame_size());
  for (double& v : clip.pixels) v = rng.uniform();
  return clip;
}

// Runs `body`; any exception becomes a failing result.
template <class F>
CheckResult guarded(const std::string& name, F body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return CheckResult{name, false, std::string("threw: ") + e.what()};
  }
}

AdaptiveTransformerLayer random_layer(std::size_t width, std::size_t head_dim, AttentionMode mode, Rng& rng) {
  auto layer = make_adaptive_layer(width, head_dim, mode, rng, 0.02);
  NamedTensors params;
  layer.collect(params, "layer");
  ref::randomize(params, rng, 0.3);
  return layer;
}

}  // namespace

std::vector<CheckResult> check_table1() {
  std::vector<CheckResult> out;
  for (const auto& row : table1_rows()) {
    const auto report = schedule_flops(named_schedule(row.schedule, kTable1Width, kTable1Layers), kTable1Frames,
                                       kTable1Patches, FlopsMode::kSpaceTime);
    const double got = static_cast<double>(report.total) / 1e10;
    const double rel = std::abs(got - row.printed) / row.printed;
    out.push_back({"table1 " + row.config, rel <= 0.01,
                   "computed " + num(got) + "e10, printed " + num(row.printed) + "e10, rel " + num(rel)});
  }
  return out;
}

CheckResult check_flops_reconciliation() {
  const std::string name = "flops reconciliation";
  return guarded(name, [&] {
    std::size_t cases = 0;
    for (auto mode : {AttentionMode::kJoint, AttentionMode::kSpaceTime})
      for (std::size_t side : {2, 4})
        for (std::size_t d : {16, 32, 64}) {
          EncoderConfig c;
          c.layers = 12;
          c.width = d;
          c.head_dim = d / 4;
          c.patch = 4;
          c.image = 4 * side;
          c.frames = 4;
          c.max_frames = 4;
          c.embed_dim = 8;
          c.attention = mode;
          Rng rng(derive_seed(d * 10 + side, to_string(mode)));
          VideoEncoder enc(c, rng);
          for (std::size_t t : {1, 2, 4}) {
            const auto clip = random_clip(t, 4 * side, rng);
            for (const auto& sname : schedule_names()) {
              const auto report = instrumented_report(enc, clip, named_schedule(sname, d, 12));
              ++cases;
              if (report.instrumented.value() != report.total) {
                return CheckResult{name, false,
                                   sname + " T=" + std::to_string(t) + " N=" + std::to_string(side * side) +
                                       " D=" + std::to_string(d) + " " + to_string(mode) + ": counter " +
                                       std::to_string(*report.instrumented) + " vs formula " +
                                       std::to_string(report.total)};
              }
            }
          }
        }
    return CheckResult{name, true, std::to_string(cases) + " cases equal"};
  });
}

CheckResult check_slicing_oracles() {
  const std::string name = "slicing oracles";
  return guarded(name, [&] {
    const std::size_t D = 32, H = 8;
    std::size_t compared = 0;
    auto fail = [&](const std::string& what, std::size_t draw, std::size_t d) {
      return CheckResult{name, false, what + " differs (draw " + std::to_string(draw) + ", d " + std::to_string(d) + ")"};
    };
    for (std::size_t draw = 0; draw < 20; ++draw) {
      const auto mode = draw % 2 == 0 ? AttentionMode::kSpaceTime : AttentionMode::kJoint;
      Rng rng(derive_seed(draw, "selfcheck/slicing"));
      const auto layer = random_layer(D, H, mode, rng);
      for (std::size_t d : allowed_widths(D)) {
        const TokenGrid grid{2, 2, 3, true};
        const Tensor x = random_tensor({grid.tokens(), d}, rng);
        const auto small = ref::materialize(layer, d);
        if (!same(adaptive_linear(layer.attn.q, x, d, d), adaptive_linear(small.attn.q, x, d, d)))
          return fail("linear", draw, d);
        if (!same(adaptive_layernorm(layer.norm_attn, x, d), adaptive_layernorm(small.norm_attn, x, d)))
          return fail("layer norm", draw, d);
        if (!same(adaptive_mha(layer.attn, x, d), adaptive_mha(small.attn, x, d))) return fail("mha", draw, d);
        if (!same(adaptive_ffn(layer.ffn, x, d), adaptive_ffn(small.ffn, x, d))) return fail("ffn", draw, d);
        if (!same(adaptive_layer_forward(layer, x, d, grid), adaptive_layer_forward(small, x, d, grid)))
          return fail("layer", draw, d);
        compared += 5;
      }
      // full width against straight-line loops
      const TokenGrid one{1, 2, 3, true};
      const Tensor x = random_tensor({one.tokens(), D}, rng);
      const ref::Mat mx(x);
      if (!same(adaptive_linear(layer.attn.q, x, D, D).data(), ref::linear(mx, layer.attn.q.weight, layer.attn.q.bias).v))
        return fail("full-width linear", draw, D);
      if (!same(adaptive_layernorm(layer.norm_attn, x, D).data(),
                ref::layer_norm(mx, layer.norm_attn.gamma, layer.norm_attn.beta, layer.norm_attn.eps).v))
        return fail("full-width layer norm", draw, D);
      if (!same(adaptive_mha(layer.attn, x, D).data(), ref::mha(layer.attn, mx, ref::dense_keys(mx.rows)).v))
        return fail("full-width mha", draw, D);
      if (!same(adaptive_ffn(layer.ffn, x, D).data(), ref::ffn(layer.ffn, mx).v)) return fail("full-width ffn", draw, D);
      if (!same(adaptive_layer_forward(layer, x, D, one).data(), ref::layer(layer, mx, ref::Grid{2, 3}).v))
        return fail("full-width layer", draw, D);
      compared += 5;
    }
    return CheckResult{name, true, std::to_string(compared) + " block comparisons bit-exact"};
  });
}

CheckResult check_end_to_end_gradient() {
  const std::string name = "end-to-end gradient";
  return guarded(name, [&] {
    EncoderConfig vc;
    vc.layers = 2;
    vc.width = 16;
    vc.head_dim = 8;
    vc.patch = 2;
    vc.image = 4;
    vc.frames = 2;
    vc.max_frames = 2;
    vc.embed_dim = 8;
    TextConfig tc;
    tc.layers = 1;
    tc.width = 16;
    tc.head_dim = 8;
    tc.max_len = 4;
    tc.embed_dim = 8;
    const std::vector<std::string> captions{"red right", "blue left"};
    const Vocab vocab = Vocab::build(captions);
    auto model = make_encoder_pair(vc, tc, vocab, 2);
    Rng rng(12);
    for (auto& [n, t] : model.parameters())
      for (double& x : Tensor(t).mutable_data()) x += 0.3 * (2.0 * rng.uniform() - 1.0);
    std::vector<VideoClip> clips{random_clip(2, 4, rng), random_clip(2, 4, rng)};
    const TextBatch text = make_text_batch(captions, vocab, 4);
    const DimSchedule sched{{16, 8}, ""};
    auto f = [&] { return info_nce(model.video.encode_batch(clips, sched), model.text.encode(text), 0.5); };
    backward(f());
    double worst = 0.0, key_bias = 0.0;
    std::size_t entries = 0;
    for (auto& [pname, t] : model.parameters()) {
      Tensor p = t;
      const auto analytic = dense_grad(p);
      auto values = p.mutable_data();
      NoGradGuard guard;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + 1e-5;
        const double up = f().item();
        values[i] = saved - 1e-5;
        const double down = f().item();
        values[i] = saved;
        const double numeric = (up - down) / 2e-5;
        // key biases have an exactly zero gradient; only rounding is measured
        if (pname.ends_with(".k.bias")) {
          key_bias = std::max({key_bias, std::abs(analytic[i]), std::abs(numeric)});
          continue;
        }
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        ++entries;
      }
    }
    const bool ok = worst < 1e-4 && key_bias < 1e-8;
    return CheckResult{name, ok,
                       "max relative error " + num(worst) + " over " + std::to_string(entries) +
                           " entries; key-bias max |g| " + num(key_bias)};
  });
}

CheckResult check_gradient_locality() {
  const std::string name = "gradient locality";
  return guarded(name, [&] {
    const std::size_t D = 32, H = 8, d = D / 4;
    std::size_t checked = 0;
    for (auto mode : {AttentionMode::kJoint, AttentionMode::kSpaceTime}) {
      Rng rng(derive_seed(21, to_string(mode)));
      const auto layer = random_layer(D, H, mode, rng);
      const TokenGrid grid{1, 2, 3, true};
      const Tensor x = random_tensor({grid.tokens(), d}, rng);
      const Tensor c = random_tensor({grid.tokens(), d}, rng, 1.0, false);
      backward(sum(mul(adaptive_layer_forward(layer, x, d, grid), c)));
      NamedTensors params;
      layer.collect(params, "layer");
      for (const auto& [pname, t] : params) {
        const auto g = dense_grad(t);
        std::size_t rows_active = d, cols_active = d;
        if (pname.find("fc1.") != std::string::npos) rows_active = 4 * d;
        if (pname.find("fc2.weight") != std::string::npos) cols_active = 4 * d;
        const std::size_t cols = t.dim() == 2 ? t.cols() : 1;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t r = t.dim() == 2 ? i / cols : i;
          const std::size_t col = t.dim() == 2 ? i % cols : 0;
          const bool inside = r < rows_active && (t.dim() == 1 || col < cols_active);
          if (!inside && g[i] != 0.0) return CheckResult{name, false, pname + " has gradient outside the slice"};
          ++checked;
        }
      }
    }
    // whole encoder at d-quarter
    EncoderConfig cfg;
    cfg.layers = 4;
    cfg.width = 32;
    cfg.head_dim = 8;
    cfg.patch = 4;
    cfg.image = 8;
    cfg.frames = 3;
    cfg.max_frames = 4;
    cfg.embed_dim = 8;
    Rng rng(60);
    VideoEncoder enc(cfg, rng);
    ref::randomize(enc.parameters(), rng, 0.3);
    std::vector<VideoClip> clips{random_clip(3, 8, rng), random_clip(3, 8, rng)};
    backward(sum(enc.encode_batch(clips, named_schedule("d-quarter", 32, 4))));
    for (const auto& [pname, t] : enc.parameters()) {
      const auto g = dense_grad(t);
      const std::size_t rows = t.dim() == 2 ? t.rows() : t.numel();
      const std::size_t cols = t.dim() == 2 ? t.cols() : 1;
      std::size_t row_limit = 8, col_limit = 8;
      if (pname.find("fc1") != std::string::npos) row_limit = 32;
      if (pname.find("fc2") != std::string::npos) col_limit = 32;
      if (pname.find("patch_embed") != std::string::npos) col_limit = cols;
      if (pname.find("head") != std::string::npos) row_limit = rows;
      if (pname.find("pos_") != std::string::npos || pname == "video.cls") row_limit = rows;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const bool outside = t.dim() == 1 ? r >= row_limit : (r >= row_limit || c >= col_limit);
          if (outside && g[r * cols + c] != 0.0)
            return CheckResult{name, false, pname + " has gradient outside the slice"};
          ++checked;
        }
    }
    return CheckResult{name, true, std::to_string(checked) + " entries checked at d = D/4"};
  });
}

CheckResult check_sampler_law() {
  const std::string name = "sampler law";
  return guarded(name, [&] {
    // P(max of L draws from 4 levels = j) = (j/4)^L - ((j-1)/4)^L, L = 4
    const std::size_t L = 4, D = 64, draws = 10000;
    const auto allowed = allowed_widths(D);  // descending
    const double p[4] = {175.0 / 256, 65.0 / 256, 15.0 / 256, 1.0 / 256};
    Rng rng(derive_seed(0, "selfcheck/sampler"));
    std::map<std::size_t, double> count;
    for (std::size_t i = 0; i < draws; ++i) {
      const auto s = sample_schedule(ScheduleStrategy{}, D, L, allowed, rng);
      for (std::size_t l = 0; l < L; ++l) {
        if (std::find(allowed.begin(), allowed.end(), s.widths[l]) == allowed.end())
          return CheckResult{name, false, "width " + std::to_string(s.widths[l]) + " not allowed"};
        if (l > 0 && s.widths[l] > s.widths[l - 1]) return CheckResult{name, false, s.label() + " increases"};
      }
      count[s.widths.front()] += 1.0;
    }
    double chi2 = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      const double e = p[j] * static_cast<double>(draws);
      chi2 += (count[allowed[j]] - e) * (count[allowed[j]] - e) / e;
    }
    const double critical = 11.345;  // df 3, 1%
    return CheckResult{name, chi2 < critical, "chi2 " + num(chi2) + " (critical " + num(critical) + ", df 3)"};
  });
}

std::vector<CheckResult> check_module_invariants() {
  std::vector<CheckResult> out;

  out.push_back(guarded("info_nce examples", [] {
    Tensor same4(Shape{4, 2}, std::vector<double>(8, std::sqrt(0.5)));
    const double a = info_nce(same4, same4, 0.05).item();
    Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
    const double b = info_nce(eye, eye, 0.05).item();
    const bool ok = std::abs(a - std::log(4.0)) < 1e-12 && std::abs(b / std::log1p(std::exp(-20.0)) - 1.0) < 1e-6;
    return CheckResult{"info_nce examples", ok, "identical " + num(a) + ", orthogonal " + num(b)};
  }));

  out.push_back(guarded("adamw decoupled decay", [] {
    Tensor w(Shape{1}, {2.0}, true);
    AdamW opt({{"w", w}}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
    backward(scale(sum(w), 0.0));
    opt.step();
    // zero gradient: only decay acts, w <- w (1 - lr wd)
    const bool ok = w.data()[0] == 2.0 * (1.0 - 0.1 * 0.5);
    return CheckResult{"adamw decoupled decay", ok, "w = " + num(w.data()[0])};
  }));

  out.push_back(guarded("transition pad/truncate", [] {
    Rng rng(15);
    const Tensor x = random_tensor({3, 8}, rng);
    const bool round = same(transition(transition(x, 8, 16), 16, 8), x);
    const Tensor cut = transition(transition(x, 8, 4), 4, 8);
    bool zeros = true;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 4; c < 8; ++c) zeros = zeros && cut.at(r, c) == 0.0;
    return CheckResult{"transition pad/truncate", round && zeros, ""};
  }));

  out.push_back(guarded("encoder vs materialized chain", [] {
    EncoderConfig cfg;
    cfg.layers = 4;
    cfg.width = 32;
    cfg.head_dim = 8;
    cfg.patch = 4;
    cfg.image = 8;
    cfg.frames = 3;
    cfg.max_frames = 4;
    cfg.embed_dim = 8;
    Rng rng(20);
    VideoEncoder enc(cfg, rng);
    ref::randomize(enc.parameters(), rng, 0.3);
    const auto clip = random_clip(3, 8, rng);
    std::vector<DimSchedule> schedules;
    for (const auto& n : valid_schedule_names(32, 4)) schedules.push_back(named_schedule(n, 32, 4));
    schedules.push_back(DimSchedule{{8, 32, 8, 32}, ""});
    for (const auto& s : schedules) {
      const auto e = enc.encode(clip, s);
      if (!same(e, ref::encode(enc, clip, s.widths)))
        return CheckResult{"encoder vs materialized chain", false, s.label() + " differs"};
      double n = 0.0;
      for (double v : e) n += v * v;
      if (std::abs(std::sqrt(n) - 1.0) > 1e-9)
        return CheckResult{"encoder vs materialized chain", false, s.label() + " not unit norm"};
    }
    return CheckResult{"encoder vs materialized chain", true, std::to_string(schedules.size()) + " schedules"};
  }));

  out.push_back(guarded("counting leaves outputs unchanged", [] {
    EncoderConfig cfg;
    cfg.layers = 4;
    cfg.width = 16;
    cfg.head_dim = 4;
    cfg.patch = 4;
    cfg.image = 8;
    cfg.frames = 4;
    cfg.max_frames = 4;
    cfg.embed_dim = 8;
    Rng rng(5);
    VideoEncoder enc(cfg, rng);
    const auto clip = random_clip(4, 8, rng);
    const auto s = named_schedule("d-dec", 16, 4);
    const auto plain = enc.encode(clip, s);
    FlopCounter counter;
    EmbeddingVector counted;
    {
      FlopScope scope(&counter);
      counted = enc.encode(clip, s);
    }
    return CheckResult{"counting leaves outputs unchanged", same(plain, counted) && counter.matmul_total() > 0, ""};
  }));

  out.push_back(guarded("average pool order invariance", [] {
    Rng rng(7);
    NoGradGuard guard;
    const Tensor f = l2_normalize_rows(random_tensor({4, 6}, rng, 1.0, false));
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    const Tensor g = gather_rows(f, perm);
    return CheckResult{"average pool order invariance", same(average_pool(f), average_pool(g)), ""};
  }));

  out.push_back(guarded("retrieval tie ranks", [] {
    // two identical gallery items: the lower index ranks first
    Embeddings gallery(10, EmbeddingVector{0.0, 1.0});
    gallery[3] = gallery[5] = EmbeddingVector{1.0, 0.0};
    const EmbeddingVector q{1.0, 0.0};
    const bool ok = rank_of(q, gallery, 3) == 1 && rank_of(q, gallery, 5) == 2 && rank_of(q, gallery, 0) == 3;
    return CheckResult{"retrieval tie ranks", ok, ""};
  }));

  out.push_back(guarded("checkpoint round trip", [] {
    Rng rng(1);
    Checkpoint c;
    c.config.set("kind", "encoder");
    c.tensors = {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({5}, rng)}};
    c.blobs["vocab"] = "red\t3\n";
    const std::string bytes = serialize_checkpoint(c);
    return CheckResult{"checkpoint round trip", serialize_checkpoint(deserialize_checkpoint(bytes)) == bytes, ""};
  }));

  out.push_back(guarded("dataset regeneration", [] {
    SyntheticSpec s;
    s.samples_per_class = 2;
    s.test_per_class = 1;
    s.long_sets = 2;
    s.long_test_sets = 1;
    const auto a = generate_synthetic(s), b = generate_synthetic(s);
    bool ok = a.train.clips.size() == b.train.clips.size();
    for (std::size_t i = 0; ok && i < a.train.clips.size(); ++i)
      ok = same(a.train.clips[i].clip.pixels, b.train.clips[i].clip.pixels);
    for (std::size_t i = 0; ok && i < a.test.long_videos.size(); ++i)
      ok = same(a.test.long_videos[i].video.pixels, b.test.long_videos[i].video.pixels);
    return CheckResult{"dataset regeneration", ok, ""};
  }));

  out.push_back(guarded("fixed d-full reduces to full-width encoding", [] {
    EncoderConfig vc;
    vc.layers = 2;
    vc.width = 16;
    vc.head_dim = 8;
    vc.patch = 4;
    vc.image = 8;
    vc.frames = 2;
    vc.max_frames = 2;
    vc.embed_dim = 8;
    Rng rng(3);
    VideoEncoder enc(vc, rng);
    const auto clip = random_clip(2, 8, rng);
    Rng srng(4);
    const auto s = sample_schedule(ScheduleStrategy::parse("fixed:d-full"), 16, 2, 8, srng);
    return CheckResult{"fixed d-full reduces to full-width encoding",
                       s.widths == std::vector<std::size_t>{16, 16} && same(enc.encode(clip, s), ref::encode(enc, clip, {16, 16})),
                       ""};
  }));

  return out;
}

std::vector<CheckResult> run_selfcheck(const std::function<void(const CheckResult&)>& sink) {
  std::vector<CheckResult> all;
  auto add = [&](CheckResult r) {
    if (sink) sink(r);
    all.push_back(std::move(r));
  };
  for (auto& r : check_table1()) add(std::move(r));
  add(check_flops_reconciliation());
  add(check_slicing_oracles());
  add(check_end_to_end_gradient());
  add(check_gradient_locality());
  add(check_sampler_law());
  for (auto& r : check_module_invariants()) add(std::move(r));
  return all;
}

std::string format_result(const CheckResult& result) {
  std::string line = std::string(result.pass ? "PASS" : "FAIL") + "  " + result.name;
  if (!result.detail.empty()) line += "  (" + result.detail + ")";
  return line;
}

}  // namespace adavid
