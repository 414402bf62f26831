#include "adavid/flops.hpp"

#include "adavid/error.hpp"
#include "adavid/flop_counter.hpp"

namespace adavid {
namespace {

using u64 = std::uint64_t;

u64 mul(std::initializer_list<u64> xs) {
  u64 out = 1;
  for (u64 x : xs) out = checked_mul(out, x);
  return out;
}

u64 add(std::initializer_list<u64> xs) {
  u64 out = 0;
  for (u64 x : xs) out = checked_add(out, x);
  return out;
}

void require_positive(std::initializer_list<u64> xs) {
  for (u64 x : xs)
    if (x == 0) throw InvalidArgument("FLOPs geometry must be positive");
}

}  // namespace

u64 mha_flops(u64 n, u64 d) {
  require_positive({n, d});
  return add({mul({8, n, d, d}), mul({4, n, n, d})});
}

u64 ffn_flops(u64 n, u64 d) {
  require_positive({n, d});
  return mul({16, n, d, d});
}

u64 dense_layer_flops(u64 t, u64 n, u64 d) {
  require_positive({t, n, d});
  return add({mul({24, t, n, d, d}), mul({4, t, t, n, n, d})});
}

u64 spacetime_layer_flops(u64 t, u64 n, u64 d) {
  require_positive({t, n, d});
  return add({mul({32, t, n, d, d}), mul({4, t, n, d, add({n, t})})});
}

u64 hier_layer_flops(u64 t, u64 n, u64 d, u64 s) {
  require_positive({t, n, d, s});
  if (t % s != 0) throw InvalidArgument("segment count " + std::to_string(s) + " does not divide " + std::to_string(t) + " frames");
  return add({mul({32, t, n, d, d}), mul({4, t, n, d, add({n, t / s})})});
}

std::string to_string(FlopsMode mode) {
  switch (mode) {
    case FlopsMode::kDense: return "dense";
    case FlopsMode::kSpaceTime: return "spacetime";
    case FlopsMode::kHierarchical: return "hier";
  }
  return "?";
}

FlopsMode parse_flops_mode(const std::string& text) {
  if (text == "dense" || text == "plain") return FlopsMode::kDense;
  if (text == "spacetime" || text == "space-time") return FlopsMode::kSpaceTime;
  if (text == "hier" || text == "hierarchical") return FlopsMode::kHierarchical;
  throw InvalidArgument("unknown FLOPs mode '" + text + "' (expected dense, spacetime or hier)");
}

u64 SubBlockFlops::total() const { return add({qkv, scores, weighted_sum, out_proj, ffn}); }

SubBlockFlops layer_breakdown(FlopsMode mode, u64 t, u64 n, u64 d, u64 s) {
  require_positive({t, n, d, s});
  SubBlockFlops f;
  const u64 tokens = mul({t, n});
  f.ffn = mul({16, tokens, d, d});
  switch (mode) {
    case FlopsMode::kDense:
      f.qkv = mul({6, tokens, d, d});
      f.scores = mul({2, tokens, tokens, d});
      f.weighted_sum = f.scores;
      f.out_proj = mul({2, tokens, d, d});
      break;
    case FlopsMode::kSpaceTime:
    case FlopsMode::kHierarchical: {
      if (t % s != 0) throw InvalidArgument("segment count does not divide the frame count");
      const u64 seg_frames = mode == FlopsMode::kSpaceTime ? t : t / s;
      // space attention over N per frame, time attention over seg_frames per position
      f.qkv = mul({12, tokens, d, d});
      f.scores = add({mul({2, tokens, n, d}), mul({2, tokens, seg_frames, d})});
      f.weighted_sum = f.scores;
      f.out_proj = mul({4, tokens, d, d});
      break;
    }
  }
  return f;
}

FlopsReport schedule_flops(const DimSchedule& schedule, u64 frames, u64 patches, FlopsMode mode, u64 segments) {
  if (mode != FlopsMode::kHierarchical) segments = 1;
  FlopsReport report;
  report.schedule = schedule.label();
  report.frames = frames;
  report.patches = patches;
  report.segments = segments;
  report.mode = mode;
  for (std::size_t w : schedule.widths) {
    LayerFlops lf;
    lf.width = w;
    lf.parts = layer_breakdown(mode, frames, patches, w, segments);
    switch (mode) {
      case FlopsMode::kDense: lf.total = dense_layer_flops(frames, patches, w); break;
      case FlopsMode::kSpaceTime: lf.total = spacetime_layer_flops(frames, patches, w); break;
      case FlopsMode::kHierarchical: lf.total = hier_layer_flops(frames, patches, w, segments); break;
    }
    report.total = checked_add(report.total, lf.total);
    report.layers.push_back(lf);
  }
  return report;
}

const std::vector<Table1Row>& table1_rows() {
  static const std::vector<Table1Row> rows = {
      {"d-768", "d-full", 18.3},          {"d-576", "d-3q", 10.4},           {"d-384", "d-half", 4.7},
      {"d-192", "d-quarter", 1.2},        {"d-dec", "d-dec", 8.7},           {"d-dec-high", "d-dec-high", 11.2},
      {"d-dec-low", "d-dec-low", 5.5},    {"d-inc", "d-inc", 8.7},           {"d-inc-high", "d-inc-high", 11.2},
      {"d-inc-low", "d-inc-low", 5.5},
  };
  return rows;
}

}  // namespace adavid
