#pragma once

// Closed-form FLOPs of transformer layers (FLOPs = 2 x multiply-accumulates
// of matmuls; bias, norm, softmax and residual work is not counted).
//
//   attention over N tokens of width D:  8 N D^2 + 4 N^2 D
//   FFN with hidden width 4D:            16 N D^2
//   dense layer over T frames:           24 T N D^2 + 4 T^2 N^2 D
//   space-time layer:                    32 T N D^2 + 4 T N D (N + T)
//   space-time per segment (S segments): 32 T N D^2 + 4 T N D (N + T/S)

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adavid/schedule.hpp"

namespace adavid {

std::uint64_t mha_flops(std::uint64_t tokens, std::uint64_t width);
std::uint64_t ffn_flops(std::uint64_t tokens, std::uint64_t width);
std::uint64_t dense_layer_flops(std::uint64_t frames, std::uint64_t patches, std::uint64_t width);
std::uint64_t spacetime_layer_flops(std::uint64_t frames, std::uint64_t patches, std::uint64_t width);
std::uint64_t hier_layer_flops(std::uint64_t frames, std::uint64_t patches, std::uint64_t width,
                               std::uint64_t segments);

enum class FlopsMode { kDense, kSpaceTime, kHierarchical };

std::string to_string(FlopsMode mode);
FlopsMode parse_flops_mode(const std::string& text);

struct SubBlockFlops {
  std::uint64_t qkv = 0;
  std::uint64_t scores = 0;
  std::uint64_t weighted_sum = 0;
  std::uint64_t out_proj = 0;
  std::uint64_t ffn = 0;

  std::uint64_t total() const;
};

// Per-sub-block split of one layer; sums to the matching *_layer_flops.
SubBlockFlops layer_breakdown(FlopsMode mode, std::uint64_t frames, std::uint64_t patches, std::uint64_t width,
                              std::uint64_t segments = 1);

struct LayerFlops {
  std::size_t width = 0;
  SubBlockFlops parts;
  std::uint64_t total = 0;
};

struct FlopsReport {
  std::string schedule;
  std::vector<LayerFlops> layers;
  std::uint64_t total = 0;
  std::optional<std::uint64_t> instrumented;
  std::uint64_t frames = 0;
  std::uint64_t patches = 0;
  std::uint64_t segments = 1;
  FlopsMode mode = FlopsMode::kSpaceTime;
};

FlopsReport schedule_flops(const DimSchedule& schedule, std::uint64_t frames, std::uint64_t patches, FlopsMode mode,
                           std::uint64_t segments = 1);

// Evaluation configurations at D=768, L=12, T=4, N=196 with the FLOPs as
// published (units of 1e10).
struct Table1Row {
  std::string config;    // label as printed, e.g. "d-768"
  std::string schedule;  // named schedule
  double printed = 0.0;
};

const std::vector<Table1Row>& table1_rows();

inline constexpr std::uint64_t kTable1Frames = 4, kTable1Patches = 196, kTable1Width = 768, kTable1Layers = 12;

}  // namespace adavid
