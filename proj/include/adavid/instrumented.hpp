#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "adavid/flops.hpp"
#include "adavid/video_encoder.hpp"

namespace adavid {

struct InstrumentedFlops {
  std::uint64_t total = 0;                        // matmul FLOPs of the layer stack
  std::map<std::string, std::uint64_t> by_tag;    // e.g. "layer3.time.scores"
  Tensor output;                                  // tokens after the last layer
};

// Formula-comparable run: the clip is patchified without a cls token (the
// closed forms ignore it) and only the L layers run under the counter, so
// the patch projection, final norm and head are outside the count.
InstrumentedFlops instrumented_run(const VideoEncoder& encoder, const VideoClip& clip, const DimSchedule& schedule);

FlopsMode flops_mode_for(AttentionMode mode);

// Closed-form report for the encoder's geometry with the instrumented total
// filled in.
FlopsReport instrumented_report(const VideoEncoder& encoder, const VideoClip& clip, const DimSchedule& schedule);

}  // namespace adavid
