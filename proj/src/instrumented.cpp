#include "adavid/instrumented.hpp"

#include "adavid/flop_counter.hpp"

namespace adavid {

InstrumentedFlops instrumented_run(const VideoEncoder& encoder, const VideoClip& clip, const DimSchedule& schedule) {
  NoGradGuard no_grad;
  validate_schedule(schedule, encoder.config().width, encoder.config().layers);
  const std::span<const VideoClip> one(&clip, 1);
  Tensor tokens = encoder.patchify(one, schedule.widths.front(), /*with_cls=*/false);
  const TokenGrid grid = encoder.grid_for(1, clip.frames, /*with_cls=*/false);

  FlopCounter counter;
  InstrumentedFlops out;
  {
    FlopScope scope(&counter);
    FlopTag tag("layers");
    out.output = encoder.forward_layers(tokens, grid, schedule);
  }
  out.total = counter.matmul_total();
  out.by_tag = counter.by_tag();
  return out;
}

FlopsMode flops_mode_for(AttentionMode mode) {
  return mode == AttentionMode::kJoint ? FlopsMode::kDense : FlopsMode::kSpaceTime;
}

FlopsReport instrumented_report(const VideoEncoder& encoder, const VideoClip& clip, const DimSchedule& schedule) {
  FlopsReport report = schedule_flops(schedule, clip.frames, encoder.config().patches_per_frame(),
                                      flops_mode_for(encoder.config().attention));
  report.instrumented = instrumented_run(encoder, clip, schedule).total;
  return report;
}

}  // namespace adavid
