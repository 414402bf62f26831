#pragma once

// Desk-scale settings: CLI defaults and the acceptance runs both start here.

#include "adavid/aggregator.hpp"
#include "adavid/text_encoder.hpp"
#include "adavid/training.hpp"
#include "adavid/video_encoder.hpp"

namespace adavid {

EncoderConfig toy_encoder_config();
TextConfig toy_text_config();
// 1000 steps, lr 3e-4 with warmup and cosine decay, decreasing schedules
// interleaved with d-quarter steps.
TrainConfig toy_train_config();

AggregatorConfig toy_aggregator_config();
TextConfig toy_summary_config();
// 2000 steps, lr 2e-4, features at d-full.
AggTrainConfig toy_agg_train_config();

}  // namespace adavid
