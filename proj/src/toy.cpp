#include "adavid/toy.hpp"

namespace adavid {

namespace {
// at 0.02 the reversed-motion pairs start almost collinear and training
// stalls at ln 2 for ~1000 steps
constexpr double kEncoderInit = 0.1;
}  // namespace

EncoderConfig toy_encoder_config() {
  EncoderConfig c;
  c.init_std = kEncoderInit;
  return c;
}

TextConfig toy_text_config() {
  TextConfig c;
  c.init_std = kEncoderInit;
  return c;
}

TrainConfig toy_train_config() {
  TrainConfig c;
  c.steps = 1000;
  c.lr = 3e-4;
  c.warmup = 50;
  c.cosine = true;
  c.strategy = ScheduleStrategy::parse("decreasing");
  c.interleave = {ScheduleStrategy::parse("fixed:d-quarter")};
  return c;
}

AggregatorConfig toy_aggregator_config() { return AggregatorConfig{}; }

TextConfig toy_summary_config() { return TextConfig{}; }

AggTrainConfig toy_agg_train_config() {
  AggTrainConfig c;
  c.steps = 2000;
  c.lr = 2e-4;
  c.warmup = 100;
  c.cosine = true;
  c.schedules = {"d-full"};
  return c;
}

}  // namespace adavid
