#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adavid/adaptive.hpp"
#include "adavid/aggregator.hpp"
#include "adavid/config.hpp"
#include "adavid/dataset.hpp"
#include "adavid/io.hpp"
#include "adavid/rng.hpp"
#include "adavid/schedule.hpp"
#include "adavid/text_encoder.hpp"
#include "adavid/video_encoder.hpp"

namespace adavid {

// ---- optimizer ---------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

// Adam with decoupled weight decay. Per step, for every parameter that
// received a gradient:
//   p *= 1 - lr * wd
//   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
//   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
class AdamW {
 public:
  AdamW(NamedTensors params, const AdamWConfig& config);

  void step();
  void zero_grad();
  void set_lr(double lr);
  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }

 private:
  NamedTensors params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

// ---- loss ----------------------------------------------------------------------

// Symmetric InfoNCE with diagonal targets over logits = video text^T / tau.
// Rows must be unit norm (1e-6). B = 1 gives 0.
Tensor info_nce(const Tensor& video, const Tensor& text, double tau);

// ---- schedules -----------------------------------------------------------------

struct ScheduleStrategy {
  enum class Kind { kDecreasing, kIncreasing, kUnconstrained, kFixed };
  Kind kind = Kind::kDecreasing;
  std::string name;  // for kFixed

  std::string to_string() const;
  // "decreasing", "increasing", "unconstrained", "fixed:<name>"
  static ScheduleStrategy parse(const std::string& text);
};

// decreasing / increasing: L i.i.d. uniform draws from `allowed`, sorted;
// unconstrained: the draws as is; fixed: the named schedule.
DimSchedule sample_schedule(const ScheduleStrategy& strategy, std::size_t full_width, std::size_t layers,
                            const std::vector<std::size_t>& allowed, Rng& rng);
// allowed widths of `full_width` that are whole multiples of head_dim
std::vector<std::size_t> sampleable_widths(std::size_t full_width, std::size_t head_dim);
DimSchedule sample_schedule(const ScheduleStrategy& strategy, std::size_t full_width, std::size_t layers,
                            std::size_t head_dim, Rng& rng);

// Named patterns that divide the layer count.
std::vector<std::string> valid_schedule_names(std::size_t full_width, std::size_t layers);

// ---- encoder training ------------------------------------------------------------

struct TrainConfig {
  std::size_t batch = 8;
  std::size_t steps = 400;
  double lr = 1e-3;
  double weight_decay = 0.1;
  double tau = 0.05;
  std::size_t warmup = 0;  // linear ramp from lr / warmup
  bool cosine = false;     // cosine decay to 0 over the remaining steps
  std::uint64_t seed = 0;
  ScheduleStrategy strategy;
  // steps cycle through [strategy, interleave...]
  std::vector<ScheduleStrategy> interleave;

  const ScheduleStrategy& strategy_at(std::size_t step) const;
  void validate() const;
  void write(Config& out, const std::string& prefix) const;
  static TrainConfig read(const Config& in, const std::string& prefix);
};

// Learning rate used at 0-based `step` of `steps`.
double scheduled_lr(double lr, std::size_t step, std::size_t steps, std::size_t warmup, bool cosine);

struct LossRow {
  std::size_t step = 0;
  std::string schedule;
  double loss = 0.0;
};

struct LossTrace {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<LossRow> rows;

  // "# config_hash <h> seed <s>", header "step,schedule,loss", %.17g losses.
  std::string to_csv() const;
};

// B samples of distinct classes, each a random training clip of its class.
std::vector<const ClipSample*> sample_batch(const std::vector<ClipSample>& clips, std::size_t classes,
                                            std::size_t batch, Rng& rng);

struct EncoderPair {
  VideoEncoder video;
  TextEncoder text;
  Vocab vocab;

  NamedTensors parameters() const;
};

EncoderPair make_encoder_pair(const EncoderConfig& video, const TextConfig& text, const Vocab& vocab,
                              std::uint64_t seed);

// One schedule per step for the whole batch; NaN/inf loss throws NumericError.
LossTrace train_encoder(const TrainConfig& config, const SyntheticDataset& data, EncoderPair& model,
                        const std::string& config_hash);

Checkpoint encoder_checkpoint(const EncoderPair& model);
EncoderPair encoder_from_checkpoint(const Checkpoint& ckpt);

// ---- aggregator training ------------------------------------------------------------

// Segment features of every long video under one schedule.
std::vector<FeatureRecord> build_feature_cache(const VideoEncoder& encoder, const std::vector<LongSample>& videos,
                                               std::size_t segments, const DimSchedule& schedule);

struct AggTrainConfig {
  std::size_t batch = 8;
  std::size_t steps = 400;
  double lr = 1e-5;
  double weight_decay = 0.1;
  double tau = 0.05;
  std::size_t warmup = 0;
  bool cosine = false;
  std::uint64_t seed = 0;
  std::vector<std::string> schedules;  // empty: every valid named schedule

  void validate() const;
  void write(Config& out, const std::string& prefix) const;
  static AggTrainConfig read(const Config& in, const std::string& prefix);
};

struct AggregatorModel {
  Aggregator agg;
  TextEncoder summary;
  Vocab vocab;

  NamedTensors parameters() const;
};

AggregatorModel make_aggregator_model(const AggregatorConfig& agg, const TextConfig& text, const Vocab& vocab,
                                      std::uint64_t seed);

// features: schedule name -> records. Each training example draws one
// schedule uniformly from config.schedules. Missing ids throw IoError listing
// them.
LossTrace train_aggregator(const AggTrainConfig& config, const std::map<std::string, std::vector<FeatureRecord>>& features,
                           const std::vector<LongSample>& videos, AggregatorModel& model,
                           const std::string& config_hash);

Checkpoint aggregator_checkpoint(const AggregatorModel& model);
AggregatorModel aggregator_from_checkpoint(const Checkpoint& ckpt);

}  // namespace adavid
