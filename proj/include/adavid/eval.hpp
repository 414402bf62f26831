#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adavid/dataset.hpp"
#include "adavid/training.hpp"

namespace adavid {

using Embeddings = std::vector<EmbeddingVector>;

// Embeddings without gradient, encoded in chunks.
Embeddings encode_clips(const VideoEncoder& encoder, const std::vector<VideoClip>& clips, const DimSchedule& schedule,
                        std::size_t chunk = 32);
Embeddings encode_texts(const TextEncoder& encoder, const Vocab& vocab, const std::vector<std::string>& texts);

// `count` frames spread evenly over the clip (centre of each of `count` equal
// bins). count = 0 keeps every frame.
VideoClip subsample_frames(const VideoClip& clip, std::size_t count);

double cosine(std::span<const double> a, std::span<const double> b);

// ---- MCQ -----------------------------------------------------------------------

enum class McqMode { kInter, kIntra };
std::string to_string(McqMode mode);

struct McqItem {
  std::string query;
  std::vector<std::size_t> candidates;  // indices into the benchmark pool
  std::size_t correct = 0;              // position in candidates, 0-based
};

struct McqBenchmark {
  McqMode mode = McqMode::kInter;
  std::vector<VideoClip> pool;
  std::vector<McqItem> items;
};

// inter: candidates are clips of k distinct classes from the whole split.
// intra: candidates are segments of one long video (k <= segments).
McqBenchmark make_mcq_benchmark(const SyntheticSplit& split, const SyntheticSpec& spec, McqMode mode, std::size_t k,
                                std::size_t count, std::uint64_t seed);

// Highest cosine wins; ties go to the lowest index.
std::size_t argmax_cosine(std::span<const double> query, const Embeddings& candidates);

// queries[i] against candidates[i]; fraction of argmax == correct[i].
double mcq_accuracy(const Embeddings& queries, const std::vector<Embeddings>& candidates,
                    const std::vector<std::size_t>& correct);

double mcq_eval(const EncoderPair& model, const McqBenchmark& bench, const DimSchedule& schedule,
                std::size_t frames = 0);

// ---- retrieval --------------------------------------------------------------------

struct Recall {
  double r1 = 0.0, r5 = 0.0, r10 = 0.0;
};

// Rank of gallery[truth] for one query: 1 + #strictly more similar + #equally
// similar at a lower index.
std::size_t rank_of(std::span<const double> query, const Embeddings& gallery, std::size_t truth);

// truth maps query id -> gallery id. Needs at least 10 gallery items.
Recall retrieval_eval(const Embeddings& queries, const std::vector<std::string>& query_ids, const Embeddings& gallery,
                      const std::vector<std::string>& gallery_ids, const std::map<std::string, std::string>& truth);

enum class LongMethod { kAggregator, kAveragePool };
std::string to_string(LongMethod method);

// Summary-text queries against long videos, matched by id. `frames` total
// frames sampled evenly from each video (0 = all), split into the segments.
// The aggregator path embeds queries with its summary encoder; the average
// pool path uses the clip text encoder.
Recall long_video_retrieval(const EncoderPair& encoder, const AggregatorModel* agg,
                            const std::vector<LongSample>& videos, std::size_t segments, const DimSchedule& schedule,
                            std::size_t frames, LongMethod method);

// ---- sweeps -------------------------------------------------------------------------

struct SweepRow {
  std::string schedule;
  std::size_t frames = 0;
  std::uint64_t flops = 0;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
};

struct SweepResult {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<SweepRow> rows;

  // "# config_hash <h> seed <s>", then schedule,frames,flops,metric,value,seed
  std::string to_csv() const;
  std::string to_json() const;
};

enum class Benchmark { kMcqInter, kMcqIntra, kRetrieval };
Benchmark parse_benchmark(const std::string& text);  // mcq, mcq-intra, retrieval
std::string to_string(Benchmark b);

struct SweepRequest {
  Benchmark benchmark = Benchmark::kMcqInter;
  std::vector<std::string> schedules;
  std::vector<std::size_t> frame_counts;  // empty: native frame count
  std::size_t k = 5;
  std::size_t items = 1000;
  std::uint64_t seed = 0;
};

// Closed-form FLOPs of one row: per clip for MCQ, all segments for retrieval.
std::uint64_t row_flops(const EncoderConfig& config, const DimSchedule& schedule, std::size_t frames,
                        std::size_t segments);

// Retrieval rows report r1/r5/r10 for the aggregator (when given) and the
// average pool ("pool_r1", ...).
SweepResult sweep(const EncoderPair& model, const AggregatorModel* agg, const SyntheticDataset& data,
                  const SweepRequest& request, const std::string& config_hash);

// ---- frames vs width -----------------------------------------------------------------

struct FrameSweepConfig {
  std::vector<std::size_t> frame_counts{2, 4, 8, 16};
  std::vector<std::size_t> widths;  // empty: the encoder's allowed widths
  std::size_t orders = 4;           // classes: orderings of one motif set
  std::size_t train_per_class = 16;
  std::size_t test_per_class = 16;
  std::size_t head_steps = 300;
  double head_lr = 1e-2;
  bool train_head = true;
  std::uint64_t seed = 0;
};

// Linear softmax head over concatenated clip features of long videos whose
// classes differ only in motif order; one row per (frames, width).
SweepResult frame_sweep_classifier(const VideoEncoder& encoder, const SyntheticSpec& spec,
                                   const FrameSweepConfig& config, const std::string& config_hash);

}  // namespace adavid
