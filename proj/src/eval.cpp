#include "adavid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <set>

#include "adavid/error.hpp"
#include "adavid/instrumented.hpp"

namespace adavid {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

EmbeddingVector row_of(const Tensor& t, std::size_t r) {
  const auto d = t.data().subspan(r * t.cols(), t.cols());
  return EmbeddingVector(d.begin(), d.end());
}

Tensor stack(const Embeddings& rows) {
  std::vector<double> v;
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return Tensor(Shape{rows.size(), rows.empty() ? 0 : rows[0].size()}, std::move(v));
}

DimSchedule uniform_schedule(std::size_t width, std::size_t layers) {
  return DimSchedule{std::vector<std::size_t>(layers, width), "d-" + std::to_string(width)};
}

}  // namespace

Embeddings encode_clips(const VideoEncoder& encoder, const std::vector<VideoClip>& clips, const DimSchedule& schedule,
                        std::size_t chunk) {
  NoGradGuard guard;
  Embeddings out;
  out.reserve(clips.size());
  std::size_t i = 0;
  while (i < clips.size()) {
    std::size_t j = i;
    while (j < clips.size() && j - i < chunk && clips[j].frames == clips[i].frames) ++j;
    const Tensor e = encoder.encode_batch(std::span<const VideoClip>(clips.data() + i, j - i), schedule);
    for (std::size_t r = 0; r < j - i; ++r) out.push_back(row_of(e, r));
    i = j;
  }
  return out;
}

Embeddings encode_texts(const TextEncoder& encoder, const Vocab& vocab, const std::vector<std::string>& texts) {
  NoGradGuard guard;
  if (texts.empty()) return {};
  const Tensor e = encoder.encode(make_text_batch(texts, vocab, encoder.config().max_len));
  Embeddings out;
  for (std::size_t r = 0; r < texts.size(); ++r) out.push_back(row_of(e, r));
  return out;
}

VideoClip subsample_frames(const VideoClip& clip, std::size_t count) {
  if (count == 0 || count == clip.frames) return clip;
  if (count > clip.frames) {
    throw InvalidArgument("cannot sample " + std::to_string(count) + " frames from a " + std::to_string(clip.frames) +
                          "-frame video");
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = (2 * i + 1) * clip.frames / (2 * count);
  return clip.select_frames(idx);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("degenerate norm: cosine of a zero vector");
  return dot / std::sqrt(na * nb);
}

// ---- MCQ -----------------------------------------------------------------------

std::string to_string(McqMode mode) { return mode == McqMode::kInter ? "inter" : "intra"; }

McqBenchmark make_mcq_benchmark(const SyntheticSplit& split, const SyntheticSpec& spec, McqMode mode, std::size_t k,
                                std::size_t count, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("mcq: need at least 2 candidates");
  Rng rng(derive_seed(seed, "eval/mcq/" + to_string(mode)));
  McqBenchmark bench;
  bench.mode = mode;
  if (mode == McqMode::kInter) {
    std::vector<std::vector<std::size_t>> by_class(spec.classes);
    for (std::size_t i = 0; i < split.clips.size(); ++i) {
      bench.pool.push_back(split.clips[i].clip);
      if (split.clips[i].label < spec.classes) by_class[split.clips[i].label].push_back(i);
    }
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < spec.classes; ++c)
      if (!by_class[c].empty()) present.push_back(c);
    if (present.size() < k) {
      throw InvalidArgument("mcq: " + std::to_string(k) + " candidates need " + std::to_string(k) +
                            " classes, split has " + std::to_string(present.size()));
    }
    for (std::size_t n = 0; n < count; ++n) {
      auto classes = present;
      rng.shuffle(classes);
      classes.resize(k);
      const std::size_t target = classes[0];
      rng.shuffle(classes);
      McqItem item;
      item.query = class_caption(target);
      for (std::size_t j = 0; j < k; ++j) {
        const auto& pool = by_class[classes[j]];
        item.candidates.push_back(pool[rng.below(pool.size())]);
        if (classes[j] == target) item.correct = j;
      }
      bench.items.push_back(std::move(item));
    }
  } else {
    if (split.long_videos.empty()) throw InvalidArgument("mcq intra: split has no long videos");
    const std::size_t S = spec.segments;
    if (k > S) throw InvalidArgument("mcq intra: k exceeds the " + std::to_string(S) + " segments per video");
    for (const auto& v : split.long_videos)
      for (auto& seg : segment_video(v.video, S)) bench.pool.push_back(std::move(seg));
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t vi = rng.below(split.long_videos.size());
      std::vector<std::size_t> segs(S);
      for (std::size_t s = 0; s < S; ++s) segs[s] = s;
      rng.shuffle(segs);
      segs.resize(k);
      const std::size_t target = segs[0];
      rng.shuffle(segs);
      McqItem item;
      item.query = class_caption(split.long_videos[vi].motifs[target]);
      for (std::size_t j = 0; j < k; ++j) {
        item.candidates.push_back(vi * S + segs[j]);
        if (segs[j] == target) item.correct = j;
      }
      bench.items.push_back(std::move(item));
    }
  }
  return bench;
}

std::size_t argmax_cosine(std::span<const double> query, const Embeddings& candidates) {
  if (candidates.empty()) throw InvalidArgument("argmax over no candidates");
  std::size_t best = 0;
  double best_sim = cosine(query, candidates[0]);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double s = cosine(query, candidates[i]);
    if (s > best_sim) {
      best_sim = s;
      best = i;
    }
  }
  return best;
}

double mcq_accuracy(const Embeddings& queries, const std::vector<Embeddings>& candidates,
                    const std::vector<std::size_t>& correct) {
  if (queries.size() != candidates.size() || queries.size() != correct.size() || queries.empty()) {
    throw InvalidArgument("mcq: queries, candidates and answers must align");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (candidates[i].size() < 2) throw InvalidArgument("mcq: need at least 2 candidates");
    if (argmax_cosine(queries[i], candidates[i]) == correct[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double mcq_eval(const EncoderPair& model, const McqBenchmark& bench, const DimSchedule& schedule, std::size_t frames) {
  std::vector<VideoClip> pool;
  pool.reserve(bench.pool.size());
  for (const auto& c : bench.pool) pool.push_back(subsample_frames(c, frames));
  const Embeddings clip_embs = encode_clips(model.video, pool, schedule);

  std::vector<std::string> texts;
  std::map<std::string, std::size_t> text_index;
  for (const auto& item : bench.items)
    if (text_index.emplace(item.query, texts.size()).second) texts.push_back(item.query);
  const Embeddings text_embs = encode_texts(model.text, model.vocab, texts);

  Embeddings queries;
  std::vector<Embeddings> candidates;
  std::vector<std::size_t> correct;
  for (const auto& item : bench.items) {
    queries.push_back(text_embs[text_index.at(item.query)]);
    Embeddings c;
    for (std::size_t idx : item.candidates) c.push_back(clip_embs.at(idx));
    candidates.push_back(std::move(c));
    correct.push_back(item.correct);
  }
  return mcq_accuracy(queries, candidates, correct);
}

// ---- retrieval --------------------------------------------------------------------

std::size_t rank_of(std::span<const double> query, const Embeddings& gallery, std::size_t truth) {
  const double target = cosine(query, gallery.at(truth));
  std::size_t rank = 1;
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (i == truth) continue;
    const double s = cosine(query, gallery[i]);
    if (s > target || (s == target && i < truth)) ++rank;
  }
  return rank;
}

Recall retrieval_eval(const Embeddings& queries, const std::vector<std::string>& query_ids, const Embeddings& gallery,
                      const std::vector<std::string>& gallery_ids, const std::map<std::string, std::string>& truth) {
  if (gallery.size() < 10) throw InvalidArgument("retrieval: gallery needs at least 10 items for R@10");
  if (queries.size() != query_ids.size() || gallery.size() != gallery_ids.size() || queries.empty()) {
    throw InvalidArgument("retrieval: ids and embeddings must align");
  }
  std::map<std::string, std::size_t> where;
  for (std::size_t i = 0; i < gallery_ids.size(); ++i)
    if (!where.emplace(gallery_ids[i], i).second) throw InvalidArgument("retrieval: duplicate gallery id " + gallery_ids[i]);
  std::size_t h1 = 0, h5 = 0, h10 = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto t = truth.find(query_ids[q]);
    if (t == truth.end()) throw InvalidArgument("retrieval: no ground truth for query '" + query_ids[q] + "'");
    auto g = where.find(t->second);
    if (g == where.end()) throw InvalidArgument("retrieval: ground-truth id '" + t->second + "' is not in the gallery");
    const std::size_t r = rank_of(queries[q], gallery, g->second);
    h1 += r <= 1;
    h5 += r <= 5;
    h10 += r <= 10;
  }
  const double n = static_cast<double>(queries.size());
  return Recall{h1 / n, h5 / n, h10 / n};
}

std::string to_string(LongMethod method) { return method == LongMethod::kAggregator ? "aggregator" : "average_pool"; }

Recall long_video_retrieval(const EncoderPair& encoder, const AggregatorModel* agg,
                            const std::vector<LongSample>& videos, std::size_t segments, const DimSchedule& schedule,
                            std::size_t frames, LongMethod method) {
  if (method == LongMethod::kAggregator && agg == nullptr) throw InvalidArgument("retrieval: no aggregator given");
  if (frames != 0 && frames % segments != 0) {
    throw InvalidArgument("retrieval: " + std::to_string(frames) + " frames do not split into " +
                          std::to_string(segments) + " segments");
  }
  std::vector<VideoClip> clips;
  std::vector<std::string> ids, summaries;
  for (const auto& v : videos) {
    for (auto& s : segment_video(subsample_frames(v.video, frames), segments)) clips.push_back(std::move(s));
    ids.push_back(v.id);
    summaries.push_back(v.summary);
  }
  const Embeddings seg = encode_clips(encoder.video, clips, schedule);

  Embeddings gallery, queries;
  if (method == LongMethod::kAggregator) {
    NoGradGuard guard;
    const Tensor out = agg->agg.forward(stack(seg), videos.size());
    for (std::size_t i = 0; i < videos.size(); ++i) gallery.push_back(row_of(out, i));
    queries = encode_texts(agg->summary, agg->vocab, summaries);
  } else {
    for (std::size_t i = 0; i < videos.size(); ++i) {
      const Embeddings part(seg.begin() + static_cast<std::ptrdiff_t>(i * segments),
                            seg.begin() + static_cast<std::ptrdiff_t>((i + 1) * segments));
      gallery.push_back(average_pool(stack(part)));
    }
    queries = encode_texts(encoder.text, encoder.vocab, summaries);
  }
  std::map<std::string, std::string> truth;
  for (const auto& id : ids) truth[id] = id;
  return retrieval_eval(queries, ids, gallery, ids, truth);
}

// ---- sweeps -------------------------------------------------------------------------

std::string SweepResult::to_csv() const {
  std::string out = "# config_hash " + config_hash + " seed " + std::to_string(seed) + "\n";
  out += "schedule,frames,flops,metric,value,seed\n";
  for (const auto& r : rows) {
    out += r.schedule + "," + std::to_string(r.frames) + "," + std::to_string(r.flops) + "," + r.metric + "," +
           fmt(r.value) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::string SweepResult::to_json() const {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"schedule", r.schedule},
                         {"frames", r.frames},
                         {"flops", r.flops},
                         {"metric", r.metric},
                         {"value", r.value},
                         {"seed", r.seed}});
  }
  return j.dump(2) + "\n";
}

Benchmark parse_benchmark(const std::string& text) {
  if (text == "mcq" || text == "mcq-inter") return Benchmark::kMcqInter;
  if (text == "mcq-intra") return Benchmark::kMcqIntra;
  if (text == "retrieval") return Benchmark::kRetrieval;
  throw InvalidArgument("unknown benchmark '" + text + "' (expected mcq, mcq-intra or retrieval)");
}

std::string to_string(Benchmark b) {
  switch (b) {
    case Benchmark::kMcqInter: return "mcq";
    case Benchmark::kMcqIntra: return "mcq-intra";
    case Benchmark::kRetrieval: return "retrieval";
  }
  return "?";
}

std::uint64_t row_flops(const EncoderConfig& config, const DimSchedule& schedule, std::size_t frames,
                        std::size_t segments) {
  if (segments == 0 || frames % segments != 0) throw InvalidArgument("row_flops: frames must split into segments");
  const FlopsMode mode = flops_mode_for(config.attention);
  const std::uint64_t per = schedule_flops(schedule, frames / segments, config.patches_per_frame(), mode).total;
  return per * segments;
}

SweepResult sweep(const EncoderPair& model, const AggregatorModel* agg, const SyntheticDataset& data,
                  const SweepRequest& request, const std::string& config_hash) {
  if (request.schedules.empty()) throw InvalidArgument("sweep: no schedules given");
  const auto& vc = model.video.config();
  const std::size_t S = data.spec.segments;
  SweepResult result{config_hash, request.seed, {}};
  std::vector<std::size_t> frame_counts = request.frame_counts;
  if (frame_counts.empty())
    frame_counts.push_back(request.benchmark == Benchmark::kRetrieval ? data.spec.frames * S : data.spec.frames);

  std::optional<McqBenchmark> bench;
  if (request.benchmark != Benchmark::kRetrieval) {
    const McqMode mode = request.benchmark == Benchmark::kMcqInter ? McqMode::kInter : McqMode::kIntra;
    bench = make_mcq_benchmark(data.test, data.spec, mode, request.k, request.items, request.seed);
  }
  for (const auto& name : request.schedules) {
    const DimSchedule schedule = parse_schedule(name, vc.width, vc.layers);
    for (std::size_t frames : frame_counts) {
      if (bench) {
        const double acc = mcq_eval(model, *bench, schedule, frames);
        result.rows.push_back(SweepRow{name, frames, row_flops(vc, schedule, frames, 1),
                                       to_string(request.benchmark) + "_acc", acc, request.seed});
        continue;
      }
      const std::uint64_t flops = row_flops(vc, schedule, frames, S);
      auto add = [&](const std::string& prefix, const Recall& r) {
        result.rows.push_back(SweepRow{name, frames, flops, prefix + "r1", r.r1, request.seed});
        result.rows.push_back(SweepRow{name, frames, flops, prefix + "r5", r.r5, request.seed});
        result.rows.push_back(SweepRow{name, frames, flops, prefix + "r10", r.r10, request.seed});
      };
      if (agg)
        add("", long_video_retrieval(model, agg, data.test.long_videos, S, schedule, frames, LongMethod::kAggregator));
      add("pool_",
          long_video_retrieval(model, nullptr, data.test.long_videos, S, schedule, frames, LongMethod::kAveragePool));
    }
  }
  return result;
}

// ---- frames vs width -----------------------------------------------------------------

SweepResult frame_sweep_classifier(const VideoEncoder& encoder, const SyntheticSpec& spec,
                                   const FrameSweepConfig& config, const std::string& config_hash) {
  spec.validate();
  const auto& vc = encoder.config();
  const std::size_t S = spec.segments, T_long = S * spec.frames;
  Rng rng(derive_seed(config.seed, "eval/frame-sweep/data"));

  std::vector<std::size_t> motifs(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) motifs[c] = c;
  rng.shuffle(motifs);
  motifs.resize(S);
  std::size_t max_orders = 1;
  for (std::size_t k = 2; k <= S; ++k) max_orders *= k;
  if (config.orders < 2 || config.orders > max_orders) {
    throw InvalidArgument("frame sweep: orders must be in 2.." + std::to_string(max_orders));
  }
  std::vector<std::vector<std::size_t>> orders;
  std::set<std::vector<std::size_t>> seen;
  while (orders.size() < config.orders) {
    auto o = motifs;
    rng.shuffle(o);
    if (seen.insert(o).second) orders.push_back(o);
  }
  auto render = [&](std::size_t per_class, std::vector<VideoClip>& videos, std::vector<std::size_t>& labels) {
    for (std::size_t i = 0; i < per_class; ++i)
      for (std::size_t c = 0; c < orders.size(); ++c) {
        VideoClip v{0, spec.channels, spec.image, spec.image, {}};
        for (std::size_t m : orders[c]) {
          const VideoClip seg = render_motif(m, spec.frames, spec, rng);
          v.pixels.insert(v.pixels.end(), seg.pixels.begin(), seg.pixels.end());
          v.frames += seg.frames;
        }
        videos.push_back(std::move(v));
        labels.push_back(c);
      }
  };
  std::vector<VideoClip> train_v, test_v;
  std::vector<std::size_t> train_y, test_y;
  render(config.train_per_class, train_v, train_y);
  render(config.test_per_class, test_v, test_y);

  std::vector<std::size_t> widths = config.widths.empty() ? vc.allowed() : config.widths;
  const std::size_t K = orders.size();
  SweepResult result{config_hash, config.seed, {}};
  for (std::size_t F : config.frame_counts) {
    if (F == 0 || F > T_long) throw InvalidArgument("frame sweep: frame count must be in 1.." + std::to_string(T_long));
    const std::size_t clip_len = std::min(F, spec.frames);
    if (F % clip_len != 0) throw InvalidArgument("frame sweep: frame count must be a multiple of the clip length");
    const std::size_t n_clips = F / clip_len;
    auto clips_of = [&](const std::vector<VideoClip>& videos) {
      std::vector<VideoClip> out;
      for (const auto& v : videos)
        for (auto& c : segment_video(subsample_frames(v, F), n_clips)) out.push_back(std::move(c));
      return out;
    };
    const auto train_clips = clips_of(train_v), test_clips = clips_of(test_v);
    for (std::size_t w : widths) {
      const DimSchedule schedule = uniform_schedule(w, vc.layers);
      auto features = [&](const std::vector<VideoClip>& clips, std::size_t videos) {
        const Embeddings e = encode_clips(encoder, clips, schedule);
        std::vector<double> x;
        for (const auto& r : e) x.insert(x.end(), r.begin(), r.end());
        return Tensor(Shape{videos, n_clips * vc.embed_dim}, std::move(x));
      };
      const Tensor xtr = features(train_clips, train_v.size()), xte = features(test_clips, test_v.size());
      const std::size_t dim = xtr.cols();

      Rng head_rng(derive_seed(config.seed, "eval/frame-sweep/head"));
      Tensor W(Shape{K, dim}, true), b(Shape{K}, true);
      for (double& v : W.mutable_data()) v = 0.01 * head_rng.normal();
      if (config.train_head) {
        std::vector<double> onehot(train_v.size() * K, 0.0);
        for (std::size_t i = 0; i < train_y.size(); ++i) onehot[i * K + train_y[i]] = 1.0;
        const Tensor target(Shape{train_v.size(), K}, std::move(onehot));
        AdamW opt({{"W", W}, {"b", b}}, AdamWConfig{config.head_lr, 0.9, 0.999, 1e-8, 0.0});
        for (std::size_t step = 0; step < config.head_steps; ++step) {
          const Tensor logp = log_softmax_lastdim(linear(xtr, W, b));
          backward(scale(sum(mul(logp, target)), -1.0 / static_cast<double>(train_v.size())));
          opt.step();
          opt.zero_grad();
        }
      }
      NoGradGuard guard;
      const Tensor logits = linear(xte, W, b);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < test_y.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < K; ++c)
          if (logits.at(i, c) > logits.at(i, best)) best = c;
        hits += best == test_y[i];
      }
      result.rows.push_back(SweepRow{schedule.label(), F, row_flops(vc, schedule, F, n_clips), "top1",
                                     static_cast<double>(hits) / static_cast<double>(test_y.size()), config.seed});
    }
  }
  return result;
}

}  // namespace adavid
