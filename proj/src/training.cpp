#include "adavid/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <sstream>

#include "adavid/error.hpp"

namespace adavid {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_finite(const Tensor& loss, std::size_t step, const std::string& schedule) {
  const double v = loss.item();
  if (!std::isfinite(v)) {
    throw NumericError("loss diverged at step " + std::to_string(step) + " (schedule " + schedule +
                       "): value " + fmt(v) + "; lower the learning rate");
  }
}

NamedTensors concat(NamedTensors a, const NamedTensors& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

// ---- optimizer ---------------------------------------------------------------

AdamW::AdamW(NamedTensors params, const AdamWConfig& config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || !(config_.eps > 0.0) || config_.weight_decay < 0.0) {
    throw InvalidArgument("AdamW: lr and eps must be positive, weight decay non-negative");
  }
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::set_lr(double lr) {
  if (!(lr > 0.0)) throw InvalidArgument("AdamW: lr must be positive");
  config_.lr = lr;
}

void AdamW::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - config_.lr * config_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].second;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto x = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      x[j] *= decay;
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      x[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor h = t;
    h.zero_grad();
  }
}

// ---- loss ------------------------------------------------------------------

Tensor info_nce(const Tensor& video, const Tensor& text, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("info_nce: temperature must be positive");
  if (video.dim() != 2 || video.shape() != text.shape()) throw InvalidArgument("info_nce: shape mismatch");
  for (const Tensor* t : {&video, &text}) {
    for (std::size_t r = 0; r < t->rows(); ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < t->cols(); ++c) sq += t->at(r, c) * t->at(r, c);
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-6) {
        throw InvalidArgument("info_nce: row " + std::to_string(r) + " is not unit norm");
      }
    }
  }
  if (video.rows() == 1) return Tensor::scalar(0.0);
  const Tensor logits = scale(matmul(video, transpose(text)), 1.0 / tau);
  const Tensor rows = diag_mean(log_softmax_lastdim(logits));
  const Tensor cols = diag_mean(log_softmax_lastdim(transpose(logits)));
  return scale(add(rows, cols), -0.5);
}

// ---- schedules ---------------------------------------------------------------

std::string ScheduleStrategy::to_string() const {
  switch (kind) {
    case Kind::kDecreasing: return "decreasing";
    case Kind::kIncreasing: return "increasing";
    case Kind::kUnconstrained: return "unconstrained";
    case Kind::kFixed: return "fixed:" + name;
  }
  return "?";
}

ScheduleStrategy ScheduleStrategy::parse(const std::string& text) {
  ScheduleStrategy s;
  if (text == "decreasing") {
    s.kind = Kind::kDecreasing;
  } else if (text == "increasing") {
    s.kind = Kind::kIncreasing;
  } else if (text == "unconstrained") {
    s.kind = Kind::kUnconstrained;
  } else if (text.rfind("fixed:", 0) == 0 && text.size() > 6) {
    s.kind = Kind::kFixed;
    s.name = text.substr(6);
  } else if (text.rfind("fixed(", 0) == 0 && text.back() == ')' && text.size() > 7) {
    s.kind = Kind::kFixed;
    s.name = text.substr(6, text.size() - 7);
  } else {
    throw InvalidArgument("unknown schedule strategy '" + text +
                          "' (expected decreasing, increasing, unconstrained or fixed:<name>)");
  }
  return s;
}

DimSchedule sample_schedule(const ScheduleStrategy& strategy, std::size_t full_width, std::size_t layers,
                            const std::vector<std::size_t>& allowed, Rng& rng) {
  if (strategy.kind == ScheduleStrategy::Kind::kFixed) {
    DimSchedule s = parse_schedule(strategy.name, full_width, layers);
    for (std::size_t w : s.widths)
      if (std::find(allowed.begin(), allowed.end(), w) == allowed.end())
        throw InvalidArgument("fixed schedule uses a width outside the allowed set");
    return s;
  }
  if (allowed.empty()) throw InvalidArgument("sample_schedule: empty allowed set");
  DimSchedule s;
  for (std::size_t l = 0; l < layers; ++l) s.widths.push_back(allowed[rng.below(allowed.size())]);
  if (strategy.kind == ScheduleStrategy::Kind::kDecreasing) std::sort(s.widths.rbegin(), s.widths.rend());
  if (strategy.kind == ScheduleStrategy::Kind::kIncreasing) std::sort(s.widths.begin(), s.widths.end());
  return s;
}

std::vector<std::size_t> sampleable_widths(std::size_t full_width, std::size_t head_dim) {
  if (head_dim == 0) throw InvalidArgument("head_dim must be positive");
  std::vector<std::size_t> out;
  for (std::size_t w : allowed_widths(full_width))
    if (w % head_dim == 0) out.push_back(w);
  return out;
}

DimSchedule sample_schedule(const ScheduleStrategy& strategy, std::size_t full_width, std::size_t layers,
                            std::size_t head_dim, Rng& rng) {
  return sample_schedule(strategy, full_width, layers, sampleable_widths(full_width, head_dim), rng);
}

std::vector<std::string> valid_schedule_names(std::size_t full_width, std::size_t layers) {
  std::vector<std::string> out;
  for (const auto& name : schedule_names()) {
    try {
      named_schedule(name, full_width, layers);
      out.push_back(name);
    } catch (const InvalidArgument&) {
    }
  }
  return out;
}

// ---- encoder training --------------------------------------------------------

void TrainConfig::validate() const {
  if (batch < 2) throw InvalidArgument("train: batch must be at least 2");
  if (steps == 0) throw InvalidArgument("train: steps must be positive");
  if (!(lr > 0.0)) throw InvalidArgument("train: lr must be positive");
  if (weight_decay < 0.0) throw InvalidArgument("train: weight_decay must be >= 0");
  if (!(tau > 0.0)) throw InvalidArgument("train: tau must be positive");
  if (warmup >= steps) throw InvalidArgument("train: warmup must be shorter than steps");
}

const ScheduleStrategy& TrainConfig::strategy_at(std::size_t step) const {
  const std::size_t k = step % (interleave.size() + 1);
  return k == 0 ? strategy : interleave[k - 1];
}

double scheduled_lr(double lr, std::size_t step, std::size_t steps, std::size_t warmup, bool cosine) {
  if (step < warmup) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (!cosine) return lr;
  const double span = static_cast<double>(steps - warmup);
  const double x = static_cast<double>(step - warmup) / span;
  // never exactly 0 so AdamW accepts it
  return std::max(lr * 0.5 * (1.0 + std::cos(std::numbers::pi * x)), lr * 1e-3);
}

void TrainConfig::write(Config& out, const std::string& p) const {
  out.set(p + "batch", std::to_string(batch));
  out.set(p + "steps", std::to_string(steps));
  out.set(p + "lr", fmt(lr));
  out.set(p + "weight_decay", fmt(weight_decay));
  out.set(p + "tau", fmt(tau));
  out.set(p + "warmup", std::to_string(warmup));
  out.set(p + "cosine", cosine ? "1" : "0");
  out.set(p + "strategy", strategy.to_string());
  std::string names;
  for (std::size_t i = 0; i < interleave.size(); ++i) names += (i ? "," : "") + interleave[i].to_string();
  out.set(p + "interleave", names);
}

TrainConfig TrainConfig::read(const Config& in, const std::string& p) {
  TrainConfig c;
  c.batch = in.get_size(p + "batch", c.batch);
  c.steps = in.get_size(p + "steps", c.steps);
  c.lr = in.get_double(p + "lr", c.lr);
  c.weight_decay = in.get_double(p + "weight_decay", c.weight_decay);
  c.tau = in.get_double(p + "tau", c.tau);
  c.warmup = in.get_size(p + "warmup", c.warmup);
  c.cosine = in.get_size(p + "cosine", c.cosine ? 1 : 0) != 0;
  c.strategy = ScheduleStrategy::parse(in.get_string(p + "strategy", c.strategy.to_string()));
  for (const auto& name : split_list(in.get_string(p + "interleave", ""))) c.interleave.push_back(ScheduleStrategy::parse(name));
  c.validate();
  return c;
}

std::string LossTrace::to_csv() const {
  std::string out = "# config_hash " + config_hash + " seed " + std::to_string(seed) + "\n";
  out += "step,schedule,loss\n";
  for (const auto& r : rows) out += std::to_string(r.step) + "," + r.schedule + "," + fmt(r.loss) + "\n";
  return out;
}

std::vector<const ClipSample*> sample_batch(const std::vector<ClipSample>& clips, std::size_t classes,
                                            std::size_t batch, Rng& rng) {
  if (batch > classes) {
    throw InvalidArgument("batch " + std::to_string(batch) + " exceeds the " + std::to_string(classes) +
                          " classes (batches hold distinct classes)");
  }
  std::vector<std::vector<const ClipSample*>> by_class(classes);
  for (const auto& c : clips) {
    if (c.label < classes) by_class[c.label].push_back(&c);
  }
  std::vector<std::size_t> order(classes);
  for (std::size_t i = 0; i < classes; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<const ClipSample*> out;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto& pool = by_class[order[i]];
    if (pool.empty()) throw InvalidArgument("no training clips for class " + std::to_string(order[i]));
    out.push_back(pool[rng.below(pool.size())]);
  }
  return out;
}

NamedTensors EncoderPair::parameters() const { return concat(video.parameters(), text.parameters()); }

EncoderPair make_encoder_pair(const EncoderConfig& video, const TextConfig& text, const Vocab& vocab,
                              std::uint64_t seed) {
  TextConfig tc = text;
  tc.vocab_size = vocab.size();
  Rng vr(derive_seed(seed, "init/video"));
  Rng tr(derive_seed(seed, "init/text"));
  return EncoderPair{VideoEncoder(video, vr), TextEncoder(tc, tr, "text"), vocab};
}

LossTrace train_encoder(const TrainConfig& config, const SyntheticDataset& data, EncoderPair& model,
                        const std::string& config_hash) {
  config.validate();
  const auto& vc = model.video.config();
  Rng sched_rng(derive_seed(config.seed, "train/schedule"));
  Rng batch_rng(derive_seed(config.seed, "train/batch"));
  AdamW opt(model.parameters(), AdamWConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  LossTrace trace{config_hash, config.seed, {}};
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto batch = sample_batch(data.train.clips, data.spec.classes, config.batch, batch_rng);
    std::vector<VideoClip> clips;
    std::vector<std::string> captions;
    for (const auto* s : batch) {
      clips.push_back(s->clip);
      captions.push_back(s->caption);
    }
    const DimSchedule schedule = sample_schedule(config.strategy_at(step), vc.width, vc.layers, vc.head_dim, sched_rng);
    opt.set_lr(scheduled_lr(config.lr, step, config.steps, config.warmup, config.cosine));
    Tensor loss;
    try {
      const Tensor v = model.video.encode_batch(clips, schedule);
      const Tensor t = model.text.encode(make_text_batch(captions, model.vocab, model.text.config().max_len));
      loss = info_nce(v, t, config.tau);
    } catch (const NumericError& e) {
      throw NumericError("training failed at step " + std::to_string(step) + " (schedule " + schedule.label() +
                         "): " + e.what());
    }
    check_finite(loss, step, schedule.label());
    trace.rows.push_back(LossRow{step, schedule.label(), loss.item()});
    backward(loss);
    opt.step();
    opt.zero_grad();
  }
  return trace;
}

Checkpoint encoder_checkpoint(const EncoderPair& model) {
  Checkpoint ckpt;
  ckpt.config.set("kind", "encoder");
  model.video.config().write(ckpt.config, "video.");
  model.text.config().write(ckpt.config, "text.");
  ckpt.tensors = model.parameters();
  ckpt.blobs["vocab"] = model.vocab.serialize();
  return ckpt;
}

EncoderPair encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.config.get_string("kind", "") != "encoder") throw IoError("checkpoint is not an encoder checkpoint");
  auto it = ckpt.blobs.find("vocab");
  if (it == ckpt.blobs.end()) throw IoError("encoder checkpoint has no vocab");
  try {
    const Vocab vocab = Vocab::deserialize(it->second);
    auto pair = make_encoder_pair(EncoderConfig::read(ckpt.config, "video."), TextConfig::read(ckpt.config, "text."),
                                  vocab, 0);
    assign_parameters(pair.parameters(), ckpt);
    return pair;
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("bad encoder checkpoint: ") + e.what());
  }
}

// ---- aggregator training -------------------------------------------------------

std::vector<FeatureRecord> build_feature_cache(const VideoEncoder& encoder, const std::vector<LongSample>& videos,
                                               std::size_t segments, const DimSchedule& schedule) {
  std::vector<FeatureRecord> out;
  out.reserve(videos.size());
  for (const auto& v : videos) {
    const Tensor f = segment_features(encoder, v.video, segments, schedule);
    out.push_back(FeatureRecord{v.id, schedule.label(), segments, f.cols(), {f.data().begin(), f.data().end()}});
  }
  return out;
}

void AggTrainConfig::validate() const {
  if (batch < 2) throw InvalidArgument("train-agg: batch must be at least 2");
  if (steps == 0) throw InvalidArgument("train-agg: steps must be positive");
  if (!(lr > 0.0)) throw InvalidArgument("train-agg: lr must be positive");
  if (weight_decay < 0.0) throw InvalidArgument("train-agg: weight_decay must be >= 0");
  if (!(tau > 0.0)) throw InvalidArgument("train-agg: tau must be positive");
  if (warmup >= steps) throw InvalidArgument("train-agg: warmup must be shorter than steps");
}

void AggTrainConfig::write(Config& out, const std::string& p) const {
  out.set(p + "batch", std::to_string(batch));
  out.set(p + "steps", std::to_string(steps));
  out.set(p + "lr", fmt(lr));
  out.set(p + "weight_decay", fmt(weight_decay));
  out.set(p + "tau", fmt(tau));
  out.set(p + "warmup", std::to_string(warmup));
  out.set(p + "cosine", cosine ? "1" : "0");
  std::string names;
  for (std::size_t i = 0; i < schedules.size(); ++i) names += (i ? "," : "") + schedules[i];
  out.set(p + "schedules", names);
}

AggTrainConfig AggTrainConfig::read(const Config& in, const std::string& p) {
  AggTrainConfig c;
  c.batch = in.get_size(p + "batch", c.batch);
  c.steps = in.get_size(p + "steps", c.steps);
  c.lr = in.get_double(p + "lr", c.lr);
  c.weight_decay = in.get_double(p + "weight_decay", c.weight_decay);
  c.tau = in.get_double(p + "tau", c.tau);
  c.warmup = in.get_size(p + "warmup", c.warmup);
  c.cosine = in.get_size(p + "cosine", c.cosine ? 1 : 0) != 0;
  c.schedules = split_list(in.get_string(p + "schedules", ""));
  c.validate();
  return c;
}

NamedTensors AggregatorModel::parameters() const { return concat(agg.parameters(), summary.parameters()); }

AggregatorModel make_aggregator_model(const AggregatorConfig& agg, const TextConfig& text, const Vocab& vocab,
                                      std::uint64_t seed) {
  TextConfig tc = text;
  tc.vocab_size = vocab.size();
  Rng ar(derive_seed(seed, "init/agg"));
  Rng tr(derive_seed(seed, "init/summary"));
  return AggregatorModel{Aggregator(agg, ar), TextEncoder(tc, tr, "summary"), vocab};
}

LossTrace train_aggregator(const AggTrainConfig& config, const std::map<std::string, std::vector<FeatureRecord>>& features,
                           const std::vector<LongSample>& videos, AggregatorModel& model,
                           const std::string& config_hash) {
  config.validate();
  if (videos.size() < config.batch) throw InvalidArgument("train-agg: fewer long videos than the batch size");
  const std::size_t S = model.agg.config().segments, E = model.agg.config().embed_dim;
  std::vector<std::string> names = config.schedules;
  if (names.empty())
    for (const auto& [name, recs] : features) names.push_back(name);
  if (names.empty()) throw InvalidArgument("train-agg: no feature caches");

  // schedule -> video id -> record
  std::map<std::string, std::map<std::string, const FeatureRecord*>> index;
  std::vector<std::string> missing;
  for (const auto& name : names) {
    auto it = features.find(name);
    auto& by_id = index[name];
    if (it != features.end())
      for (const auto& r : it->second) by_id[r.video_id] = &r;
    for (const auto& v : videos) {
      auto r = by_id.find(v.id);
      if (r == by_id.end() || r->second->segments != S || r->second->embed_dim != E) missing.push_back(name + "/" + v.id);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ... (" + std::to_string(missing.size()) + " total)";
    throw IoError("feature cache incomplete; missing: " + list);
  }

  Rng batch_rng(derive_seed(config.seed, "train-agg/batch"));
  Rng sched_rng(derive_seed(config.seed, "train-agg/schedule"));
  AdamW opt(model.parameters(), AdamWConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  LossTrace trace{config_hash, config.seed, {}};
  std::vector<std::size_t> order(videos.size());
  for (std::size_t step = 0; step < config.steps; ++step) {
    opt.set_lr(scheduled_lr(config.lr, step, config.steps, config.warmup, config.cosine));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    batch_rng.shuffle(order);
    std::vector<double> values;
    std::vector<std::string> summaries;
    std::string used;
    for (std::size_t b = 0; b < config.batch; ++b) {
      const auto& v = videos[order[b]];
      const std::string& name = names[sched_rng.below(names.size())];
      const auto* rec = index[name][v.id];
      values.insert(values.end(), rec->values.begin(), rec->values.end());
      summaries.push_back(v.summary);
      used += (b ? "|" : "") + name;
    }
    const Tensor feats(Shape{config.batch * S, E}, std::move(values));
    Tensor loss;
    try {
      const Tensor a = model.agg.forward(feats, config.batch);
      const Tensor t = model.summary.encode(make_text_batch(summaries, model.vocab, model.summary.config().max_len));
      loss = info_nce(a, t, config.tau);
    } catch (const NumericError& e) {
      throw NumericError("aggregator training failed at step " + std::to_string(step) + ": " + e.what());
    }
    check_finite(loss, step, used);
    trace.rows.push_back(LossRow{step, used, loss.item()});
    backward(loss);
    opt.step();
    opt.zero_grad();
  }
  return trace;
}

Checkpoint aggregator_checkpoint(const AggregatorModel& model) {
  Checkpoint ckpt;
  ckpt.config.set("kind", "aggregator");
  model.agg.config().write(ckpt.config, "agg.");
  model.summary.config().write(ckpt.config, "summary.");
  ckpt.tensors = model.parameters();
  ckpt.blobs["vocab"] = model.vocab.serialize();
  return ckpt;
}

AggregatorModel aggregator_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.config.get_string("kind", "") != "aggregator") throw IoError("checkpoint is not an aggregator checkpoint");
  auto it = ckpt.blobs.find("vocab");
  if (it == ckpt.blobs.end()) throw IoError("aggregator checkpoint has no vocab");
  try {
    const Vocab vocab = Vocab::deserialize(it->second);
    auto model = make_aggregator_model(AggregatorConfig::read(ckpt.config, "agg."),
                                       TextConfig::read(ckpt.config, "summary."), vocab, 0);
    assign_parameters(model.parameters(), ckpt);
    return model;
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("bad aggregator checkpoint: ") + e.what());
  }
}

}  // namespace adavid
