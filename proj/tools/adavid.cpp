// adavid: FLOPs analysis, data generation, training, evaluation, sweeps and
// the self-check suite.
//
// Exit codes: 0 ok, 1 failed check / numeric failure, 2 usage, 3 I/O.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "adavid/config.hpp"
#include "adavid/dataset.hpp"
#include "adavid/error.hpp"
#include "adavid/eval.hpp"
#include "adavid/flops.hpp"
#include "adavid/io.hpp"
#include "adavid/selfcheck.hpp"
#include "adavid/toy.hpp"
#include "adavid/training.hpp"

using namespace adavid;
namespace fs = std::filesystem;

namespace {

constexpr int kExitFail = 1, kExitUsage = 2, kExitIo = 3;

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// ---- settings -----------------------------------------------------------------

Config user_settings(const Common& c) {
  Config cfg = c.config_path.empty() ? Config{} : Config::load(c.config_path);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::vector<std::string> keys_of(const Config& defaults) {
  std::vector<std::string> keys;
  for (const auto& [k, v] : defaults.entries()) keys.push_back(k);
  return keys;
}

// Defaults merged with the user's file and --set overrides; unknown keys throw.
Config resolve(const Config& defaults, const Common& common) {
  const Config user = user_settings(common);
  user.require_known(keys_of(defaults));
  Config out = defaults;
  out.merge(user);
  return out;
}

std::string keys_help(const Config& defaults) {
  std::string s = "Config keys (key=value in --config, or --set key=value), defaults:\n";
  for (const auto& [k, v] : defaults.entries()) s += "  " + k + " = " + v + "\n";
  return s;
}

void remove_key(Config& c, const std::string& key) {
  Config out;
  for (const auto& [k, v] : c.entries())
    if (k != key) out.set(k, v);
  c = out;
}

Config gen_defaults() {
  Config c;
  SyntheticSpec{}.write(c, "data.");
  remove_key(c, "data.seed");
  return c;
}

Config train_defaults() {
  Config c;
  toy_encoder_config().write(c, "video.");
  toy_text_config().write(c, "text.");
  toy_train_config().write(c, "train.");
  remove_key(c, "text.vocab_size");
  return c;
}

Config train_agg_defaults() {
  Config c;
  toy_aggregator_config().write(c, "agg.");
  toy_summary_config().write(c, "summary.");
  toy_agg_train_config().write(c, "train-agg.");
  remove_key(c, "summary.vocab_size");
  remove_key(c, "agg.segments");
  return c;
}

Config sweep_defaults() {
  Config c;
  c.set("sweep.benchmark", "mcq");
  c.set("sweep.schedules", "d-full,d-dec,d-quarter");
  c.set("sweep.frames", "");
  c.set("sweep.k", "5");
  c.set("sweep.items", "1000");
  return c;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  return out;
}

std::size_t parse_count(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used == s.size()) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw InvalidArgument(what + ": expected a non-negative integer, got '" + s + "'");
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

void print_hash(const std::string& hash, std::uint64_t seed) {
  std::printf("config_hash %s seed %llu\n", hash.c_str(), static_cast<unsigned long long>(seed));
}

// ---- flops ------------------------------------------------------------------------

struct FlopsArgs {
  bool table1 = false;
  bool csv = false;
  std::string mode = "spacetime";
  std::size_t T = kTable1Frames, N = kTable1Patches, D = kTable1Width, L = kTable1Layers, S = 1;
  std::string schedule;
};

int cmd_flops(const FlopsArgs& a) {
  if (a.table1) {
    if (a.csv) std::printf("config,schedule,flops,published_e10,rel_err\n");
    else std::printf("%-11s %-38s %12s %10s %8s\n", "config", "widths", "computed", "published", "rel_err");
    for (const auto& row : table1_rows()) {
      const auto s = named_schedule(row.schedule, kTable1Width, kTable1Layers);
      const auto r = schedule_flops(s, kTable1Frames, kTable1Patches, FlopsMode::kSpaceTime);
      const double rel = std::abs(static_cast<double>(r.total) / 1e10 - row.printed) / row.printed;
      std::string widths;
      for (std::size_t i = 0; i < s.widths.size(); ++i) widths += (i ? ":" : "") + std::to_string(s.widths[i]);
      if (a.csv)
        std::printf("%s,%s,%llu,%.1f,%.6f\n", row.config.c_str(), row.schedule.c_str(),
                    static_cast<unsigned long long>(r.total), row.printed, rel);
      else
        std::printf("%-11s %-38s %12.4e %8.1fe10 %8.4f\n", row.config.c_str(), widths.c_str(),
                    static_cast<double>(r.total), row.printed, rel);
    }
    return 0;
  }
  const FlopsMode mode = parse_flops_mode(a.mode);
  const DimSchedule s = a.schedule.empty() ? DimSchedule{std::vector<std::size_t>(a.L, a.D), ""}
                                           : parse_schedule(a.schedule, a.D, a.L);
  if (a.schedule.empty()) validate_schedule(s, a.D, a.L);
  const auto r = schedule_flops(s, a.T, a.N, mode, a.S);
  if (a.csv) {
    std::printf("layer,width,qkv,scores,weighted_sum,out_proj,ffn,total\n");
    for (std::size_t l = 0; l < r.layers.size(); ++l) {
      const auto& x = r.layers[l];
      std::printf("%zu,%zu,%llu,%llu,%llu,%llu,%llu,%llu\n", l, x.width, (unsigned long long)x.parts.qkv,
                  (unsigned long long)x.parts.scores, (unsigned long long)x.parts.weighted_sum,
                  (unsigned long long)x.parts.out_proj, (unsigned long long)x.parts.ffn, (unsigned long long)x.total);
    }
    std::printf("total,,,,,,,%llu\n", static_cast<unsigned long long>(r.total));
    return 0;
  }
  std::printf("mode %s  T=%zu N=%zu S=%zu  schedule %s\n", to_string(mode).c_str(), a.T, a.N, a.S, s.label().c_str());
  for (std::size_t l = 0; l < r.layers.size(); ++l)
    std::printf("  layer %2zu  d=%-5zu %14llu\n", l, r.layers[l].width, (unsigned long long)r.layers[l].total);
  std::printf("total %llu (%.4e)\n", static_cast<unsigned long long>(r.total), static_cast<double>(r.total));
  return 0;
}

// ---- gen / train / train-agg --------------------------------------------------

struct Paths {
  std::string data = "data";
  std::string out = "run";
  std::string encoder;
  std::string agg;
  std::string cache;
};

int cmd_gen(const Common& common, const Paths& p) {
  Config cfg = resolve(gen_defaults(), common);
  SyntheticSpec spec = SyntheticSpec::read(cfg, "data.");
  spec.seed = common.seed;
  const auto data = generate_synthetic(spec);
  save_dataset(p.data, data);
  Config resolved;
  spec.write(resolved, "data.");
  print_hash(resolved.hash(), spec.seed);
  std::printf("wrote %s: %zu train clips, %zu test clips, %zu/%zu long videos\n", p.data.c_str(),
              data.train.clips.size(), data.test.clips.size(), data.train.long_videos.size(),
              data.test.long_videos.size());
  return 0;
}

int cmd_train(const Common& common, const Paths& p) {
  Config cfg = resolve(train_defaults(), common);
  const auto data = load_dataset(p.data);
  cfg.set("text.vocab_size", std::to_string(data.vocab.size()));
  const EncoderConfig vc = EncoderConfig::read(cfg, "video.");
  const TextConfig tc = TextConfig::read(cfg, "text.");
  TrainConfig tr = TrainConfig::read(cfg, "train.");
  tr.seed = common.seed;

  Config resolved;
  vc.write(resolved, "video.");
  tc.write(resolved, "text.");
  tr.write(resolved, "train.");
  remove_key(resolved, "text.vocab_size");
  data.spec.write(resolved, "data.");
  const std::string hash = resolved.hash();
  print_hash(hash, tr.seed);

  auto model = make_encoder_pair(vc, tc, data.vocab, tr.seed);
  const auto trace = train_encoder(tr, data, model, hash);
  Checkpoint ckpt = encoder_checkpoint(model);
  ckpt.config.set("config_hash", hash);
  ckpt.config.set("seed", std::to_string(tr.seed));
  const fs::path out(p.out);
  fs::create_directories(out);
  save_checkpoint(out / "encoder.ckpt", ckpt);
  write_text_file(out / "loss.csv", trace.to_csv());
  std::printf("steps %zu  first loss %.4f  last loss %.4f\n", trace.rows.size(), trace.rows.front().loss,
              trace.rows.back().loss);
  std::printf("wrote %s, %s\n", (out / "encoder.ckpt").c_str(), (out / "loss.csv").c_str());
  return 0;
}

int cmd_train_agg(const Common& common, const Paths& p) {
  Config cfg = resolve(train_agg_defaults(), common);
  const auto data = load_dataset(p.data);
  cfg.set("summary.vocab_size", std::to_string(data.vocab.size()));
  cfg.set("agg.segments", std::to_string(data.spec.segments));
  const fs::path out(p.out);
  const fs::path enc_path = p.encoder.empty() ? out / "encoder.ckpt" : fs::path(p.encoder);
  const std::string enc_hash = file_hash(enc_path);
  const auto encoder = encoder_from_checkpoint(load_checkpoint(enc_path));

  AggregatorConfig ac = AggregatorConfig::read(cfg, "agg.");
  ac.segments = data.spec.segments;
  ac.embed_dim = encoder.video.config().embed_dim;
  TextConfig sc = TextConfig::read(cfg, "summary.");
  sc.embed_dim = ac.embed_dim;
  AggTrainConfig tr = AggTrainConfig::read(cfg, "train-agg.");
  tr.seed = common.seed;
  const auto& vc = encoder.video.config();
  if (tr.schedules.empty()) tr.schedules = valid_schedule_names(vc.width, vc.layers);

  Config resolved;
  ac.write(resolved, "agg.");
  sc.write(resolved, "summary.");
  tr.write(resolved, "train-agg.");
  remove_key(resolved, "summary.vocab_size");
  resolved.set("encoder_hash", enc_hash);
  const std::string hash = resolved.hash();
  print_hash(hash, tr.seed);

  std::map<std::string, std::vector<FeatureRecord>> cache;
  if (!p.cache.empty() && fs::exists(p.cache)) {
    for (auto& r : load_feature_cache(p.cache)) cache[r.schedule].push_back(std::move(r));
    std::printf("loaded feature cache %s\n", p.cache.c_str());
  } else {
    std::vector<FeatureRecord> all;
    for (const auto& name : tr.schedules) {
      auto recs = build_feature_cache(encoder.video, data.train.long_videos, data.spec.segments,
                                      parse_schedule(name, vc.width, vc.layers));
      for (auto& r : recs) r.schedule = name;
      cache[name] = recs;
      all.insert(all.end(), recs.begin(), recs.end());
    }
    if (!p.cache.empty()) save_feature_cache(p.cache, all);
  }

  auto model = make_aggregator_model(ac, sc, data.vocab, tr.seed);
  const auto trace = train_aggregator(tr, cache, data.train.long_videos, model, hash);
  Checkpoint ckpt = aggregator_checkpoint(model);
  ckpt.config.set("config_hash", hash);
  ckpt.config.set("seed", std::to_string(tr.seed));
  ckpt.config.set("encoder_hash", enc_hash);
  fs::create_directories(out);
  save_checkpoint(out / "aggregator.ckpt", ckpt);
  write_text_file(out / "agg_loss.csv", trace.to_csv());
  std::printf("steps %zu  first loss %.4f  last loss %.4f\n", trace.rows.size(), trace.rows.front().loss,
              trace.rows.back().loss);

  const std::string after = file_hash(enc_path);
  if (after != enc_hash) {
    std::fprintf(stderr, "freeze contract violated: encoder checkpoint hash %s -> %s\n", enc_hash.c_str(),
                 after.c_str());
    return kExitFail;
  }
  std::printf("encoder checkpoint unchanged (%s)\n", enc_hash.c_str());
  return 0;
}

// ---- eval / sweep -------------------------------------------------------------------

struct SweepArgs {
  std::string benchmark, schedules, frames, json;
  std::string out_file;
};

int run_sweep(const Common& common, const Paths& p, const SweepArgs& a, bool single) {
  Common merged = common;
  if (!a.benchmark.empty()) merged.sets.push_back("sweep.benchmark=" + a.benchmark);
  if (!a.schedules.empty()) merged.sets.push_back("sweep.schedules=" + a.schedules);
  if (!a.frames.empty()) merged.sets.push_back("sweep.frames=" + a.frames);
  const Config cfg = resolve(sweep_defaults(), merged);

  SweepRequest req;
  req.benchmark = parse_benchmark(cfg.get_string("sweep.benchmark", "mcq"));
  req.schedules = split_commas(cfg.get_string("sweep.schedules", ""));
  for (const auto& f : split_commas(cfg.get_string("sweep.frames", "")))
    req.frame_counts.push_back(parse_count(f, "sweep.frames"));
  req.k = cfg.get_size("sweep.k", req.k);
  req.items = cfg.get_size("sweep.items", req.items);
  req.seed = common.seed;
  if (req.schedules.empty()) throw InvalidArgument("sweep.schedules is empty");
  if (single && req.schedules.size() != 1) throw InvalidArgument("eval takes exactly one schedule");

  const auto data = load_dataset(p.data);
  const fs::path out(p.out);
  const fs::path enc_path = p.encoder.empty() ? out / "encoder.ckpt" : fs::path(p.encoder);
  const auto encoder = encoder_from_checkpoint(load_checkpoint(enc_path));
  std::optional<AggregatorModel> agg;
  fs::path agg_path = p.agg.empty() ? out / "aggregator.ckpt" : fs::path(p.agg);
  if (req.benchmark == Benchmark::kRetrieval && (fs::exists(agg_path) || !p.agg.empty()))
    agg = aggregator_from_checkpoint(load_checkpoint(agg_path));

  Config resolved;
  resolved.set("sweep.benchmark", to_string(req.benchmark));
  resolved.set("sweep.schedules", cfg.get_string("sweep.schedules", ""));
  resolved.set("sweep.frames", cfg.get_string("sweep.frames", ""));
  resolved.set("sweep.k", std::to_string(req.k));
  resolved.set("sweep.items", std::to_string(req.items));
  resolved.set("encoder_hash", file_hash(enc_path));
  if (agg) resolved.set("aggregator_hash", file_hash(agg_path));
  const std::string hash = resolved.hash();
  print_hash(hash, req.seed);

  const auto result = sweep(encoder, agg ? &*agg : nullptr, data, req, hash);
  for (const auto& r : result.rows)
    std::printf("%-12s frames %-3zu flops %-14llu %-14s %.4f\n", r.schedule.c_str(), r.frames,
                static_cast<unsigned long long>(r.flops), r.metric.c_str(), r.value);

  if (single) {
    const fs::path file = a.out_file.empty() ? out / "eval.json" : fs::path(a.out_file);
    write_text_file(file, result.to_json());
    std::printf("wrote %s\n", file.c_str());
  } else {
    const fs::path file = a.out_file.empty() ? out / "sweep.csv" : fs::path(a.out_file);
    write_text_file(file, result.to_csv());
    std::printf("wrote %s\n", file.c_str());
    if (!a.json.empty()) write_text_file(a.json, result.to_json());
  }
  return 0;
}

int cmd_selfcheck() {
  std::size_t failed = 0;
  run_selfcheck([&](const CheckResult& r) {
    std::printf("%s\n", format_result(r).c_str());
    std::fflush(stdout);
    if (!r.pass) ++failed;
  });
  std::printf("%s: %zu failed\n", failed ? "SELFCHECK FAILED" : "SELFCHECK OK", failed);
  return failed ? kExitFail : 0;
}

void add_common(CLI::App* sub, Common& c, const Config& defaults) {
  sub->add_option("--config", c.config_path, "key=value config file");
  sub->add_option("--set", c.sets, "override one key (key=value), repeatable");
  if (!defaults.entries().empty()) sub->footer(keys_help(defaults));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AdaVid: adaptive-width video-language toolkit"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "root seed; every random stream derives from it")->capture_default_str();
  app.add_option("--threads", common.threads, "worker threads (computation is sequential; must be >= 1)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  FlopsArgs fa;
  auto* flops = app.add_subcommand("flops", "closed-form FLOPs of a schedule, or the ten evaluation configurations");
  flops->add_flag("--table1", fa.table1, "all ten evaluation configurations at D=768, L=12, T=4, N=196");
  flops->add_flag("--csv", fa.csv, "CSV output");
  flops->add_option("--mode", fa.mode, "dense | spacetime | hier")->capture_default_str();
  flops->add_option("--T", fa.T, "frames")->capture_default_str();
  flops->add_option("--N", fa.N, "patches per frame")->capture_default_str();
  flops->add_option("--D", fa.D, "full width")->capture_default_str();
  flops->add_option("--L", fa.L, "layers")->capture_default_str();
  flops->add_option("--S", fa.S, "segments (hier mode)")->capture_default_str();
  flops->add_option("--schedule", fa.schedule, "named schedule (d-dec, ...) or widths a:b:c; default all D");

  Paths paths;
  auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
  add_common(gen, common, gen_defaults());
  gen->add_option("--data", paths.data, "output directory")->capture_default_str();

  auto* train = app.add_subcommand("train", "train the adaptive encoder pair");
  add_common(train, common, train_defaults());
  train->add_option("--data", paths.data, "dataset directory")->capture_default_str();
  train->add_option("--out", paths.out, "writes encoder.ckpt and loss.csv here")->capture_default_str();

  auto* train_agg = app.add_subcommand("train-agg", "train the aggregator on frozen encoder features");
  add_common(train_agg, common, train_agg_defaults());
  train_agg->add_option("--data", paths.data, "dataset directory")->capture_default_str();
  train_agg->add_option("--out", paths.out, "writes aggregator.ckpt and agg_loss.csv here")->capture_default_str();
  train_agg->add_option("--encoder", paths.encoder, "encoder checkpoint (default <out>/encoder.ckpt)");
  train_agg->add_option("--cache", paths.cache, "feature cache file: loaded if present, else written");

  SweepArgs ea, sa;
  auto* eval = app.add_subcommand("eval", "evaluate one schedule; prints metrics and writes JSON");
  add_common(eval, common, sweep_defaults());
  eval->add_option("--data", paths.data, "dataset directory")->capture_default_str();
  eval->add_option("--out", paths.out, "run directory")->capture_default_str();
  eval->add_option("--encoder", paths.encoder, "encoder checkpoint (default <out>/encoder.ckpt)");
  eval->add_option("--agg", paths.agg, "aggregator checkpoint (default <out>/aggregator.ckpt if present)");
  eval->add_option("--benchmark", ea.benchmark, "mcq | mcq-intra | retrieval");
  eval->add_option("--schedule", ea.schedules, "named schedule or widths");
  eval->add_option("--frames", ea.frames, "frames per clip (retrieval: per video)");
  eval->add_option("--json", ea.out_file, "JSON output (default <out>/eval.json)");

  auto* sw = app.add_subcommand("sweep", "metric and FLOPs for several schedules / frame counts");
  add_common(sw, common, sweep_defaults());
  sw->add_option("--data", paths.data, "dataset directory")->capture_default_str();
  sw->add_option("--out", paths.out, "run directory")->capture_default_str();
  sw->add_option("--encoder", paths.encoder, "encoder checkpoint (default <out>/encoder.ckpt)");
  sw->add_option("--agg", paths.agg, "aggregator checkpoint (default <out>/aggregator.ckpt if present)");
  sw->add_option("--benchmark", sa.benchmark, "mcq | mcq-intra | retrieval");
  sw->add_option("--schedules", sa.schedules, "comma-separated schedules");
  sw->add_option("--frames", sa.frames, "comma-separated frame counts");
  sw->add_option("--csv", sa.out_file, "CSV output (default <out>/sweep.csv)");
  sw->add_option("--json", sa.json, "also write JSON here");

  auto* selfcheck = app.add_subcommand("selfcheck", "run the invariant suite; exit 0 only if every check passes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*flops) return cmd_flops(fa);
    if (*gen) return cmd_gen(common, paths);
    if (*train) return cmd_train(common, paths);
    if (*train_agg) return cmd_train_agg(common, paths);
    if (*eval) return run_sweep(common, paths, ea, true);
    if (*sw) return run_sweep(common, paths, sa, false);
    if (*selfcheck) return cmd_selfcheck();
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitFail;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return kExitFail;
  }
  return kExitUsage;
}
