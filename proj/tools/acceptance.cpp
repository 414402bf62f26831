// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   acceptance            all ten
//   acceptance 1 2 9      a subset
//
// Criteria 7 and 8 train three toy models each (about 12 minutes on one core);
// 8 reuses the encoders trained for 7, or trains them itself when run alone.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adavid/eval.hpp"
#include "adavid/io.hpp"
#include "adavid/selfcheck.hpp"
#include "adavid/toy.hpp"
#include "adavid/training.hpp"

#ifndef ADAVID_CLI
#define ADAVID_CLI "adavid"
#endif

using namespace adavid;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

constexpr std::uint64_t kSeeds[] = {0, 1, 2};

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Wall-clock budget as part of the verdict, where the criterion states one.
Outcome timed(double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = seconds_since(t0);
  o.detail += (o.detail.empty() ? "" : "; ") + fmt("%.1f s", s);
  if (limit_s > 0 && s > limit_s) {
    o.pass = false;
    o.detail += fmt(" exceeds %.0f s", limit_s);
  }
  return o;
}

Outcome from_check(const CheckResult& r) { return {r.pass, r.detail}; }

// ---- 1 --------------------------------------------------------------------------

Outcome criterion1() {
  const auto rows = check_table1();
  Outcome o{true, ""};
  std::size_t ok = 0;
  for (const auto& r : rows) {
    if (r.pass) {
      ++ok;
    } else {
      o.pass = false;
      o.detail += r.name + " " + r.detail + "; ";
    }
  }
  o.detail += std::to_string(ok) + "/" + std::to_string(rows.size()) + " rows within 1%";
  return o;
}

// ---- 7 / 8 ------------------------------------------------------------------------

struct ToyRun {
  EncoderPair model;
  double full = 0.0, quarter = 0.0;
};

const SyntheticDataset& toy_data() {
  static const SyntheticDataset data = generate_synthetic(SyntheticSpec{});
  return data;
}

std::map<std::uint64_t, ToyRun>& toy_runs() {
  static std::map<std::uint64_t, ToyRun> runs;
  return runs;
}

ToyRun& toy_run(std::uint64_t seed) {
  auto& runs = toy_runs();
  if (auto it = runs.find(seed); it != runs.end()) return it->second;
  const auto& data = toy_data();
  const auto vc = toy_encoder_config();
  auto model = make_encoder_pair(vc, toy_text_config(), data.vocab, seed);
  TrainConfig tc = toy_train_config();
  tc.seed = seed;
  train_encoder(tc, data, model, "acceptance");
  const auto bench = make_mcq_benchmark(data.test, data.spec, McqMode::kInter, 5, 1000, seed);
  ToyRun run{std::move(model), 0.0, 0.0};
  run.full = mcq_eval(run.model, bench, named_schedule("d-full", vc.width, vc.layers));
  run.quarter = mcq_eval(run.model, bench, named_schedule("d-quarter", vc.width, vc.layers));
  return runs.emplace(seed, std::move(run)).first->second;
}

Outcome criterion7() {
  const double chance = 1.0 / 5.0;
  Outcome o{true, "steps " + std::to_string(toy_train_config().steps)};
  for (auto seed : kSeeds) {
    const auto& r = toy_run(seed);
    const bool ok = r.full >= 0.9 && r.quarter >= chance + 0.3;
    o.pass = o.pass && ok;
    o.detail += "; seed " + std::to_string(seed) + " d-full " + fmt("%.3f", r.full) + " d-quarter " +
                fmt("%.3f", r.quarter) + (ok ? "" : " (short)");
  }
  return o;
}

Outcome criterion8() {
  const auto& data = toy_data();
  const auto dir = fs::temp_directory_path() / "adavid_acceptance";
  fs::create_directories(dir);
  Outcome o{true, ""};
  for (auto seed : kSeeds) {
    auto& enc = toy_run(seed).model;
    const auto vc = enc.video.config();
    const auto sched = named_schedule("d-full", vc.width, vc.layers);

    const fs::path ckpt = dir / ("encoder" + std::to_string(seed) + ".ckpt");
    save_checkpoint(ckpt, encoder_checkpoint(enc));
    const std::string before = file_hash(ckpt);
    const auto frozen = encoder_from_checkpoint(load_checkpoint(ckpt));

    const AggTrainConfig tc = [&] {
      AggTrainConfig c = toy_agg_train_config();
      c.seed = seed;
      return c;
    }();
    std::map<std::string, std::vector<FeatureRecord>> cache;
    for (const auto& name : tc.schedules)
      cache[name] = build_feature_cache(frozen.video, data.train.long_videos, data.spec.segments,
                                        named_schedule(name, vc.width, vc.layers));
    AggregatorConfig ac = toy_aggregator_config();
    ac.segments = data.spec.segments;
    ac.embed_dim = vc.embed_dim;
    TextConfig sc = toy_summary_config();
    sc.embed_dim = vc.embed_dim;
    auto agg = make_aggregator_model(ac, sc, data.vocab, seed);
    train_aggregator(tc, cache, data.train.long_videos, agg, "acceptance");

    const auto a = long_video_retrieval(frozen, &agg, data.test.long_videos, data.spec.segments, sched, 0,
                                        LongMethod::kAggregator);
    const auto p = long_video_retrieval(frozen, nullptr, data.test.long_videos, data.spec.segments, sched, 0,
                                        LongMethod::kAveragePool);
    save_checkpoint(dir / "reread.ckpt", encoder_checkpoint(frozen));
    const bool frozen_ok = file_hash(ckpt) == before && file_hash(dir / "reread.ckpt") == before;
    const bool ok = a.r1 - p.r1 >= 0.2 && frozen_ok;
    o.pass = o.pass && ok;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " agg R@1 " +
                fmt("%.3f", a.r1) + " pool R@1 " + fmt("%.3f", p.r1) + (frozen_ok ? "" : " encoder changed") +
                (ok ? "" : " (short)");
  }
  fs::remove_all(dir);
  return o;
}

// ---- 9 ----------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + ADAVID_CLI + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome criterion9() {
  const auto root = fs::temp_directory_path() / "adavid_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string data = (root / "data").string();
  if (run_cli("--seed 7 gen --data \"" + data + "\"") != 0) return {false, "gen failed"};
  std::vector<std::string> loss, sweeps;
  for (int run = 0; run < 2; ++run) {
    const std::string out = (root / ("run" + std::to_string(run))).string();
    const std::string common = " --data \"" + data + "\" --out \"" + out + "\"";
    if (run_cli("--seed 3 train" + common + " --set train.steps=40 --set train.warmup=4") != 0)
      return {false, "train failed"};
    if (run_cli("--seed 3 sweep" + common + " --schedules d-full,d-dec,d-quarter --frames 2,4 --set sweep.items=200") != 0)
      return {false, "sweep failed"};
    loss.push_back(read_file(fs::path(out) / "loss.csv"));
    sweeps.push_back(read_file(fs::path(out) / "sweep.csv"));
  }
  fs::remove_all(root);
  const bool same_loss = loss[0] == loss[1], same_sweep = sweeps[0] == sweeps[1];
  return {same_loss && same_sweep, std::string("loss.csv ") + (same_loss ? "identical" : "differs") + ", sweep.csv " +
                                       (same_sweep ? "identical" : "differs") + " across two CLI runs"};
}

// ---- 10 ---------------------------------------------------------------------------

Outcome criterion10() {
  const auto results = run_selfcheck();
  std::size_t failed = 0;
  std::string names;
  for (const auto& r : results)
    if (!r.pass) {
      ++failed;
      names += (names.empty() ? "" : ", ") + r.name;
    }
  Outcome o{failed == 0, std::to_string(results.size() - failed) + "/" + std::to_string(results.size()) + " checks pass"};
  if (failed) o.detail += "; failing: " + names;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* title;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all = {
      {1, "evaluation-configuration FLOPs within 1%", 0, criterion1},
      {2, "formula equals instrumented counter", 60, [] { return from_check(check_flops_reconciliation()); }},
      {3, "slicing oracles bit-exact", 60, [] { return from_check(check_slicing_oracles()); }},
      {4, "end-to-end gradient check", 120, [] { return from_check(check_end_to_end_gradient()); }},
      {5, "gradient locality at D/4", 0, [] { return from_check(check_gradient_locality()); }},
      {6, "decreasing sampler law", 0, [] { return from_check(check_sampler_law()); }},
      {7, "toy MCQ d-full >= 0.9, d-quarter >= chance + 0.3", 900, criterion7},
      {8, "aggregator R@1 - pool R@1 >= 0.2, encoder frozen", 900, criterion8},
      {9, "byte-identical loss and sweep CSVs", 0, criterion9},
      {10, "selfcheck exits 0", 0, criterion10},
  };

  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (id < 1 || id > 10) {
      std::fprintf(stderr, "usage: acceptance [criterion ids 1-10]\n");
      return 2;
    }
    wanted.insert(id);
  }

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const Outcome o = timed(c.limit_s, c.run);
    if (!o.pass) ++failed;
    std::printf("%s  %2d  %s  (%s)\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
