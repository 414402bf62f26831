#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <json.hpp>
#include <set>

#include "adavid/error.hpp"
#include "adavid/eval.hpp"
#include "adavid/flops.hpp"
#include "test_support.hpp"

using namespace adavid;
using namespace adavid::testing;

namespace {

EmbeddingVector random_unit(std::size_t dim, Rng& rng) {
  EmbeddingVector v(dim);
  double n = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n += x * x;
  }
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

EmbeddingVector one_hot(std::size_t dim, std::size_t i) {
  EmbeddingVector v(dim, 0.0);
  v[i] = 1.0;
  return v;
}

// random orthogonal matrix by Gram-Schmidt
std::vector<EmbeddingVector> random_rotation(std::size_t dim, Rng& rng) {
  std::vector<EmbeddingVector> q;
  while (q.size() < dim) {
    EmbeddingVector v = random_unit(dim, rng);
    for (const auto& u : q) {
      double d = 0.0;
      for (std::size_t i = 0; i < dim; ++i) d += u[i] * v[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= d * u[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    for (double& x : v) x /= std::sqrt(n);
    q.push_back(v);
  }
  return q;
}

EmbeddingVector rotate(const std::vector<EmbeddingVector>& m, const EmbeddingVector& v) {
  EmbeddingVector out(v.size(), 0.0);
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::size_t c = 0; c < v.size(); ++c) out[r] += m[r][c] * v[c];
  return out;
}

EncoderConfig small_video() {
  EncoderConfig c;
  c.layers = 4;
  c.width = 32;
  c.head_dim = 8;
  c.patch = 8;
  c.image = 16;
  c.frames = 4;
  c.max_frames = 4;
  c.embed_dim = 8;
  return c;
}

TextConfig small_text() {
  TextConfig c;
  c.layers = 1;
  c.width = 16;
  c.head_dim = 8;
  c.embed_dim = 8;
  return c;
}

SyntheticDataset small_data() {
  SyntheticSpec s;
  s.image = 16;
  s.samples_per_class = 1;
  s.test_per_class = 4;
  s.long_sets = 1;
  s.long_test_sets = 3;
  return generate_synthetic(s);
}

}  // namespace

TEST_CASE("random embeddings score chance on 5-way mcq") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    Embeddings q;
    std::vector<Embeddings> c;
    std::vector<std::size_t> correct;
    for (int i = 0; i < 1000; ++i) {
      q.push_back(random_unit(16, rng));
      Embeddings cand;
      for (int j = 0; j < 5; ++j) cand.push_back(random_unit(16, rng));
      c.push_back(cand);
      correct.push_back(rng.below(5));
    }
    const double acc = mcq_accuracy(q, c, correct);
    CHECK(acc >= 0.16);
    CHECK(acc <= 0.24);
  }
}

TEST_CASE("mcq micro cases") {
  // antipodal pair: correct iff the sign of the similarity is right
  const Embeddings cand{{1.0, 0.0}, {-1.0, 0.0}};
  CHECK(argmax_cosine(EmbeddingVector{0.3, 0.9}, cand) == 0);
  CHECK(argmax_cosine(EmbeddingVector{-0.3, 0.9}, cand) == 1);
  CHECK(mcq_accuracy({{0.3, 0.9}, {-0.3, 0.9}}, {cand, cand}, {0, 0}) == 0.5);
  // ties go to the lowest index
  CHECK(argmax_cosine(EmbeddingVector{0.0, 1.0}, cand) == 0);
  CHECK(argmax_cosine(EmbeddingVector{1.0, 0.0}, Embeddings{{0.0, 1.0}, {2.0, 0.0}, {1.0, 0.0}}) == 1);
  CHECK_THROWS_AS(mcq_accuracy({{1.0, 0.0}}, {{{1.0, 0.0}}}, {0}), InvalidArgument);
}

TEST_CASE("mcq benchmarks are well formed and an oracle scores 1") {
  const auto data = small_data();
  for (McqMode mode : {McqMode::kInter, McqMode::kIntra}) {
    const auto bench = make_mcq_benchmark(data.test, data.spec, mode, mode == McqMode::kInter ? 5 : 4, 200, 7);
    CHECK(bench.items.size() == 200);
    // pool labels
    std::vector<std::size_t> label;
    if (mode == McqMode::kInter) {
      for (const auto& c : data.test.clips) label.push_back(c.label);
    } else {
      for (const auto& v : data.test.long_videos)
        for (std::size_t m : v.motifs) label.push_back(m);
    }
    REQUIRE(label.size() == bench.pool.size());
    Embeddings q;
    std::vector<Embeddings> cands;
    std::vector<std::size_t> correct;
    std::set<std::size_t> positions;
    for (const auto& item : bench.items) {
      std::set<std::size_t> seen;
      std::size_t matches = 0;
      Embeddings c;
      for (std::size_t j = 0; j < item.candidates.size(); ++j) {
        const std::size_t l = label[item.candidates[j]];
        seen.insert(l);
        if (class_caption(l) == item.query) {
          ++matches;
          CHECK(j == item.correct);
        }
        c.push_back(one_hot(16, l));
      }
      CHECK(matches == 1);
      CHECK(seen.size() == item.candidates.size());
      positions.insert(item.correct);
      std::size_t ql = 0;
      while (class_caption(ql) != item.query) ++ql;
      q.push_back(one_hot(16, ql));
      cands.push_back(c);
      correct.push_back(item.correct);
    }
    CHECK(positions.size() == bench.items[0].candidates.size());
    CHECK(mcq_accuracy(q, cands, correct) == 1.0);
  }
  CHECK_THROWS_AS(make_mcq_benchmark(data.test, data.spec, McqMode::kInter, 9, 10, 0), InvalidArgument);
  CHECK_THROWS_AS(make_mcq_benchmark(data.test, data.spec, McqMode::kIntra, 5, 10, 0), InvalidArgument);
}

TEST_CASE("mcq accuracy is rotation invariant") {
  Rng rng(4);
  const auto rot = random_rotation(8, rng);
  Embeddings q, rq;
  std::vector<Embeddings> c, rc;
  std::vector<std::size_t> correct;
  for (int i = 0; i < 300; ++i) {
    const auto base = random_unit(8, rng);
    q.push_back(base);
    rq.push_back(rotate(rot, base));
    Embeddings cand, rcand;
    for (int j = 0; j < 5; ++j) {
      auto v = random_unit(8, rng);
      for (std::size_t d = 0; d < 8; ++d) v[d] += (j == 0 ? 0.5 : 0.0) * base[d];
      cand.push_back(v);
      rcand.push_back(rotate(rot, v));
    }
    c.push_back(cand);
    rc.push_back(rcand);
    correct.push_back(0);
  }
  const double a = mcq_accuracy(q, c, correct);
  CHECK(a > 0.3);
  CHECK(mcq_accuracy(rq, rc, correct) == a);
}

TEST_CASE("retrieval examples") {
  Rng rng(5);
  Embeddings g;
  std::vector<std::string> ids;
  std::map<std::string, std::string> truth;
  for (int i = 0; i < 20; ++i) {
    g.push_back(random_unit(8, rng));
    ids.push_back("v" + std::to_string(i));
    truth[ids.back()] = ids.back();
  }
  const Recall self = retrieval_eval(g, ids, g, ids, truth);
  CHECK(self.r1 == 1.0);
  CHECK(self.r10 == 1.0);

  // positive rescaling of the gallery changes nothing
  Embeddings scaled = g;
  for (std::size_t i = 0; i < scaled.size(); ++i)
    for (double& x : scaled[i]) x *= 0.5 + static_cast<double>(i);
  Embeddings q;
  for (int i = 0; i < 20; ++i) q.push_back(random_unit(8, rng));
  const Recall a = retrieval_eval(q, ids, g, ids, truth), b = retrieval_eval(q, ids, scaled, ids, truth);
  CHECK(a.r1 == b.r1);
  CHECK(a.r5 == b.r5);
  CHECK(a.r10 == b.r10);
  CHECK(a.r1 <= a.r5);
  CHECK(a.r5 <= a.r10);

  auto missing = truth;
  missing.erase("v3");
  CHECK_THROWS_AS(retrieval_eval(q, ids, g, ids, missing), InvalidArgument);
  auto dangling = truth;
  dangling["v3"] = "nope";
  CHECK_THROWS_AS(retrieval_eval(q, ids, g, ids, dangling), InvalidArgument);
  const Embeddings small(g.begin(), g.begin() + 9);
  const std::vector<std::string> small_ids(ids.begin(), ids.begin() + 9);
  CHECK_THROWS_AS(retrieval_eval(small, small_ids, small, small_ids, truth), InvalidArgument);
}

TEST_CASE("rank ties count lower indices first") {
  const Embeddings g{{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {2.0, 0.0}};
  CHECK(rank_of(EmbeddingVector{1.0, 0.0}, g, 0) == 1);
  CHECK(rank_of(EmbeddingVector{1.0, 0.0}, g, 1) == 2);
  CHECK(rank_of(EmbeddingVector{1.0, 0.0}, g, 3) == 3);
  CHECK(rank_of(EmbeddingVector{1.0, 0.0}, g, 2) == 4);
}

TEST_CASE("random retrieval recalls sit at their uniform-rank values") {
  std::size_t h1 = 0, h10 = 0, n = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(1000 + seed);
    Embeddings g, q;
    std::vector<std::string> ids;
    std::map<std::string, std::string> truth;
    for (int i = 0; i < 100; ++i) {
      g.push_back(random_unit(16, rng));
      q.push_back(random_unit(16, rng));
      ids.push_back(std::to_string(i));
      truth[ids.back()] = ids.back();
    }
    const Recall r = retrieval_eval(q, ids, g, ids, truth);
    CHECK(r.r1 <= r.r5);
    CHECK(r.r5 <= r.r10);
    h1 += static_cast<std::size_t>(std::lround(r.r1 * 100));
    h10 += static_cast<std::size_t>(std::lround(r.r10 * 100));
    n += 100;
  }
  // binomial 99% bands over 20000 queries
  const double r1 = static_cast<double>(h1) / n, r10 = static_cast<double>(h10) / n;
  CHECK(r1 > 0.01 - 2.58 * std::sqrt(0.01 * 0.99 / n));
  CHECK(r1 < 0.01 + 2.58 * std::sqrt(0.01 * 0.99 / n));
  CHECK(r10 > 0.10 - 2.58 * std::sqrt(0.1 * 0.9 / n));
  CHECK(r10 < 0.10 + 2.58 * std::sqrt(0.1 * 0.9 / n));
}

TEST_CASE("frame subsampling") {
  VideoClip v{8, 1, 1, 1, {0, 1, 2, 3, 4, 5, 6, 7}};
  CHECK(subsample_frames(v, 2).pixels == std::vector<double>{2, 6});
  CHECK(subsample_frames(v, 4).pixels == std::vector<double>{1, 3, 5, 7});
  CHECK(subsample_frames(v, 8).pixels == v.pixels);
  CHECK(subsample_frames(v, 0).pixels == v.pixels);
  CHECK_THROWS_AS(subsample_frames(v, 9), InvalidArgument);
}

TEST_CASE("sweep rows, flops and reproducibility") {
  const auto data = small_data();
  auto model = make_encoder_pair(small_video(), small_text(), data.vocab, 0);
  SweepRequest req;
  req.schedules = {"d-full", "d-half", "d-quarter"};
  req.items = 40;
  const auto a = sweep(model, nullptr, data, req, "cafe");
  REQUIRE(a.rows.size() == 3);
  CHECK(a.rows[0].flops > a.rows[1].flops);
  CHECK(a.rows[1].flops > a.rows[2].flops);
  for (const auto& r : a.rows) {
    CHECK(r.frames == 4);
    CHECK(r.metric == "mcq_acc");
    CHECK(r.value >= 0.0);
    CHECK(r.value <= 1.0);
  }
  CHECK(a.to_csv() == sweep(model, nullptr, data, req, "cafe").to_csv());
  const std::string csv = a.to_csv();
  CHECK(csv.rfind("# config_hash cafe seed 0\nschedule,frames,flops,metric,value,seed\nd-full,4,", 0) == 0);
  const auto j = nlohmann::json::parse(a.to_json());
  CHECK(j["config_hash"] == "cafe");
  CHECK(j["rows"].size() == 3);
  CHECK(j["rows"][2]["schedule"] == "d-quarter");

  req.schedules = {"d-dec"};
  req.frame_counts = {2, 4};
  const auto dec = sweep(model, nullptr, data, req, "cafe");
  REQUIRE(dec.rows.size() == 2);
  const auto sched = named_schedule("d-dec", 32, 4);
  CHECK(dec.rows[0].flops == schedule_flops(sched, 2, 4, FlopsMode::kSpaceTime).total);
  CHECK(dec.rows[1].flops == schedule_flops(sched, 4, 4, FlopsMode::kSpaceTime).total);
}

TEST_CASE("retrieval sweep reports aggregator and pool recalls") {
  const auto data = small_data();
  auto model = make_encoder_pair(small_video(), small_text(), data.vocab, 0);
  AggregatorConfig ac;
  ac.layers = 1;
  ac.width = 16;
  ac.head_dim = 8;
  ac.embed_dim = 8;
  auto agg = make_aggregator_model(ac, small_text(), data.vocab, 0);
  SweepRequest req;
  req.benchmark = Benchmark::kRetrieval;
  req.schedules = {"d-full", "d-quarter"};
  const auto r = sweep(model, &agg, data, req, "h");
  REQUIRE(r.rows.size() == 12);
  CHECK(r.rows[0].metric == "r1");
  CHECK(r.rows[3].metric == "pool_r1");
  CHECK(r.rows[0].frames == 16);
  const auto full = named_schedule("d-full", 32, 4);
  CHECK(r.rows[0].flops == schedule_flops(full, 16, 4, FlopsMode::kHierarchical, 4).total);
  CHECK(r.rows[0].flops == 4 * schedule_flops(full, 4, 4, FlopsMode::kSpaceTime).total);
  for (std::size_t i = 0; i < r.rows.size(); i += 3) {
    CHECK(r.rows[i].value <= r.rows[i + 1].value);
    CHECK(r.rows[i + 1].value <= r.rows[i + 2].value);
  }
  req.frame_counts = {6};
  CHECK_THROWS_AS(sweep(model, &agg, data, req, "h"), InvalidArgument);
}

TEST_CASE("more frames at half width cost less than base frames at full width") {
  const auto full = named_schedule("d-full", 64, 8), half = named_schedule("d-half", 64, 8);
  for (std::uint64_t T : {2, 4, 8})
    CHECK(schedule_flops(half, 2 * T, 16, FlopsMode::kSpaceTime).total <
          schedule_flops(full, T, 16, FlopsMode::kSpaceTime).total);
}

TEST_CASE("frame sweep classifier") {
  SyntheticSpec spec;
  spec.image = 16;
  Rng rng(3);
  EncoderConfig vc = small_video();
  VideoEncoder enc(vc, rng);
  FrameSweepConfig cfg;
  cfg.frame_counts = {2, 16};
  cfg.widths = {32};
  cfg.train_per_class = 8;
  cfg.test_per_class = 8;

  cfg.train_head = false;
  const auto untrained = frame_sweep_classifier(enc, spec, cfg, "h");
  REQUIRE(untrained.rows.size() == 2);
  // 32 test videos over 4 classes
  for (const auto& r : untrained.rows) CHECK(r.value <= 0.25 + 2.58 * std::sqrt(0.25 * 0.75 / 32));

  cfg.train_head = true;
  const auto trained = frame_sweep_classifier(enc, spec, cfg, "h");
  REQUIRE(trained.rows.size() == 2);
  CHECK(trained.rows[0].frames == 2);
  CHECK(trained.rows[0].metric == "top1");
  CHECK(trained.rows[0].schedule == "d-32");
  CHECK(trained.rows[1].flops == row_flops(vc, named_schedule("d-full", 32, 4), 16, 4));
  CHECK(trained.rows[0].value <= trained.rows[1].value);
  CHECK(trained.rows[1].value > 0.5);
  CHECK(trained.to_csv() == frame_sweep_classifier(enc, spec, cfg, "h").to_csv());
}
