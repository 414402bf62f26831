#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>
#include <unistd.h>

#include "adavid/dataset.hpp"
#include "adavid/error.hpp"
#include "adavid/io.hpp"
#include "test_support.hpp"

using namespace adavid;
using namespace adavid::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("adavid_io_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

bool same_clip(const VideoClip& a, const VideoClip& b) {
  return a.frames == b.frames && a.channels == b.channels && a.height == b.height && a.width == b.width &&
         bit_equal(a.pixels, b.pixels);
}

SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.samples_per_class = 2;
  s.test_per_class = 1;
  s.long_sets = 2;
  s.long_test_sets = 1;
  s.image = 16;
  return s;
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  Rng rng(1);
  Checkpoint c;
  c.config.set("kind", "encoder");
  c.config.set("video.width", "64");
  c.tensors = {{"a", random_tensor(Shape{3, 4}, rng)}, {"b", random_tensor(Shape{5}, rng)}};
  c.blobs["vocab"] = "red\t3\n";
  const std::string bytes = serialize_checkpoint(c);
  CHECK(bytes.rfind("ADAVID1\n", 0) == 0);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.config.canonical() == c.config.canonical());
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].first == "a");
  CHECK(bit_equal(back.tensors[0].second, c.tensors[0].second));
  CHECK(bit_equal(back.tensors[1].second, c.tensors[1].second));
  CHECK(back.blobs.at("vocab") == "red\t3\n");
  CHECK(serialize_checkpoint(back) == bytes);

  TempDir dir;
  save_checkpoint(dir.path / "m.ckpt", c);
  CHECK(serialize_checkpoint(load_checkpoint(dir.path / "m.ckpt")) == bytes);
  CHECK(file_hash(dir.path / "m.ckpt").size() == 16);
}

TEST_CASE("corrupt checkpoints are rejected") {
  Checkpoint c;
  c.tensors = {{"a", Tensor(Shape{2}, {1.0, 2.0})}};
  std::string bytes = serialize_checkpoint(c);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad), IoError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), IoError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/m.ckpt"), IoError);
}

TEST_CASE("assign_parameters checks names and shapes") {
  Checkpoint c;
  c.tensors = {{"w", Tensor(Shape{2}, {1.0, 2.0})}};
  Tensor w(Shape{2}, true);
  assign_parameters({{"w", w}}, c);
  CHECK(w.data()[1] == 2.0);
  Tensor wrong(Shape{3}, true);
  CHECK_THROWS_AS(assign_parameters({{"w", wrong}}, c), IoError);
  CHECK_THROWS_AS(assign_parameters({{"v", w}}, c), IoError);
}

TEST_CASE("clip and feature cache round trips") {
  TempDir dir;
  Rng rng(2);
  std::vector<VideoClip> clips;
  for (std::size_t t : {1, 3}) {
    VideoClip c{t, 3, 4, 4, {}};
    for (std::size_t i = 0; i < t * 48; ++i) c.pixels.push_back(rng.uniform());
    quantize_f32(c);
    clips.push_back(c);
  }
  save_clips(dir.path / "x.clip", clips);
  const auto back = load_clips(dir.path / "x.clip");
  REQUIRE(back.size() == 2);
  CHECK(same_clip(back[0], clips[0]));
  CHECK(same_clip(back[1], clips[1]));

  std::vector<FeatureRecord> recs{{"train-0-0", "d-full", 2, 3, {0.1, 0.2, 0.3, -0.4, 0.5, 1.0 / 3.0}},
                                  {"train-0-1", "64-48", 1, 3, {1.0, 0.0, -1.0}}};
  save_feature_cache(dir.path / "f.feat", recs);
  const auto got = load_feature_cache(dir.path / "f.feat");
  REQUIRE(got.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(got[i].video_id == recs[i].video_id);
    CHECK(got[i].schedule == recs[i].schedule);
    CHECK(got[i].segments == recs[i].segments);
    CHECK(got[i].embed_dim == recs[i].embed_dim);
    CHECK(bit_equal(got[i].values, recs[i].values));
  }
  write_file_atomic(dir.path / "bad.feat", "ADVFEAT1junk");
  CHECK_THROWS_AS(load_feature_cache(dir.path / "bad.feat"), IoError);
}

TEST_CASE("noise-free samples of a class are identical") {
  SyntheticSpec s = tiny_spec();
  s.noise = 0.0;
  const auto data = generate_synthetic(s);
  for (const auto& a : data.train.clips)
    for (const auto& b : data.train.clips)
      if (a.label == b.label) CHECK(same_clip(a.clip, b.clip));
  // and distinct classes differ
  CHECK_FALSE(same_clip(data.train.clips[0].clip, data.train.clips[1].clip));
}

TEST_CASE("five classes by twenty samples") {
  SyntheticSpec s = tiny_spec();
  s.classes = 5;
  s.samples_per_class = 20;
  s.segments = 4;
  const auto data = generate_synthetic(s);
  CHECK(data.train.clips.size() == 100);
  std::set<std::string> captions;
  for (const auto& c : data.train.clips) {
    captions.insert(c.caption);
    CHECK(c.caption == class_caption(c.label));
  }
  CHECK(captions.size() == 5);
}

TEST_CASE("captions and motifs") {
  CHECK(class_caption(0) == "red right");
  CHECK(class_caption(5) == "green left");
  CHECK(class_caption(15) == "yellow up");
  CHECK(summary_caption({2, 7}) == "first blue right then yellow left");
  SyntheticSpec s = tiny_spec();
  s.noise = 0.0;
  Rng rng(0);
  // red square moving right: starts at the left edge, ends at the right edge
  const VideoClip c = render_motif(0, 4, s, rng);
  CHECK(c.at(0, 0, 6, 0) == 1.0);
  CHECK(c.at(0, 0, 6, 15) == 0.0);
  CHECK(c.at(3, 0, 6, 15) == 1.0);
  CHECK(c.at(3, 1, 6, 15) == 0.0);
}

TEST_CASE("long videos share multisets and differ in order") {
  const auto data = generate_synthetic(tiny_spec());
  CHECK(data.train.long_videos.size() == 8);
  for (const auto& a : data.train.long_videos) {
    CHECK(a.video.frames == 16);
    CHECK(a.summary == summary_caption(a.motifs));
    for (const auto& b : data.train.long_videos) {
      if (&a == &b || a.group != b.group) continue;
      CHECK(a.motifs != b.motifs);
      auto ma = a.motifs, mb = b.motifs;
      std::sort(ma.begin(), ma.end());
      std::sort(mb.begin(), mb.end());
      CHECK(ma == mb);
    }
  }
  CHECK(data.vocab.contains("first"));
  CHECK(data.vocab.contains("then"));
}

TEST_CASE("regeneration is bit identical and survives disk") {
  const auto a = generate_synthetic(tiny_spec());
  const auto b = generate_synthetic(tiny_spec());
  REQUIRE(a.train.clips.size() == b.train.clips.size());
  for (std::size_t i = 0; i < a.train.clips.size(); ++i) CHECK(same_clip(a.train.clips[i].clip, b.train.clips[i].clip));
  for (std::size_t i = 0; i < a.test.long_videos.size(); ++i)
    CHECK(same_clip(a.test.long_videos[i].video, b.test.long_videos[i].video));

  SyntheticSpec other = tiny_spec();
  other.seed = 1;
  CHECK_FALSE(same_clip(generate_synthetic(other).train.clips[0].clip, a.train.clips[0].clip));

  TempDir dir;
  save_dataset(dir.path / "data", a);
  const auto c = load_dataset(dir.path / "data");
  CHECK(c.spec.seed == a.spec.seed);
  CHECK(c.vocab.serialize() == a.vocab.serialize());
  REQUIRE(c.train.clips.size() == a.train.clips.size());
  for (std::size_t i = 0; i < a.train.clips.size(); ++i) {
    CHECK(same_clip(c.train.clips[i].clip, a.train.clips[i].clip));
    CHECK(c.train.clips[i].caption == a.train.clips[i].caption);
  }
  REQUIRE(c.test.long_videos.size() == a.test.long_videos.size());
  for (std::size_t i = 0; i < a.test.long_videos.size(); ++i) {
    CHECK(c.test.long_videos[i].id == a.test.long_videos[i].id);
    CHECK(c.test.long_videos[i].motifs == a.test.long_videos[i].motifs);
    CHECK(c.test.long_videos[i].summary == a.test.long_videos[i].summary);
    CHECK(same_clip(c.test.long_videos[i].video, a.test.long_videos[i].video));
  }
}

TEST_CASE("spec validation") {
  SyntheticSpec s;
  s.classes = 17;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = SyntheticSpec{};
  s.image = 30;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = SyntheticSpec{};
  s.segments = 9;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  Config cfg;
  SyntheticSpec{}.write(cfg, "data.");
  CHECK(SyntheticSpec::read(cfg, "data.").classes == 8);
}
