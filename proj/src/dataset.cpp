#include "adavid/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "adavid/error.hpp"
#include "adavid/io.hpp"

namespace adavid {
namespace {

const char* const kColors[] = {"red", "green", "blue", "yellow"};
const char* const kDirections[] = {"right", "left", "down", "up"};
const double kRgb[4][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

SyntheticSplit make_split(const SyntheticSpec& spec, std::size_t per_class, std::size_t sets, Rng& rng,
                          const std::string& prefix) {
  SyntheticSplit split;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < spec.classes; ++c) {
      split.clips.push_back(ClipSample{render_motif(c, spec.frames, spec, rng), c, class_caption(c)});
    }

  std::size_t max_orders = 1;
  for (std::size_t k = 2; k <= spec.segments; ++k) max_orders *= k;
  const std::size_t orders = std::min(spec.orders_per_set, max_orders);
  for (std::size_t g = 0; g < sets; ++g) {
    std::vector<std::size_t> pool(spec.classes);
    for (std::size_t c = 0; c < spec.classes; ++c) pool[c] = c;
    rng.shuffle(pool);
    std::vector<std::size_t> base(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.segments));
    std::set<std::vector<std::size_t>> seen;
    while (seen.size() < orders) {
      auto order = base;
      rng.shuffle(order);
      if (!seen.insert(order).second) continue;
      LongSample s;
      s.id = prefix + "-" + std::to_string(g) + "-" + std::to_string(seen.size() - 1);
      s.motifs = order;
      s.group = g;
      s.summary = summary_caption(order);
      s.video = VideoClip{0, spec.channels, spec.image, spec.image, {}};
      for (std::size_t m : order) {
        VideoClip seg = render_motif(m, spec.frames, spec, rng);
        s.video.pixels.insert(s.video.pixels.end(), seg.pixels.begin(), seg.pixels.end());
        s.video.frames += seg.frames;
      }
      split.long_videos.push_back(std::move(s));
    }
  }
  return split;
}

void write_text(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

}  // namespace

void SyntheticSpec::validate() const {
  if (classes < 2 || classes > 16) throw InvalidArgument("dataset: classes must be in 2..16");
  if (frames == 0 || image < 4 || image % 4 != 0) throw InvalidArgument("dataset: bad frame geometry");
  if (channels != 3) throw InvalidArgument("dataset: motifs are RGB (channels = 3)");
  if (!(noise >= 0.0)) throw InvalidArgument("dataset: noise must be >= 0");
  if (segments == 0 || segments > classes) throw InvalidArgument("dataset: segments must be in 1..classes");
  if (orders_per_set == 0) throw InvalidArgument("dataset: orders_per_set must be positive");
}

const std::vector<std::string>& SyntheticSpec::keys() {
  static const std::vector<std::string> k = {"classes", "samples_per_class", "test_per_class", "frames",
                                             "image",   "channels",          "noise",          "segments",
                                             "long_sets", "long_test_sets",  "orders_per_set", "seed"};
  return k;
}

void SyntheticSpec::write(Config& out, const std::string& p) const {
  out.set(p + "classes", std::to_string(classes));
  out.set(p + "samples_per_class", std::to_string(samples_per_class));
  out.set(p + "test_per_class", std::to_string(test_per_class));
  out.set(p + "frames", std::to_string(frames));
  out.set(p + "image", std::to_string(image));
  out.set(p + "channels", std::to_string(channels));
  out.set(p + "noise", fmt_double(noise));
  out.set(p + "segments", std::to_string(segments));
  out.set(p + "long_sets", std::to_string(long_sets));
  out.set(p + "long_test_sets", std::to_string(long_test_sets));
  out.set(p + "orders_per_set", std::to_string(orders_per_set));
  out.set(p + "seed", std::to_string(seed));
}

SyntheticSpec SyntheticSpec::read(const Config& in, const std::string& p) {
  SyntheticSpec s;
  s.classes = in.get_size(p + "classes", s.classes);
  s.samples_per_class = in.get_size(p + "samples_per_class", s.samples_per_class);
  s.test_per_class = in.get_size(p + "test_per_class", s.test_per_class);
  s.frames = in.get_size(p + "frames", s.frames);
  s.image = in.get_size(p + "image", s.image);
  s.channels = in.get_size(p + "channels", s.channels);
  s.noise = in.get_double(p + "noise", s.noise);
  s.segments = in.get_size(p + "segments", s.segments);
  s.long_sets = in.get_size(p + "long_sets", s.long_sets);
  s.long_test_sets = in.get_size(p + "long_test_sets", s.long_test_sets);
  s.orders_per_set = in.get_size(p + "orders_per_set", s.orders_per_set);
  s.seed = in.get_u64(p + "seed", s.seed);
  s.validate();
  return s;
}

std::string class_caption(std::size_t label) {
  return std::string(kColors[label % 4]) + " " + kDirections[(label / 4) % 4];
}

std::string summary_caption(const std::vector<std::size_t>& motifs) {
  std::string out;
  for (std::size_t i = 0; i < motifs.size(); ++i) out += (i == 0 ? "first " : " then ") + class_caption(motifs[i]);
  return out;
}

VideoClip render_motif(std::size_t label, std::size_t frames, const SyntheticSpec& spec, Rng& rng) {
  const std::size_t img = spec.image, sq = img / 4, travel = img - sq, centre = travel / 2;
  const std::size_t color = label % 4, dir = (label / 4) % 4;
  VideoClip clip{frames, spec.channels, img, img, std::vector<double>(frames * spec.channels * img * img, 0.0)};
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t step = frames == 1 ? centre : t * travel / (frames - 1);
    const std::size_t along = (dir % 2 == 0) ? step : travel - step;
    const std::size_t x0 = dir < 2 ? along : centre;
    const std::size_t y0 = dir < 2 ? centre : along;
    for (std::size_t c = 0; c < spec.channels; ++c)
      for (std::size_t y = y0; y < y0 + sq; ++y)
        for (std::size_t x = x0; x < x0 + sq; ++x) clip.pixels[((t * spec.channels + c) * img + y) * img + x] = kRgb[color][c];
  }
  if (spec.noise > 0.0) {
    for (double& v : clip.pixels) v = std::clamp(v + spec.noise * rng.normal(), 0.0, 1.0);
  }
  quantize_f32(clip);
  return clip;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset data;
  data.spec = spec;
  Rng train_rng(derive_seed(spec.seed, "data/train"));
  Rng test_rng(derive_seed(spec.seed, "data/test"));
  data.train = make_split(spec, spec.samples_per_class, spec.long_sets, train_rng, "train");
  data.test = make_split(spec, spec.test_per_class, spec.long_test_sets, test_rng, "test");
  std::vector<std::string> texts;
  for (std::size_t c = 0; c < spec.classes; ++c) texts.push_back(class_caption(c));
  texts.push_back(summary_caption({0, 1}));  // "first", "then"
  data.vocab = Vocab::build(texts);
  return data;
}

void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  Config cfg;
  data.spec.write(cfg, "");
  write_text(dir / "spec.cfg", "# config_hash " + cfg.hash() + "\n" + cfg.canonical());
  write_text(dir / "vocab.txt", data.vocab.serialize());
  for (const auto& [name, split] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    std::vector<VideoClip> clips;
    std::string tsv;
    for (std::size_t i = 0; i < split->clips.size(); ++i) {
      clips.push_back(split->clips[i].clip);
      tsv += std::to_string(i) + "\t" + std::to_string(split->clips[i].label) + "\t" + split->clips[i].caption + "\n";
    }
    save_clips(dir / (std::string(name) + ".clip"), clips);
    write_text(dir / (std::string(name) + ".tsv"), tsv);
    clips.clear();
    tsv.clear();
    for (const auto& l : split->long_videos) {
      clips.push_back(l.video);
      std::string motifs;
      for (std::size_t i = 0; i < l.motifs.size(); ++i) motifs += (i ? "," : "") + std::to_string(l.motifs[i]);
      tsv += l.id + "\t" + std::to_string(l.group) + "\t" + motifs + "\t" + l.summary + "\n";
    }
    save_clips(dir / (std::string(name) + "_long.clip"), clips);
    write_text(dir / (std::string(name) + "_long.tsv"), tsv);
  }
}

SyntheticDataset load_dataset(const std::filesystem::path& dir) {
  SyntheticDataset data;
  try {
    data.spec = SyntheticSpec::read(Config::parse(read_file(dir / "spec.cfg"), (dir / "spec.cfg").string()), "");
  } catch (const InvalidArgument& e) {
    throw IoError(e.what());
  }
  data.vocab = Vocab::deserialize(read_file(dir / "vocab.txt"));
  for (const auto& [name, split] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    auto clips = load_clips(dir / (std::string(name) + ".clip"));
    auto rows = adavid::split(read_file(dir / (std::string(name) + ".tsv")), '\n');
    if (rows.size() != clips.size()) throw IoError(dir.string() + ": " + name + ".tsv does not match the clip count");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto f = adavid::split(rows[i], '\t');
      if (f.size() != 3) throw IoError(dir.string() + ": malformed row in " + name + ".tsv");
      split->clips.push_back(ClipSample{std::move(clips[i]), std::stoul(f[1]), f[2]});
    }
    auto long_clips = load_clips(dir / (std::string(name) + "_long.clip"));
    rows = adavid::split(read_file(dir / (std::string(name) + "_long.tsv")), '\n');
    if (rows.size() != long_clips.size()) throw IoError(dir.string() + ": long-video index does not match");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto f = adavid::split(rows[i], '\t');
      if (f.size() != 4) throw IoError(dir.string() + ": malformed row in " + name + "_long.tsv");
      LongSample s;
      s.id = f[0];
      s.group = std::stoul(f[1]);
      for (const auto& m : adavid::split(f[2], ',')) s.motifs.push_back(std::stoul(m));
      s.summary = f[3];
      s.video = std::move(long_clips[i]);
      split->long_videos.push_back(std::move(s));
    }
  }
  return data;
}

}  // namespace adavid
