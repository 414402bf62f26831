#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adavid/config.hpp"
#include "adavid/text_encoder.hpp"
#include "adavid/video_encoder.hpp"

namespace adavid {

// Class k is a square of color k % 4 moving in direction (k / 4) % 4 across
// the frames, so classes sharing a color differ only in motion, and left /
// right (up / down) visit the same positions in reverse order.
struct SyntheticSpec {
  std::size_t classes = 8;            // <= 16
  std::size_t samples_per_class = 16;
  std::size_t test_per_class = 16;
  std::size_t frames = 4;             // frames per short clip / segment
  std::size_t image = 32;
  std::size_t channels = 3;
  double noise = 0.1;                 // Gaussian std, added before clamping to [0, 1]
  std::size_t segments = 4;           // motifs per long video
  std::size_t long_sets = 48;         // motif sets for the training long videos
  std::size_t long_test_sets = 16;
  std::size_t orders_per_set = 4;     // distinct orderings generated per motif set
  std::uint64_t seed = 0;

  void validate() const;
  void write(Config& out, const std::string& prefix) const;
  static SyntheticSpec read(const Config& in, const std::string& prefix);
  static const std::vector<std::string>& keys();  // without prefix
};

std::string class_caption(std::size_t label);
// "first <caption> then <caption> ..."
std::string summary_caption(const std::vector<std::size_t>& motifs);

// Clip of the class motif, noise drawn from rng, quantized to float32.
VideoClip render_motif(std::size_t label, std::size_t frames, const SyntheticSpec& spec, Rng& rng);

struct ClipSample {
  VideoClip clip;
  std::size_t label = 0;
  std::string caption;
};

struct LongSample {
  std::string id;
  VideoClip video;                  // segments * frames frames
  std::vector<std::size_t> motifs;  // class of each segment, in order
  std::size_t group = 0;            // videos sharing a motif multiset share a group
  std::string summary;
};

struct SyntheticSplit {
  std::vector<ClipSample> clips;
  std::vector<LongSample> long_videos;
};

struct SyntheticDataset {
  SyntheticSpec spec;
  SyntheticSplit train;
  SyntheticSplit test;
  Vocab vocab;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Directory with spec.cfg, vocab.txt and per split <split>.clip/.tsv and
// <split>_long.clip/.tsv.
void save_dataset(const std::filesystem::path& dir, const SyntheticDataset& data);
SyntheticDataset load_dataset(const std::filesystem::path& dir);

}  // namespace adavid
