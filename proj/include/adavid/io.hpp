#pragma once

// Binary containers. All integers and floats are little-endian; layouts are
// described in docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adavid/adaptive.hpp"
#include "adavid/config.hpp"
#include "adavid/video_encoder.hpp"

namespace adavid {

struct Checkpoint {
  Config config;
  NamedTensors tensors;
  std::map<std::string, std::string> blobs;  // e.g. "vocab"
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into `params` by name. Every parameter must be
// present with the same shape.
void assign_parameters(const NamedTensors& params, const Checkpoint& ckpt);

// FNV-1a over the raw file bytes, hex.
std::string file_hash(const std::filesystem::path& path);

// Writes via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// ---- clips ------------------------------------------------------------------

// Pixels are stored as 32-bit floats; callers that need an exact round trip
// quantize with quantize_f32 first.
void quantize_f32(VideoClip& clip);
void save_clips(const std::filesystem::path& path, const std::vector<VideoClip>& clips);
std::vector<VideoClip> load_clips(const std::filesystem::path& path);

// ---- segment feature cache --------------------------------------------------

struct FeatureRecord {
  std::string video_id;
  std::string schedule;
  std::size_t segments = 0;
  std::size_t embed_dim = 0;
  std::vector<double> values;  // [segments x embed_dim]
};

void save_feature_cache(const std::filesystem::path& path, const std::vector<FeatureRecord>& records);
std::vector<FeatureRecord> load_feature_cache(const std::filesystem::path& path);

}  // namespace adavid
