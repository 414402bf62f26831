#include "adavid/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "adavid/error.hpp"
#include "adavid/rng.hpp"

namespace adavid {
namespace {

static_assert(std::endian::native == std::endian::little, "byte-swapping not implemented");

constexpr char kCheckpointMagic[8] = {'A', 'D', 'A', 'V', 'I', 'D', '1', '\n'};
constexpr char kClipMagic[8] = {'A', 'D', 'V', 'C', 'L', 'I', 'P', '1'};
constexpr char kCacheMagic[8] = {'A', 'D', 'V', 'F', 'E', 'A', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void long_str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string origin) : data_(data), origin_(std::move(origin)) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(pod<std::uint32_t>()); }
  std::string long_str() { return raw(pod<std::uint64_t>()); }
  void expect_magic(const char (&magic)[8], const char* what) {
    if (raw(8) != std::string(magic, 8)) throw IoError(origin_ + ": not a " + what + " file (bad magic)");
  }
  bool done() const { return pos_ == data_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw IoError(origin_ + ": truncated file");
  }
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.pod<std::uint32_t>(kVersion);
  w.long_str(ckpt.config.canonical());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.dim()));
    for (std::size_t e : t.shape()) w.pod<std::uint64_t>(e);
    for (double v : t.data()) w.pod<double>(v);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.blobs.size()));
  for (const auto& [name, blob] : ckpt.blobs) {
    w.str(name);
    w.long_str(blob);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  r.expect_magic(kCheckpointMagic, "checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) throw IoError(origin + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  try {
    ckpt.config = Config::parse(r.long_str(), origin);
  } catch (const InvalidArgument& e) {
    throw IoError(e.what());
  }
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto ndim = r.pod<std::uint32_t>();
    if (ndim == 0 || ndim > 8) throw IoError(origin + ": tensor '" + name + "' has bad rank");
    Shape shape(ndim);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = static_cast<std::size_t>(r.pod<std::uint64_t>());
      if (e == 0 || n > (std::size_t{1} << 40) / e) throw IoError(origin + ": tensor '" + name + "' has bad shape");
      n *= e;
    }
    std::vector<double> values(n);
    for (double& v : values) v = r.pod<double>();
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  const auto blobs = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < blobs; ++i) {
    std::string name = r.str();
    ckpt.blobs[name] = r.long_str();
  }
  if (!r.done()) throw IoError(origin + ": trailing bytes after checkpoint");
  return ckpt;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path), path.string());
}

void assign_parameters(const NamedTensors& params, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  for (const auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape() != t.shape()) throw IoError("checkpoint tensor '" + name + "' has the wrong shape");
    Tensor dst = t;
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
}

std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a(read_file(path))); }

void quantize_f32(VideoClip& clip) {
  for (double& v : clip.pixels) v = static_cast<double>(static_cast<float>(v));
}

void save_clips(const std::filesystem::path& path, const std::vector<VideoClip>& clips) {
  Writer w;
  w.bytes(kClipMagic, 8);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(clips.size()));
  for (const auto& c : clips) {
    if (c.pixels.size() != c.frames * c.frame_size()) throw InvalidArgument("save_clips: pixel buffer size mismatch");
    for (std::size_t e : {c.frames, c.channels, c.height, c.width}) w.pod<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (double v : c.pixels) w.pod<float>(static_cast<float>(v));
  }
  write_file_atomic(path, w.take());
}

std::vector<VideoClip> load_clips(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path.string());
  r.expect_magic(kClipMagic, "clip");
  const auto count = r.pod<std::uint32_t>();
  std::vector<VideoClip> clips;
  clips.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    VideoClip c;
    c.frames = r.pod<std::uint32_t>();
    c.channels = r.pod<std::uint32_t>();
    c.height = r.pod<std::uint32_t>();
    c.width = r.pod<std::uint32_t>();
    const std::size_t n = c.frames * c.frame_size();
    if (n == 0 || n > (std::size_t{1} << 32)) throw IoError(path.string() + ": bad clip geometry");
    c.pixels.resize(n);
    for (double& v : c.pixels) v = static_cast<double>(r.pod<float>());
    clips.push_back(std::move(c));
  }
  if (!r.done()) throw IoError(path.string() + ": trailing bytes after clips");
  return clips;
}

void save_feature_cache(const std::filesystem::path& path, const std::vector<FeatureRecord>& records) {
  Writer w;
  w.bytes(kCacheMagic, 8);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    if (rec.values.size() != rec.segments * rec.embed_dim) throw InvalidArgument("feature record size mismatch");
    w.str(rec.video_id);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(rec.segments));
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(rec.embed_dim));
    w.str(rec.schedule);
    for (double v : rec.values) w.pod<double>(v);
  }
  write_file_atomic(path, w.take());
}

std::vector<FeatureRecord> load_feature_cache(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path.string());
  r.expect_magic(kCacheMagic, "feature cache");
  const auto count = r.pod<std::uint32_t>();
  std::vector<FeatureRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureRecord rec;
    rec.video_id = r.str();
    rec.segments = r.pod<std::uint32_t>();
    rec.embed_dim = r.pod<std::uint32_t>();
    rec.schedule = r.str();
    if (rec.segments * rec.embed_dim > (std::size_t{1} << 28)) throw IoError(path.string() + ": bad record size");
    rec.values.resize(rec.segments * rec.embed_dim);
    for (double& v : rec.values) v = r.pod<double>();
    out.push_back(std::move(rec));
  }
  if (!r.done()) throw IoError(path.string() + ": trailing bytes after feature records");
  return out;
}

}  // namespace adavid
