#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

namespace adavid {

// Flat key=value settings. '#' starts a comment line; blank lines ignored;
// whitespace around keys and values is trimmed.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<text>");
  static Config load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;

  // Later entries win.
  void merge(const Config& other);

  // Keys sorted, one "key=value" per line.
  std::string canonical() const;
  // FNV-1a of canonical(), as 16 hex digits.
  std::string hash() const;

  // Throws InvalidArgument naming the first key not in `known`.
  void require_known(std::span<const std::string> known) const;

 private:
  std::map<std::string, std::string> values_;
};

std::string hex64(std::uint64_t value);

}  // namespace adavid
