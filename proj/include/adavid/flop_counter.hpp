#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace adavid {

// Accumulates FLOPs registered by tensor kernels while installed on the
// current thread through a FlopScope. Matmul FLOPs (2 * multiply-accumulates)
// are the reconciled quantity; "elementwise" FLOPs (bias, layer norm,
// softmax, activation) are tracked separately for the inclusive view.
class FlopCounter {
 public:
  void add_matmul(std::uint64_t flops);
  void add_elementwise(std::uint64_t flops);

  std::uint64_t matmul_total() const { return matmul_total_; }
  std::uint64_t elementwise_total() const { return elementwise_total_; }
  std::uint64_t inclusive_total() const;

  // Matmul FLOPs per tag (see FlopTag); untagged work lands under "".
  const std::map<std::string, std::uint64_t>& by_tag() const { return by_tag_; }

  void reset();

  // Tag that subsequent matmul registrations are attributed to.
  const std::string& current_tag() const { return tag_; }
  void set_tag(std::string tag) { tag_ = std::move(tag); }

 private:
  std::uint64_t matmul_total_ = 0;
  std::uint64_t elementwise_total_ = 0;
  std::map<std::string, std::uint64_t> by_tag_;
  std::string tag_;
};

// Installs a counter for the current thread; restores the previous on exit.
// A null counter disables counting inside the scope.
class FlopScope {
 public:
  explicit FlopScope(FlopCounter* counter);
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopCounter* previous_;
};

// Attributes matmul FLOPs to `tag` on the active counter, if any. Nested
// tags join with '.', e.g. "layer0.space.qkv".
class FlopTag {
 public:
  explicit FlopTag(std::string tag);
  ~FlopTag();
  FlopTag(const FlopTag&) = delete;
  FlopTag& operator=(const FlopTag&) = delete;

 private:
  FlopCounter* counter_;
  std::string previous_;
};

FlopCounter* active_flop_counter();

// Overflow-checked helpers used by kernels and the closed-form model.
std::uint64_t checked_add(std::uint64_t a, std::uint64_t b);
std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b);

}  // namespace adavid
