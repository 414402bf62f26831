#include "adavid/flop_counter.hpp"

#include "adavid/error.hpp"

namespace adavid {
namespace {
thread_local FlopCounter* g_active = nullptr;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw NumericError("FLOP count overflows 64 bits");
  return out;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) throw NumericError("FLOP count overflows 64 bits");
  return out;
}

void FlopCounter::add_matmul(std::uint64_t flops) {
  matmul_total_ = checked_add(matmul_total_, flops);
  auto& slot = by_tag_[tag_];
  slot = checked_add(slot, flops);
}

void FlopCounter::add_elementwise(std::uint64_t flops) {
  elementwise_total_ = checked_add(elementwise_total_, flops);
}

std::uint64_t FlopCounter::inclusive_total() const {
  return checked_add(matmul_total_, elementwise_total_);
}

void FlopCounter::reset() {
  matmul_total_ = 0;
  elementwise_total_ = 0;
  by_tag_.clear();
}

FlopScope::FlopScope(FlopCounter* counter) : previous_(g_active) { g_active = counter; }
FlopScope::~FlopScope() { g_active = previous_; }

FlopTag::FlopTag(std::string tag) : counter_(g_active) {
  if (counter_ != nullptr) {
    previous_ = counter_->current_tag();
    counter_->set_tag(previous_.empty() ? std::move(tag) : previous_ + "." + tag);
  }
}

FlopTag::~FlopTag() {
  if (counter_ != nullptr) counter_->set_tag(std::move(previous_));
}

FlopCounter* active_flop_counter() { return g_active; }

}  // namespace adavid
