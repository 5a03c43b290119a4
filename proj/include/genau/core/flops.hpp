#pragma once

#include <cstdint>

namespace genau::flops {

// Instrumented FLOP counting. Ops call `add()`; counts land in whichever
// FlopScope is innermost on the current thread, or are discarded.
namespace detail {
inline thread_local std::uint64_t* active_counter = nullptr;
}

inline void add(std::uint64_t n) noexcept {
  if (detail::active_counter) *detail::active_counter += n;
}

class FlopScope {
 public:
  FlopScope() : previous_(detail::active_counter) { detail::active_counter = &count_; }
  ~FlopScope() { detail::active_counter = previous_; }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

  std::uint64_t count() const noexcept { return count_; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* previous_;
};

}  // namespace genau::flops
