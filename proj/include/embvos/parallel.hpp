#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include "embvos/tensor.hpp"

namespace embvos {

namespace detail {
inline std::atomic<int>& thread_count() {
  static std::atomic<int> n{1};
  return n;
}
}  // namespace detail

inline void set_num_threads(int n) { detail::thread_count() = std::max(1, n); }
inline int num_threads() { return detail::thread_count(); }

/// Runs fn(lo, hi) over contiguous chunks of [begin, end).
///
/// Callers only partition independent output elements, so results do not
/// depend on the worker count.
template <typename Fn>
void parallel_for(Index begin, Index end, Fn&& fn) {
  const Index total = end - begin;
  const Index workers = std::min<Index>(num_threads(), total);
  if (workers <= 1) {
    if (total > 0) fn(begin, end);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  const Index chunk = (total + workers - 1) / workers;
  for (Index w = 1; w < workers; ++w) {
    const Index lo = begin + w * chunk;
    const Index hi = std::min(end, lo + chunk);
    if (lo < hi) pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(begin, std::min(end, begin + chunk));
}

}  // namespace embvos
