#pragma once

#include <atomic>
#include <cstdint>

namespace embvos {

/// Process-wide call counters used by tests to assert compute scaling.
struct CallCounters {
  std::atomic<std::int64_t> featnet_extract{0};
  std::atomic<std::int64_t> head_forward{0};
  std::atomic<std::int64_t> local_match_ground_truth{0};
  std::atomic<std::int64_t> local_match_predicted{0};

  void reset() {
    featnet_extract = 0;
    head_forward = 0;
    local_match_ground_truth = 0;
    local_match_predicted = 0;
  }
};

inline CallCounters& counters() {
  static CallCounters c;
  return c;
}

}  // namespace embvos
