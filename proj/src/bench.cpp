#include <algorithm>
#include <chrono>

#include "embvos/matching.hpp"

namespace embvos {

namespace {

template <typename Fn>
double median_ns(Index trials, Fn&& fn) {
  std::vector<double> times;
  for (Index t = 0; t < trials; ++t) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::nano>(stop - start).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

}  // namespace

MatchBenchReport bench_matching(Index height, Index width, Index dim, Index k, Index trials, Index objects,
                                std::uint64_t seed) {
  if (height < 1 || width < 1 || dim < 1 || trials < 1 || objects < 1)
    throw ContractError("bench_matching: sizes, trials and objects must be >= 1");
  const WindowSpec window{k};
  window.validate();

  Rng rng(seed);
  Tensor<float> cur({height, width, dim}), prev({height, width, dim});
  for (float& v : cur) v = static_cast<float>(rng.normal());
  for (float& v : prev) v = static_cast<float>(rng.normal());
  LabelTensor labels({height, width});
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) labels(y, x) = static_cast<int>((x * objects) / width);
  const LabelMap prev_labels = LabelMap::from_labels(labels);

  MatchBenchReport r;
  r.height = height;
  r.width = width;
  r.dim = dim;
  r.window = k;
  r.trials = trials;
  r.objects = prev_labels.num_objects();
  // One untimed call of each warms caches and the allocator.
  (void)local_match(cur, prev, prev_labels, window);
  (void)global_prev_match(cur, prev, prev_labels);
  r.local_ns = median_ns(trials, [&] { (void)local_match(cur, prev, prev_labels, window); });
  r.global_prev_ns = median_ns(trials, [&] { (void)global_prev_match(cur, prev, prev_labels); });
  r.speedup = r.global_prev_ns / r.local_ns;
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      r.local_candidates_per_pixel = std::max(r.local_candidates_per_pixel, local_candidate_count(height, width, y, x, window));
  r.global_candidates_per_pixel = height * width;
  return r;
}

}  // namespace embvos
