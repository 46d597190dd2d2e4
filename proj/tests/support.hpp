#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <unistd.h>

#include "embvos/labels.hpp"
#include "embvos/matching.hpp"
#include "embvos/rng.hpp"
#include "embvos/tensor.hpp"

namespace testing {

using embvos::Index;
using embvos::LabelMap;
using embvos::LabelTensor;
using embvos::Rng;
using embvos::Tensor;

template <typename T>
Tensor<T> random_tensor(embvos::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (T& v : t) v = static_cast<T>(scale * rng.normal());
  return t;
}

/// Labels drawn from `ids` (which must contain 0) with every id present.
inline LabelMap random_labels(Index H, Index W, const std::vector<int>& ids, Rng& rng) {
  LabelTensor l({H, W});
  for (auto& v : l) v = ids[static_cast<std::size_t>(rng.uniform_int(static_cast<Index>(ids.size())))];
  const Index n = std::min(static_cast<Index>(ids.size()), l.size());
  const std::vector<Index> spots = rng.sample_without_replacement(l.size(), n);
  for (Index i = 0; i < n; ++i) l.data()[spots[static_cast<std::size_t>(i)]] = ids[static_cast<std::size_t>(i)];
  return LabelMap::from_labels(l);
}

/// Independent loop oracle of the embedding distance of a squared norm.
template <typename T>
T oracle_distance(T s) {
  return T(1) - T(2) / (T(1) + std::exp(s));
}

/// Squared distance accumulated left to right over dimensions.
template <typename T>
T oracle_sq(const Tensor<T>& a, Index p, const Tensor<T>& b, Index q) {
  const Index D = a.dim(2);
  T acc = 0;
  for (Index d = 0; d < D; ++d) {
    const T diff = a.data()[p * D + d] - b.data()[q * D + d];
    acc += diff * diff;
  }
  return acc;
}

struct OracleMaps {
  std::vector<double> maps;  // [O, H, W] as double of the T values
  std::vector<Index> argmin;
};

/// Brute force over every (pixel, reference pixel) pair. `window` < 0 means
/// no spatial restriction. Ties go to the smallest flat reference index.
template <typename T>
OracleMaps oracle_match(const Tensor<T>& cur, const Tensor<T>& ref, const LabelMap& labels, Index window) {
  const Index H = cur.dim(0), W = cur.dim(1);
  const Index Hr = ref.dim(0), Wr = ref.dim(1);
  const Index O = labels.num_objects();
  OracleMaps out;
  out.maps.assign(static_cast<std::size_t>(O * H * W), 1.0);
  out.argmin.assign(static_cast<std::size_t>(O * H * W), -1);
  for (Index o = 0; o < O; ++o)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        T best = std::numeric_limits<T>::infinity();
        Index best_q = -1;
        for (Index qy = 0; qy < Hr; ++qy)
          for (Index qx = 0; qx < Wr; ++qx) {
            if (labels.labels(qy, qx) != labels.objects[static_cast<std::size_t>(o)]) continue;
            if (window >= 0 && (std::abs(qy - y) > window || std::abs(qx - x) > window)) continue;
            const T s = oracle_sq(cur, y * W + x, ref, qy * Wr + qx);
            if (s < best) {
              best = s;
              best_q = qy * Wr + qx;
            }
          }
        const std::size_t i = static_cast<std::size_t>((o * H + y) * W + x);
        if (best_q >= 0) out.maps[i] = static_cast<double>(oracle_distance(best));
        out.argmin[i] = best_q;
      }
  return out;
}

template <typename T>
bool same_as_oracle(const embvos::DistanceMapSet<T>& got, const OracleMaps& want) {
  if (got.maps.size() != static_cast<Index>(want.maps.size())) return false;
  for (Index i = 0; i < got.maps.size(); ++i)
    if (static_cast<double>(got.maps.data()[i]) != want.maps[static_cast<std::size_t>(i)]) return false;
  return got.argmin == want.argmin;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  auto p = std::filesystem::temp_directory_path() /
           ("embvos_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
