#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "embvos/kernels.hpp"
#include "embvos/labels.hpp"
#include "embvos/parallel.hpp"
#include "embvos/rng.hpp"
#include "embvos/tape.hpp"

namespace embvos {

/// Per-pixel embedding vectors on the stride grid, shape [H', W', D].
template <typename T>
struct EmbeddingMap {
  Tensor<T> grid;
  Index stride = 4;

  Index height() const { return grid.dim(0); }
  Index width() const { return grid.dim(1); }
  Index dim() const { return grid.dim(2); }
};

/// Local matching neighborhood: candidates at most k cells away in x and y.
struct WindowSpec {
  Index k = 15;

  void validate() const {
    if (k < 1) throw ContractError("window radius k must be >= 1, got " + std::to_string(k));
  }
};

enum class MatchKind { global_first, global_prev, local_prev };

/// One nearest-neighbor distance map per object, shape [|O|, H', W'],
/// entries in [0, 1]. argmin holds the flat reference-grid index of the
/// matched pixel per entry, or -1 where no candidate existed.
template <typename T>
struct DistanceMapSet {
  Tensor<T> maps;
  std::vector<int> objects;
  MatchKind kind = MatchKind::global_first;
  std::vector<Index> argmin;
};

/// d(p, q) = 1 - 2 / (1 + exp(|e_p - e_q|^2)), equivalently tanh(|e_p - e_q|^2 / 2).
template <typename T>
T embedding_distance(std::span<const T> e_p, std::span<const T> e_q) {
  if (e_p.size() != e_q.size()) throw ShapeError("embedding_distance: dimension mismatch");
  T s = 0;
  for (std::size_t d = 0; d < e_p.size(); ++d) {
    const T diff = e_p[d] - e_q[d];
    s += diff * diff;
  }
  return kernels::embedding_distance_from_sq(s);
}

/// Serial squared Euclidean distance, accumulated in dimension order. Every
/// matching routine computes its final distances through this exact
/// sequence of roundings, which makes their outputs bitwise comparable.
template <typename T>
inline T squared_distance(const T* a, const T* b, Index D) {
  T acc = 0;
  for (Index d = 0; d < D; ++d) {
    const T diff = a[d] - b[d];
    acc += diff * diff;
  }
  return acc;
}

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// out(i, j) = |a_i|^2 + |b_j|^2 - 2 <a_i, b_j>, clamped below at 0.
template <typename T, typename A, typename B>
void sqdist_block(const A& a, const B& b, const Eigen::Matrix<T, Eigen::Dynamic, 1>& a_norm,
                  const Eigen::Matrix<T, Eigen::Dynamic, 1>& b_norm, RowMat<T>& out) {
  out.resize(a.rows(), b.rows());
  out.noalias() = T(-2) * a * b.transpose();
  out.colwise() += a_norm;
  out.rowwise() += b_norm.transpose();
  out = out.cwiseMax(T(0));
}

}  // namespace detail

/// All pairwise squared distances between rows of a [N, D] and b [M, D],
/// computed through one matrix product.
template <typename T>
Tensor<T> pairwise_sqdist(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "pairwise_sqdist lhs");
  require_rank(b.shape(), 2, "pairwise_sqdist rhs");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("pairwise_sqdist: dimension mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  const auto am = a.matrix(a.dim(0), a.dim(1));
  const auto bm = b.matrix(b.dim(0), b.dim(1));
  Eigen::Matrix<T, Eigen::Dynamic, 1> an = am.rowwise().squaredNorm();
  Eigen::Matrix<T, Eigen::Dynamic, 1> bn = bm.rowwise().squaredNorm();
  detail::RowMat<T> out;
  detail::sqdist_block<T>(am, bm, an, bn, out);
  Tensor<T> result({a.dim(0), b.dim(0)});
  result.matrix(a.dim(0), b.dim(0)) = out;
  return result;
}

namespace detail {

template <typename T>
void check_embeddings(const Tensor<T>& emb_t, const Tensor<T>& ref_emb, const LabelMap& ref_labels) {
  require_rank(emb_t.shape(), 3, "matching: current embeddings");
  require_rank(ref_emb.shape(), 3, "matching: reference embeddings");
  if (emb_t.dim(2) != ref_emb.dim(2) || emb_t.dim(2) < 1)
    throw ShapeError("matching: embedding dimensions differ: " + shape_string(emb_t.shape()) + " vs " +
                     shape_string(ref_emb.shape()));
  if (ref_labels.height() != ref_emb.dim(0) || ref_labels.width() != ref_emb.dim(1))
    throw ShapeError("matching: label grid " + shape_string(ref_labels.labels.shape()) +
                     " does not match embedding grid " + shape_string(ref_emb.shape()));
}

/// Shared nearest-neighbor search for global matching against a labelled
/// reference frame. A matrix product screens candidates; every candidate
/// within the product's rounding bound of the row minimum is re-evaluated
/// with squared_distance, and the smallest exact value wins (ties to the
/// smallest flat reference index).
template <typename T>
DistanceMapSet<T> global_search(const Tensor<T>& emb_t, const Tensor<T>& ref_emb, const LabelMap& ref_labels,
                                std::optional<Index> subsample, std::uint64_t seed, bool empty_is_error,
                                MatchKind kind) {
  check_embeddings(emb_t, ref_emb, ref_labels);
  const Index H = emb_t.dim(0), W = emb_t.dim(1), D = emb_t.dim(2);
  const Index P = H * W;
  const Index O = static_cast<Index>(ref_labels.objects.size());
  DistanceMapSet<T> result;
  result.maps = Tensor<T>({O, H, W}, T(1));
  result.objects = ref_labels.objects;
  result.kind = kind;
  result.argmin.assign(static_cast<std::size_t>(O * P), -1);

  const auto E = emb_t.matrix(P, D);
  const auto R = ref_emb.matrix(ref_emb.dim(0) * ref_emb.dim(1), D);
  const Eigen::Matrix<T, Eigen::Dynamic, 1> e_norm = E.rowwise().squaredNorm();
  const T unit = std::numeric_limits<T>::epsilon();

  auto members = ref_labels.pixels_by_object();
  Rng rng(seed);
  for (Index o = 0; o < O; ++o) {
    std::vector<Index>& refs = members[static_cast<std::size_t>(o)];
    if (refs.empty()) {
      if (empty_is_error)
        throw ContractError("global_match: object " + std::to_string(ref_labels.objects[static_cast<std::size_t>(o)]) +
                            " has no reference pixels");
      continue;
    }
    if (subsample && static_cast<Index>(refs.size()) > *subsample) {
      if (*subsample < 1) throw ContractError("global_match: subsample must be >= 1");
      std::vector<Index> keep = rng.sample_without_replacement(static_cast<Index>(refs.size()), *subsample);
      std::vector<Index> picked;
      picked.reserve(keep.size());
      for (Index i : keep) picked.push_back(refs[static_cast<std::size_t>(i)]);
      refs = std::move(picked);
    }
    const Index M = static_cast<Index>(refs.size());
    detail::RowMat<T> Ro(M, D);
    for (Index j = 0; j < M; ++j) Ro.row(j) = R.row(refs[static_cast<std::size_t>(j)]);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> r_norm = Ro.rowwise().squaredNorm();
    const T r_norm_max = r_norm.maxCoeff();

    constexpr Index kChunk = 256;
    const Index chunks = (P + kChunk - 1) / kChunk;
    T* maps = result.maps.data() + o * P;
    Index* arg = result.argmin.data() + o * P;
    parallel_for(0, chunks, [&](Index c0, Index c1) {
      detail::RowMat<T> S;
      for (Index c = c0; c < c1; ++c) {
        const Index p0 = c * kChunk, n = std::min(kChunk, P - p0);
        detail::sqdist_block<T>(E.middleRows(p0, n), Ro, e_norm.segment(p0, n), r_norm, S);
        for (Index r = 0; r < n; ++r) {
          const Index p = p0 + r;
          const T screen = S.row(r).minCoeff();
          const T tol = T(8) * T(D + 4) * unit * (e_norm[p] + r_norm_max) + std::numeric_limits<T>::min();
          T best = std::numeric_limits<T>::infinity();
          Index best_j = -1;
          for (Index j = 0; j < M; ++j) {
            if (S(r, j) > screen + tol) continue;
            const T s = squared_distance(emb_t.data() + p * D, Ro.data() + j * D, D);
            if (s < best) {
              best = s;
              best_j = j;
            }
          }
          maps[p] = kernels::embedding_distance_from_sq(best);
          arg[p] = refs[static_cast<std::size_t>(best_j)];
        }
      }
    });
  }
  return result;
}

}  // namespace detail

/// Global matching against the first frame: for every object o and pixel p
/// the smallest embedding distance to a reference pixel labelled o. With
/// `subsample`, at most that many reference pixels per object are drawn
/// uniformly without replacement from an Rng seeded with `seed`.
template <typename T>
DistanceMapSet<T> global_match(const Tensor<T>& emb_t, const Tensor<T>& ref_emb, const LabelMap& ref_labels,
                               std::optional<Index> subsample = std::nullopt, std::uint64_t seed = 0) {
  return detail::global_search(emb_t, ref_emb, ref_labels, subsample, seed, true, MatchKind::global_first);
}

/// Global matching against the previous frame; objects without any pixel
/// in prev_labels get a constant map of 1.
template <typename T>
DistanceMapSet<T> global_prev_match(const Tensor<T>& emb_t, const Tensor<T>& prev_emb, const LabelMap& prev_labels) {
  return detail::global_search(emb_t, prev_emb, prev_labels, std::nullopt, 0, false, MatchKind::global_prev);
}

/// Number of window candidates for grid cell (y, x) after clipping to the grid.
inline Index local_candidate_count(Index H, Index W, Index y, Index x, const WindowSpec& window) {
  const Index ys = std::min(H - 1, y + window.k) - std::max<Index>(0, y - window.k) + 1;
  const Index xs = std::min(W - 1, x + window.k) - std::max<Index>(0, x - window.k) + 1;
  return ys * xs;
}

/// Local matching against the previous frame inside a (2k+1)^2 window,
/// clipped at the grid border. Cost is O(H'W'(2k+1)^2 D).
///
/// For each displacement (dy, dx) the squared distances of all pixels are
/// accumulated channel by channel over channel-major copies of both
/// embeddings (a cross-correlation over the window), then folded into the
/// per-object running minimum. Displacements are visited in row-major order,
/// so ties resolve to the smallest flat previous-frame index.
template <typename T>
DistanceMapSet<T> local_match(const Tensor<T>& emb_t, const Tensor<T>& prev_emb, const LabelMap& prev_labels,
                              const WindowSpec& window) {
  window.validate();
  detail::check_embeddings(emb_t, prev_emb, prev_labels);
  if (emb_t.dim(0) != prev_emb.dim(0) || emb_t.dim(1) != prev_emb.dim(1))
    throw ShapeError("local_match: current and previous grids differ");
  const Index H = emb_t.dim(0), W = emb_t.dim(1), D = emb_t.dim(2), P = H * W;
  const Index O = static_cast<Index>(prev_labels.objects.size());
  const Index k = window.k;

  detail::RowMat<T> cur_t = emb_t.matrix(P, D).transpose();
  detail::RowMat<T> prev_t = prev_emb.matrix(P, D).transpose();
  const std::vector<Index> slot = prev_labels.object_slots();

  std::vector<T> best(static_cast<std::size_t>(O * P), std::numeric_limits<T>::infinity());
  DistanceMapSet<T> result;
  result.maps = Tensor<T>({O, H, W}, T(1));
  result.objects = prev_labels.objects;
  result.kind = MatchKind::local_prev;
  result.argmin.assign(static_cast<std::size_t>(O * P), -1);

  parallel_for(0, H, [&](Index y0, Index y1) {
    std::vector<T> s(static_cast<std::size_t>(W));
    for (Index y = y0; y < y1; ++y) {
      for (Index dy = -k; dy <= k; ++dy) {
        const Index Y = y + dy;
        if (Y < 0 || Y >= H) continue;
        for (Index dx = -k; dx <= k; ++dx) {
          const Index x0 = std::max<Index>(0, -dx), x1 = std::min(W, W - dx);
          if (x0 >= x1) continue;
          std::fill(s.begin() + x0, s.begin() + x1, T(0));
          for (Index d = 0; d < D; ++d) {
            const T* a = cur_t.data() + d * P + y * W;
            const T* b = prev_t.data() + d * P + Y * W + dx;
            T* sp = s.data();
            for (Index x = x0; x < x1; ++x) {
              const T diff = a[x] - b[x];
              sp[x] += diff * diff;
            }
          }
          for (Index x = x0; x < x1; ++x) {
            const Index q = Y * W + x + dx;
            const Index o = slot[static_cast<std::size_t>(q)];
            if (o < 0) continue;
            const std::size_t e = static_cast<std::size_t>(o * P + y * W + x);
            if (s[static_cast<std::size_t>(x)] < best[e]) {
              best[e] = s[static_cast<std::size_t>(x)];
              result.argmin[e] = q;
            }
          }
        }
      }
    }
  });

  for (Index e = 0; e < O * P; ++e)
    if (result.argmin[static_cast<std::size_t>(e)] >= 0)
      result.maps.data()[e] = kernels::embedding_distance_from_sq(best[static_cast<std::size_t>(e)]);
  return result;
}

namespace detail {

/// Backward rule shared by all matching ops: with d = f(|e_p - e_q|^2) at
/// the stored argmin q, dd/de_p = (1 - d^2)(e_p - e_q) and dd/de_q is its
/// negative.
template <typename T>
Var<T> record_match(Var<T> emb_t, Var<T> ref_emb, DistanceMapSet<T> set) {
  if (emb_t.tape != ref_emb.tape) throw ContractError("matching operands live on different tapes");
  Tape<T>& tape = *emb_t.tape;
  return tape.record(std::move(set.maps), {emb_t, ref_emb},
                     [emb_t, ref_emb, argmin = std::move(set.argmin)](Tape<T>& t, Index self) {
                       const Tensor<T>& d = t.value(self);
                       const Tensor<T>& g = t.grad(self);
                       const Tensor<T>& et = t.value(emb_t.id);
                       const Tensor<T>& er = t.value(ref_emb.id);
                       const Index D = et.dim(2), P = et.dim(0) * et.dim(1);
                       Tensor<T>* gt = emb_t.requires_grad() ? &t.grad(emb_t.id) : nullptr;
                       Tensor<T>* gr = ref_emb.requires_grad() ? &t.grad(ref_emb.id) : nullptr;
                       for (Index e = 0; e < d.size(); ++e) {
                         const Index q = argmin[static_cast<std::size_t>(e)];
                         if (q < 0 || g.data()[e] == T(0)) continue;
                         const T dv = d.data()[e];
                         const T coeff = g.data()[e] * (T(1) - dv * dv);
                         if (coeff == T(0)) continue;
                         const Index p = e % P;
                         const T* ep = et.data() + p * D;
                         const T* eq = er.data() + q * D;
                         for (Index c = 0; c < D; ++c) {
                           const T diff = coeff * (ep[c] - eq[c]);
                           if (gt) gt->data()[p * D + c] += diff;
                           if (gr) gr->data()[q * D + c] -= diff;
                         }
                       }
                     });
}

}  // namespace detail

/// Differentiable global matching; gradients flow through the argmin pair.
template <typename T>
Var<T> global_match(Var<T> emb_t, Var<T> ref_emb, const LabelMap& ref_labels,
                    std::optional<Index> subsample = std::nullopt, std::uint64_t seed = 0) {
  return detail::record_match(emb_t, ref_emb, global_match(emb_t.value(), ref_emb.value(), ref_labels, subsample, seed));
}

template <typename T>
Var<T> global_prev_match(Var<T> emb_t, Var<T> prev_emb, const LabelMap& prev_labels) {
  return detail::record_match(emb_t, prev_emb, global_prev_match(emb_t.value(), prev_emb.value(), prev_labels));
}

template <typename T>
Var<T> local_match(Var<T> emb_t, Var<T> prev_emb, const LabelMap& prev_labels, const WindowSpec& window) {
  return detail::record_match(emb_t, prev_emb, local_match(emb_t.value(), prev_emb.value(), prev_labels, window));
}

struct MatchBenchReport {
  Index height = 0, width = 0, dim = 0, window = 0, trials = 0, objects = 0;
  double local_ns = 0.0;
  double global_prev_ns = 0.0;
  double speedup = 0.0;
  Index local_candidates_per_pixel = 0;
  Index global_candidates_per_pixel = 0;
};

/// Median wall-clock times of local_match and global_prev_match (f32) on the
/// same random embeddings and labels.
MatchBenchReport bench_matching(Index height, Index width, Index dim, Index k, Index trials, Index objects = 3,
                                std::uint64_t seed = 0);

}  // namespace embvos
