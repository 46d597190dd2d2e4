#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "embvos/dynhead.hpp"
#include "embvos/featnet.hpp"
#include "embvos/matching.hpp"
#include "embvos/trainer.hpp"
#include "embvos/video.hpp"

namespace embvos {

/// Trained weights plus the cue configuration they were trained with.
template <typename T>
struct Model {
  FeatNetWeights<T> featnet;
  HeadWeights<T> head;
  AblationConfig ablation;
};

/// Posterior over objects on the stride grid, [H', W', |O|].
template <typename T>
struct ProbabilityMap {
  Tensor<T> probs;
  std::vector<int> objects;
};

/// Everything carried from one frame to the next.
template <typename T>
struct VideoState {
  EmbeddingMap<T> first_emb;
  LabelMap first_labels;
  EmbeddingMap<T> prev_emb;
  ProbabilityMap<T> prev_probs;
  std::vector<int> objects;
  Index frame_height = 0;
  Index frame_width = 0;
};

/// Argmax over the last axis; ties go to the lower slot (= smaller id).
template <typename T>
LabelTensor argmax_labels(const Tensor<T>& probs, const std::vector<int>& objects) {
  const Index H = probs.dim(0), W = probs.dim(1), O = probs.dim(2);
  LabelTensor out({H, W});
  for (Index i = 0; i < H * W; ++i) {
    const T* p = probs.data() + i * O;
    Index best = 0;
    for (Index o = 1; o < O; ++o)
      if (p[o] > p[best]) best = o;
    out.data()[i] = objects[static_cast<std::size_t>(best)];
  }
  return out;
}

/// Bilinear upsampling of a stride-grid posterior to [height, width, O].
/// Grid cell (i, j) is centered at pixel (i*stride + (stride-1)/2, ...).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& grid, Index height, Index width, Index stride) {
  const Index h = grid.dim(0), w = grid.dim(1), O = grid.dim(2);
  Tensor<T> out({height, width, O});
  auto axis = [stride](Index px, Index n) {
    double g = (static_cast<double>(px) + 0.5) / static_cast<double>(stride) - 0.5;
    g = std::clamp(g, 0.0, static_cast<double>(n - 1));
    const auto i0 = static_cast<Index>(std::floor(g));
    return std::tuple<Index, Index, T>{i0, std::min(i0 + 1, n - 1), static_cast<T>(g - static_cast<double>(i0))};
  };
  for (Index y = 0; y < height; ++y) {
    const auto [y0, y1, wy] = axis(y, h);
    for (Index x = 0; x < width; ++x) {
      const auto [x0, x1, wx] = axis(x, w);
      T* o = out.data() + (y * width + x) * O;
      const T* a = grid.data() + (y0 * w + x0) * O;
      const T* b = grid.data() + (y0 * w + x1) * O;
      const T* c = grid.data() + (y1 * w + x0) * O;
      const T* d = grid.data() + (y1 * w + x1) * O;
      for (Index k = 0; k < O; ++k)
        o[k] = (T(1) - wy) * ((T(1) - wx) * a[k] + wx * b[k]) + wy * ((T(1) - wx) * c[k] + wx * d[k]);
    }
  }
  return out;
}

namespace detail {

inline Index round_up4(Index v) { return (v + 3) / 4 * 4; }

/// Edge-replicates a frame so both extents are multiples of 4.
template <typename T>
Tensor<T> pad_frame(const Frame& frame) {
  const Index H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  const Index Hp = round_up4(H), Wp = round_up4(W);
  Tensor<T> out({Hp, Wp, C});
  for (Index y = 0; y < Hp; ++y)
    for (Index x = 0; x < Wp; ++x)
      for (Index c = 0; c < C; ++c) out(y, x, c) = static_cast<T>(frame(std::min(y, H - 1), std::min(x, W - 1), c));
  return out;
}

inline LabelTensor pad_mask(const LabelTensor& mask) {
  const Index H = mask.dim(0), W = mask.dim(1);
  const Index Hp = round_up4(H), Wp = round_up4(W);
  LabelTensor out({Hp, Wp});
  for (Index y = 0; y < Hp; ++y)
    for (Index x = 0; x < Wp; ++x) out(y, x) = mask(std::min(y, H - 1), std::min(x, W - 1));
  return out;
}

}  // namespace detail

/// Embeds frame 0 and seeds the propagated posterior with its one-hot mask.
template <typename T>
VideoState<T> init_video(const Frame& frame0, const LabelTensor& mask0, const Model<T>& model) {
  require_rank(frame0.shape(), 3, "init_video frame");
  require_shape(mask0.shape(), {frame0.dim(0), frame0.dim(1)}, "init_video mask");
  Tape<T> tape;
  const FeatNetVars<T> fv = bind_frozen(tape, model.featnet);
  const Extracted<T> ext = extract(tape.constant(detail::pad_frame<T>(frame0)), fv);

  VideoState<T> st;
  st.frame_height = frame0.dim(0);
  st.frame_width = frame0.dim(1);
  st.first_labels = LabelMap::from_labels(grid_labels(detail::pad_mask(mask0), 4));
  st.objects = st.first_labels.objects;
  st.first_emb = {ext.embedding.value(), 4};
  st.prev_emb = st.first_emb;
  st.prev_probs = {onehot_prev<T>(st.first_labels), st.objects};
  return st;
}

/// Segments one frame. Local matching uses the argmax of the propagated
/// stride-grid posterior, never ground truth; the soft posterior itself is
/// fed to the head unmodified.
template <typename T>
std::pair<LabelTensor, VideoState<T>> infer_frame(const VideoState<T>& state, const Frame& frame,
                                                  const Model<T>& model, const WindowSpec& window) {
  if (frame.rank() != 3 || frame.dim(0) != state.frame_height || frame.dim(1) != state.frame_width)
    throw ShapeError("infer_frame: frame " + shape_string(frame.shape()) + " differs from the first frame");
  Tape<T> tape;
  const FeatNetVars<T> fv = bind_frozen(tape, model.featnet);
  const HeadVars<T> hv = bind_frozen(tape, model.head);
  const Extracted<T> cur = extract(tape.constant(detail::pad_frame<T>(frame)), fv);
  const std::vector<int>& objects = state.objects;
  const Index O = static_cast<Index>(objects.size());
  const Index h = cur.embedding.shape()[0], w = cur.embedding.shape()[1];

  Var<T> global = model.ablation.use_ff_gm
                      ? global_match(cur.embedding, tape.constant(state.first_emb.grid), state.first_labels)
                      : tape.constant(Tensor<T>({O, h, w}, T(1)));
  const LabelMap prev_labels(argmax_labels(state.prev_probs.probs, objects), objects);
  Var<T> local;
  if (model.ablation.use_pf_lm) {
    counters().local_match_predicted++;
    local = local_match(cur.embedding, tape.constant(state.prev_emb.grid), prev_labels, window);
  } else if (model.ablation.use_pf_gm) {
    local = global_prev_match(cur.embedding, tape.constant(state.prev_emb.grid), prev_labels);
  } else {
    local = tape.constant(Tensor<T>({O, h, w}, T(1)));
  }
  Var<T> prev = model.ablation.use_pfp ? tape.constant(state.prev_probs.probs)
                                       : tape.constant(Tensor<T>({h, w, O}, T(1) / static_cast<T>(O)));
  const ProbabilityVar<T> post = segment_step(cur.features, {global, objects}, {local, objects}, {prev, objects}, hv);

  const Tensor<T> full = upsample_bilinear(post.probs.value(), detail::round_up4(state.frame_height),
                                           detail::round_up4(state.frame_width), 4);
  const LabelTensor padded = argmax_labels(full, objects);
  LabelTensor mask({state.frame_height, state.frame_width});
  for (Index y = 0; y < state.frame_height; ++y)
    for (Index x = 0; x < state.frame_width; ++x) mask(y, x) = padded(y, x);

  VideoState<T> next = state;
  next.prev_emb = {cur.embedding.value(), 4};
  next.prev_probs = {post.probs.value(), objects};
  return {std::move(mask), std::move(next)};
}

/// Full-resolution masks for every frame; frame 0 is mask0 verbatim.
template <typename T>
std::vector<LabelTensor> infer_video(const std::vector<Frame>& frames, const LabelTensor& mask0,
                                     const Model<T>& model, const WindowSpec& window) {
  if (frames.empty()) throw ContractError("infer_video: no frames");
  window.validate();
  std::vector<LabelTensor> masks{mask0};
  VideoState<T> state = init_video(frames.front(), mask0, model);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    auto [mask, next] = infer_frame(state, frames[t], model, window);
    masks.push_back(std::move(mask));
    state = std::move(next);
  }
  return masks;
}

}  // namespace embvos
