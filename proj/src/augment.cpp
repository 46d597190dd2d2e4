#include "embvos/augment.hpp"

#include <algorithm>
#include <cmath>

namespace embvos {

namespace {

struct Axis {
  Index i0, i1;
  double w1;
};

Axis bilinear_axis(Index out, double ratio, Index src_extent) {
  double s = (static_cast<double>(out) + 0.5) * ratio - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_extent - 1));
  const auto i0 = static_cast<Index>(std::floor(s));
  const Index i1 = std::min(i0 + 1, src_extent - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}

Index nearest_axis(Index out, double ratio, Index src_extent) {
  const auto s = static_cast<Index>(std::floor((static_cast<double>(out) + 0.5) * ratio));
  return std::clamp<Index>(s, 0, src_extent - 1);
}

}  // namespace

AugmentParams sample_augment(Rng& rng, const AugmentConfig& cfg, Index height, Index width) {
  AugmentParams p;
  p.flip = rng.bernoulli(cfg.flip_probability);
  double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  if (cfg.crop > 0) {
    const double floor_scale = static_cast<double>(cfg.crop) / static_cast<double>(std::min(height, width));
    scale = std::max(scale, floor_scale);
  }
  p.scaled_height = std::max<Index>(cfg.crop, std::lround(static_cast<double>(height) * scale));
  p.scaled_width = std::max<Index>(cfg.crop, std::lround(static_cast<double>(width) * scale));
  p.crop = cfg.crop;
  if (cfg.crop > 0) {
    p.offset_y = rng.uniform_int(p.scaled_height - cfg.crop + 1);
    p.offset_x = rng.uniform_int(p.scaled_width - cfg.crop + 1);
  }
  return p;
}

FrameMask apply_augment(const FrameMask& in, const AugmentParams& params) {
  const Index H = in.frame.dim(0), W = in.frame.dim(1), C = in.frame.dim(2);
  require_shape(in.mask.shape(), {H, W}, "augment mask");
  const Index Hs = params.scaled_height > 0 ? params.scaled_height : H;
  const Index Ws = params.scaled_width > 0 ? params.scaled_width : W;
  const Index out_h = params.crop > 0 ? params.crop : Hs;
  const Index out_w = params.crop > 0 ? params.crop : Ws;
  if (params.offset_y < 0 || params.offset_x < 0 || params.offset_y + out_h > Hs || params.offset_x + out_w > Ws)
    throw ContractError("augment: crop window exceeds the scaled image");
  const double ry = static_cast<double>(H) / static_cast<double>(Hs);
  const double rx = static_cast<double>(W) / static_cast<double>(Ws);

  FrameMask out{Frame({out_h, out_w, C}), LabelTensor({out_h, out_w})};
  for (Index y = 0; y < out_h; ++y) {
    const Index Y = y + params.offset_y;
    const Axis ay = bilinear_axis(Y, ry, H);
    const Index my = nearest_axis(Y, ry, H);
    for (Index x = 0; x < out_w; ++x) {
      Index X = x + params.offset_x;
      if (params.flip) X = Ws - 1 - X;
      const Axis ax = bilinear_axis(X, rx, W);
      const Index mx = nearest_axis(X, rx, W);
      out.mask(y, x) = in.mask(my, mx);
      for (Index c = 0; c < C; ++c) {
        const double top = ax.w1 == 0.0 ? in.frame(ay.i0, ax.i0, c)
                                         : (1.0 - ax.w1) * in.frame(ay.i0, ax.i0, c) + ax.w1 * in.frame(ay.i0, ax.i1, c);
        double v = top;
        if (ay.w1 != 0.0) {
          const double bottom = ax.w1 == 0.0
                                    ? in.frame(ay.i1, ax.i0, c)
                                    : (1.0 - ax.w1) * in.frame(ay.i1, ax.i0, c) + ax.w1 * in.frame(ay.i1, ax.i1, c);
          v = (1.0 - ay.w1) * top + ay.w1 * bottom;
        }
        out.frame(y, x, c) = static_cast<float>(v);
      }
    }
  }
  return out;
}

FrameMask augment(const FrameMask& in, Rng& rng, const AugmentConfig& cfg) {
  return apply_augment(in, sample_augment(rng, cfg, in.frame.dim(0), in.frame.dim(1)));
}

Frame flip_horizontal(const Frame& frame) {
  Frame out(frame.shape());
  const Index H = frame.dim(0), W = frame.dim(1), C = frame.dim(2);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < C; ++c) out(y, x, c) = frame(y, W - 1 - x, c);
  return out;
}

LabelTensor flip_horizontal(const LabelTensor& mask) {
  LabelTensor out(mask.shape());
  const Index H = mask.dim(0), W = mask.dim(1);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) out(y, x) = mask(y, W - 1 - x);
  return out;
}

}  // namespace embvos
