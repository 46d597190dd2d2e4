#pragma once

#include "embvos/rng.hpp"
#include "embvos/video.hpp"

namespace embvos {

struct AugmentConfig {
  Index crop = 64;
  double scale_min = 0.7;
  double scale_max = 1.3;
  double flip_probability = 0.5;
};

/// One geometric transform, shared by every frame of a training sample.
/// The image is flipped, rescaled to (scaled_height, scaled_width), then
/// cropped to crop x crop at (offset_y, offset_x).
struct AugmentParams {
  bool flip = false;
  Index scaled_height = 0;
  Index scaled_width = 0;
  Index offset_y = 0;
  Index offset_x = 0;
  Index crop = 0;

  static AugmentParams identity(Index height, Index width) { return {false, height, width, 0, 0, 0}; }
};

/// Draws flip, scale and crop offset. When the drawn scale would leave the
/// image smaller than the crop, the scale is raised to the smallest value
/// that fits.
AugmentParams sample_augment(Rng& rng, const AugmentConfig& cfg, Index height, Index width);

/// Bilinear resampling for the frame, nearest-neighbor for the mask. A crop
/// of 0 keeps the full scaled image.
FrameMask apply_augment(const FrameMask& in, const AugmentParams& params);

FrameMask augment(const FrameMask& in, Rng& rng, const AugmentConfig& cfg);

Frame flip_horizontal(const Frame& frame);
LabelTensor flip_horizontal(const LabelTensor& mask);

}  // namespace embvos
