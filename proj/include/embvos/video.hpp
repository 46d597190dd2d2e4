#pragma once

#include <string>
#include <vector>

#include "embvos/labels.hpp"
#include "embvos/tensor.hpp"

namespace embvos {

/// An RGB frame [H, W, 3] with values in [0, 1].
using Frame = Tensor<float>;

/// A frame with its full-resolution object-id mask [H, W].
struct FrameMask {
  Frame frame;
  LabelTensor mask;
};

/// Frames and ground-truth masks of one sequence, in temporal order.
struct Video {
  std::string name;
  std::vector<Frame> frames;
  std::vector<LabelTensor> masks;

  Index length() const { return static_cast<Index>(frames.size()); }
};

}  // namespace embvos
