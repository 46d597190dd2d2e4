#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "embvos/tensor.hpp"

namespace embvos {

using LabelTensor = Tensor<std::int32_t>;

/// Per-pixel object ids plus the ordered object set of the video.
///
/// `objects` is sorted, duplicate-free and always contains background 0.
/// For ground-truth maps every label is a member of `objects`; maps derived
/// from predictions may lack some objects entirely.
struct LabelMap {
  LabelTensor labels;  // [H, W]
  std::vector<int> objects{0};

  LabelMap() = default;
  LabelMap(LabelTensor l, std::vector<int> objs) : labels(std::move(l)), objects(std::move(objs)) {
    validate_objects();
  }

  /// Object set = ids present in `labels` plus background.
  static LabelMap from_labels(LabelTensor l) {
    std::vector<int> objs{0};
    for (const auto v : l) objs.push_back(v);
    std::sort(objs.begin(), objs.end());
    objs.erase(std::unique(objs.begin(), objs.end()), objs.end());
    return LabelMap(std::move(l), std::move(objs));
  }

  Index height() const { return labels.dim(0); }
  Index width() const { return labels.dim(1); }
  Index num_objects() const { return static_cast<Index>(objects.size()); }

  /// Position of an id in `objects`, or -1.
  Index slot_of(int id) const {
    const auto it = std::lower_bound(objects.begin(), objects.end(), id);
    return (it != objects.end() && *it == id) ? static_cast<Index>(it - objects.begin()) : -1;
  }

  /// slot_of(label) for every pixel.
  std::vector<Index> object_slots() const {
    std::vector<Index> slots(static_cast<std::size_t>(labels.size()));
    for (Index i = 0; i < labels.size(); ++i) slots[static_cast<std::size_t>(i)] = slot_of(labels.data()[i]);
    return slots;
  }

  /// Ascending flat pixel indices per object slot.
  std::vector<std::vector<Index>> pixels_by_object() const {
    std::vector<std::vector<Index>> members(objects.size());
    for (Index i = 0; i < labels.size(); ++i) {
      const Index s = slot_of(labels.data()[i]);
      if (s >= 0) members[static_cast<std::size_t>(s)].push_back(i);
    }
    return members;
  }

  void validate_objects() const {
    require_rank(labels.shape(), 2, "label map");
    if (objects.empty() || objects.front() != 0)
      throw ContractError("label map object set must contain background 0");
    for (std::size_t i = 1; i < objects.size(); ++i)
      if (objects[i] <= objects[i - 1]) throw ContractError("label map object set must be sorted and duplicate-free");
    if (objects.front() < 0) throw ContractError("object ids must be non-negative");
  }

  /// Ground-truth invariant: every label belongs to `objects`.
  void validate_ground_truth() const {
    validate_objects();
    for (const auto v : labels)
      if (slot_of(v) < 0) throw ContractError("label " + std::to_string(v) + " is not in the object set");
  }

  friend bool operator==(const LabelMap& a, const LabelMap& b) {
    return a.labels == b.labels && a.objects == b.objects;
  }
};

/// Nearest-neighbor downsampling at stride-grid cell centers: cell (i, j)
/// takes the label at pixel (i*stride + stride/2, j*stride + stride/2).
inline LabelTensor downsample_labels(const LabelTensor& full, Index stride) {
  require_rank(full.shape(), 2, "downsample_labels");
  if (full.dim(0) % stride != 0 || full.dim(1) % stride != 0)
    throw ShapeError("downsample_labels: " + shape_string(full.shape()) + " not divisible by stride " +
                     std::to_string(stride));
  const Index h = full.dim(0) / stride, w = full.dim(1) / stride;
  LabelTensor out({h, w});
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j) out(i, j) = full(i * stride + stride / 2, j * stride + stride / 2);
  return out;
}

}  // namespace embvos
