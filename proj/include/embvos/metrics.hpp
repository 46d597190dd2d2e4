#pragma once

#include <string>
#include <vector>

#include "embvos/labels.hpp"

namespace embvos {

/// Region similarity: IoU of the object's binary masks; 1 if both are empty.
double j_measure(const LabelTensor& pred, const LabelTensor& gt, int object_id);

/// Pixels of a binary mask that are foreground and touch the image edge or
/// a 4-neighbor background pixel.
std::vector<unsigned char> mask_boundary(const std::vector<unsigned char>& mask, Index height, Index width);

/// Matching radius in pixels: ceil(tol_frac * image diagonal).
Index boundary_radius(Index height, Index width, double tol_frac);

/// Contour accuracy: F-score of boundary precision and recall, where a
/// boundary pixel counts as matched if a boundary pixel of the other mask
/// lies within boundary_radius (Euclidean disk). 1 if both boundaries are
/// empty, 0 if exactly one is or P + R = 0.
double f_measure(const LabelTensor& pred, const LabelTensor& gt, int object_id, double tol_frac = 0.008);

struct EvalOptions {
  bool include_first = false;
  double tol_frac = 0.008;
};

struct ObjectScore {
  int object = 0;
  double j = 0.0;
  double f = 0.0;
};

struct SequenceReport {
  std::string name;
  std::vector<ObjectScore> objects;
  double j_mean = 1.0;
  double f_mean = 1.0;
  double jf_mean = 1.0;
  Index frames_evaluated = 0;
};

struct EvalReport {
  std::vector<SequenceReport> sequences;
  double j_mean = 1.0;
  double f_mean = 1.0;
  double jf_mean = 1.0;
  EvalOptions options;

  std::string to_json() const;
  std::string to_csv() const;
};

/// Per-object J and F averaged over the evaluated frames, then averaged
/// over foreground objects (background 0 is never scored). The object set
/// is every non-zero id that occurs in any ground-truth frame. Frame 0 is
/// skipped unless options.include_first.
SequenceReport evaluate_sequence(const std::vector<LabelTensor>& preds, const std::vector<LabelTensor>& gts,
                                 const EvalOptions& options = {}, const std::string& name = "sequence");

/// Global means over every (sequence, object) pair.
EvalReport summarize(std::vector<SequenceReport> sequences, const EvalOptions& options);

}  // namespace embvos
