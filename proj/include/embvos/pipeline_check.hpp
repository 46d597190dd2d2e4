#pragma once

#include <cstdint>

#include "embvos/gradcheck.hpp"
#include "embvos/trainer.hpp"

namespace embvos {

/// A tiny f64 training problem: three frames of `grid`*4 pixels square with
/// two objects plus background, embedding dim 4 and an 8-channel head.
struct ToyProblem {
  FeatNetWeights<double> featnet;
  HeadWeights<double> head;
  PreparedSample<double> sample;
  SampleOptions options;
};

ToyProblem make_toy_problem(Index grid = 8, std::uint64_t seed = 0, const AblationConfig& ablation = {});

/// Central-difference check of the full training loss of a toy problem
/// with respect to every featnet and head parameter.
GradCheckReport pipeline_grad_check(Index grid = 8, std::uint64_t seed = 0, double eps = 1e-6);

}  // namespace embvos
