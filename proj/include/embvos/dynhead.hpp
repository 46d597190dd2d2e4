#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "embvos/featnet.hpp"
#include "embvos/instrument.hpp"
#include "embvos/ops.hpp"

namespace embvos {

struct HeadConfig {
  Index channels = 32;
  Index kernel = 7;
  Index layers = 4;

  void validate() const {
    if (channels < 1 || layers < 1) throw ConfigError("head channels and layers must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("head kernel must be odd, got " + std::to_string(kernel));
  }
};

/// One weight set shared by every object: `layers` separable convolutions
/// (kernel x kernel depthwise, 1x1 pointwise, ReLU) and a 1x1 -> 1 logit.
template <typename T>
struct HeadWeights {
  HeadConfig config;
  Index input_channels = 0;  // backbone channels + 3
  std::vector<SeparableBlock<T>> layers;
  Parameter<T> out_kernel;  // [channels, 1]
  Parameter<T> out_bias;    // [1]

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& b : layers) out.insert(out.end(), {&b.depthwise, &b.pointwise, &b.bias});
    out.insert(out.end(), {&out_kernel, &out_bias});
    return out;
  }

  template <typename U>
  HeadWeights<U> cast() const {
    HeadWeights<U> out;
    out.config = config;
    out.input_channels = input_channels;
    for (const auto& b : layers) {
      SeparableBlock<U> c;
      c.depthwise = Parameter<U>(b.depthwise.name, b.depthwise.value.template cast<U>());
      c.pointwise = Parameter<U>(b.pointwise.name, b.pointwise.value.template cast<U>());
      c.bias = Parameter<U>(b.bias.name, b.bias.value.template cast<U>());
      c.stride = b.stride;
      out.layers.push_back(std::move(c));
    }
    out.out_kernel = Parameter<U>(out_kernel.name, out_kernel.value.template cast<U>());
    out.out_bias = Parameter<U>(out_bias.name, out_bias.value.template cast<U>());
    return out;
  }
};

template <typename T>
HeadWeights<T> init_head(const HeadConfig& cfg, Index backbone_channels, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  HeadWeights<T> w;
  w.config = cfg;
  w.input_channels = backbone_channels + 3;
  Index cin = w.input_channels;
  for (Index i = 0; i < cfg.layers; ++i) {
    w.layers.push_back(detail::init_block<T>("head.layer" + std::to_string(i), cfg.kernel, cin, cfg.channels, 1, rng));
    cin = cfg.channels;
  }
  w.out_kernel = Parameter<T>("head.logit.pointwise",
                              detail::uniform_init<T>({cin, 1}, std::sqrt(3.0 / double(cin)), rng));
  w.out_bias = Parameter<T>("head.logit.bias", Tensor<T>({1}));
  return w;
}

template <typename T>
struct HeadVars {
  std::vector<BoundBlock<T>> layers;
  Var<T> out_kernel, out_bias;
  Index input_channels = 0;
};

template <typename T>
HeadVars<T> bind(Tape<T>& tape, HeadWeights<T>& w) {
  HeadVars<T> v;
  for (auto& b : w.layers)
    v.layers.push_back({tape.parameter(b.depthwise), tape.parameter(b.pointwise), tape.parameter(b.bias), 1});
  v.out_kernel = tape.parameter(w.out_kernel);
  v.out_bias = tape.parameter(w.out_bias);
  v.input_channels = w.input_channels;
  return v;
}

template <typename T>
HeadVars<T> bind_frozen(Tape<T>& tape, const HeadWeights<T>& w) {
  HeadVars<T> v;
  for (const auto& b : w.layers)
    v.layers.push_back({tape.constant(b.depthwise.value), tape.constant(b.pointwise.value),
                        tape.constant(b.bias.value), 1});
  v.out_kernel = tape.constant(w.out_kernel.value);
  v.out_bias = tape.constant(w.out_bias.value);
  v.input_channels = w.input_channels;
  return v;
}

/// Per-object head input. Channel order is frozen as
/// [global, local, prev_prob, features...].
template <typename T>
struct HeadInput {
  Var<T> global_map;  // [H', W', 1]
  Var<T> local_map;   // [H', W', 1]
  Var<T> prev_prob;   // [H', W', 1]
  Var<T> features;    // [H', W', C]
};

/// Logit map [H', W', 1] for one object.
template <typename T>
Var<T> head_logits(const HeadInput<T>& in, const HeadVars<T>& w) {
  const Index channels = 3 + in.features.shape().back();
  if (channels != w.input_channels)
    throw ShapeError("head_logits: input has " + std::to_string(channels) + " channels, head expects " +
                     std::to_string(w.input_channels));
  counters().head_forward++;
  Var<T> x = concat_lastdim<T>({in.global_map, in.local_map, in.prev_prob, in.features});
  for (const auto& l : w.layers) x = relu(pointwise_conv2d(depthwise_conv2d(x, l.depthwise, 1), l.pointwise, l.bias));
  return pointwise_conv2d(x, w.out_kernel, w.out_bias);
}

/// Differentiable per-object distance maps [|O|, H', W'] with their object ids.
template <typename T>
struct DistanceVar {
  Var<T> maps;
  std::vector<int> objects;
};

/// Differentiable posterior [H', W', |O|] with its object ids.
template <typename T>
struct ProbabilityVar {
  Var<T> probs;
  std::vector<int> objects;
};

/// Runs the shared head once per object, stacks the logits in object order
/// and applies softmax over objects.
template <typename T>
ProbabilityVar<T> segment_step(Var<T> features, const DistanceVar<T>& global, const DistanceVar<T>& local,
                               const ProbabilityVar<T>& prev, const HeadVars<T>& w) {
  if (global.objects != local.objects || global.objects != prev.objects)
    throw ContractError("segment_step: object sets of the head inputs differ");
  const Index O = static_cast<Index>(global.objects.size());
  const Index H = features.shape()[0], W = features.shape()[1];
  require_shape(global.maps.shape(), {O, H, W}, "segment_step global maps");
  require_shape(local.maps.shape(), {O, H, W}, "segment_step local maps");
  require_shape(prev.probs.shape(), {H, W, O}, "segment_step previous probabilities");
  std::vector<Var<T>> logits;
  logits.reserve(static_cast<std::size_t>(O));
  for (Index o = 0; o < O; ++o) {
    HeadInput<T> in{reshape(select_first(global.maps, o), {H, W, 1}), reshape(select_first(local.maps, o), {H, W, 1}),
                    slice_lastdim(prev.probs, o, 1), features};
    logits.push_back(head_logits(in, w));
  }
  return {softmax_lastdim(concat_lastdim(logits)), global.objects};
}

}  // namespace embvos
