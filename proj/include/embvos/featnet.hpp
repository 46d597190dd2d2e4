#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "embvos/instrument.hpp"
#include "embvos/ops.hpp"
#include "embvos/rng.hpp"

namespace embvos {

/// Shape of the small backbone and the embedding layer.
struct FeatNetConfig {
  Index backbone_channels = 32;
  Index embedding_dim = 8;
  Index stride = 4;
  Index depth = 3;

  void validate() const {
    if (stride != 4) throw ConfigError("featnet stride is fixed at 4, got " + std::to_string(stride));
    if (backbone_channels < 1 || embedding_dim < 1)
      throw ConfigError("featnet channel counts must be >= 1");
    if (depth < 2) throw ConfigError("featnet depth must be >= 2 to reach stride 4");
  }
};

/// Depthwise 3x3 -> pointwise 1x1 (+bias). Backbone blocks apply ReLU after
/// the pointwise stage; the embedding layer does not.
template <typename T>
struct SeparableBlock {
  Parameter<T> depthwise;  // [3, 3, Cin]
  Parameter<T> pointwise;  // [Cin, Cout]
  Parameter<T> bias;       // [Cout]
  Index stride = 1;
};

template <typename T>
struct FeatNetWeights {
  FeatNetConfig config;
  std::vector<SeparableBlock<T>> blocks;
  SeparableBlock<T> embedding;

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& b : blocks) out.insert(out.end(), {&b.depthwise, &b.pointwise, &b.bias});
    out.insert(out.end(), {&embedding.depthwise, &embedding.pointwise, &embedding.bias});
    return out;
  }

  template <typename U>
  FeatNetWeights<U> cast() const {
    FeatNetWeights<U> out;
    out.config = config;
    auto conv = [](const SeparableBlock<T>& b) {
      SeparableBlock<U> c;
      c.depthwise = Parameter<U>(b.depthwise.name, b.depthwise.value.template cast<U>());
      c.pointwise = Parameter<U>(b.pointwise.name, b.pointwise.value.template cast<U>());
      c.bias = Parameter<U>(b.bias.name, b.bias.value.template cast<U>());
      c.stride = b.stride;
      return c;
    };
    for (const auto& b : blocks) out.blocks.push_back(conv(b));
    out.embedding = conv(embedding);
    return out;
  }
};

namespace detail {

/// Depthwise kernels: uniform with variance 1/fan_in (no nonlinearity
/// follows them). Pointwise kernels: uniform with variance 2/fan_in.
template <typename T>
Tensor<T> uniform_init(Shape shape, double limit, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (T& v : t) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

template <typename T>
SeparableBlock<T> init_block(const std::string& name, Index kernel, Index cin, Index cout, Index stride, Rng& rng) {
  SeparableBlock<T> b;
  b.depthwise = Parameter<T>(name + ".depthwise",
                             uniform_init<T>({kernel, kernel, cin}, std::sqrt(3.0 / double(kernel * kernel)), rng));
  b.pointwise = Parameter<T>(name + ".pointwise", uniform_init<T>({cin, cout}, std::sqrt(6.0 / double(cin)), rng));
  b.bias = Parameter<T>(name + ".bias", Tensor<T>({cout}));
  b.stride = stride;
  return b;
}

}  // namespace detail

/// Fan-in scaled uniform initialization, zero biases, deterministic per seed.
template <typename T>
FeatNetWeights<T> init_featnet(const FeatNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  FeatNetWeights<T> w;
  w.config = cfg;
  Index cin = 3;
  for (Index i = 0; i < cfg.depth; ++i) {
    w.blocks.push_back(detail::init_block<T>("featnet.block" + std::to_string(i), 3, cin, cfg.backbone_channels,
                                             i < 2 ? 2 : 1, rng));
    cin = cfg.backbone_channels;
  }
  w.embedding = detail::init_block<T>("featnet.embedding", 3, cin, cfg.embedding_dim, 1, rng);
  return w;
}

/// Parameter leaves of one FeatNetWeights bound to a tape.
template <typename T>
struct BoundBlock {
  Var<T> depthwise, pointwise, bias;
  Index stride = 1;
};

template <typename T>
struct FeatNetVars {
  std::vector<BoundBlock<T>> blocks;
  BoundBlock<T> embedding;
};

template <typename T>
FeatNetVars<T> bind(Tape<T>& tape, FeatNetWeights<T>& w) {
  auto b = [&tape](SeparableBlock<T>& s) {
    return BoundBlock<T>{tape.parameter(s.depthwise), tape.parameter(s.pointwise), tape.parameter(s.bias), s.stride};
  };
  FeatNetVars<T> v;
  for (auto& blk : w.blocks) v.blocks.push_back(b(blk));
  v.embedding = b(w.embedding);
  return v;
}

/// Same as bind() but as constants: no gradient is collected.
template <typename T>
FeatNetVars<T> bind_frozen(Tape<T>& tape, const FeatNetWeights<T>& w) {
  auto b = [&tape](const SeparableBlock<T>& s) {
    return BoundBlock<T>{tape.constant(s.depthwise.value), tape.constant(s.pointwise.value),
                         tape.constant(s.bias.value), s.stride};
  };
  FeatNetVars<T> v;
  for (const auto& blk : w.blocks) v.blocks.push_back(b(blk));
  v.embedding = b(w.embedding);
  return v;
}

template <typename T>
struct Extracted {
  Var<T> features;   // [H/4, W/4, backbone_channels]
  Var<T> embedding;  // [H/4, W/4, embedding_dim]
};

/// Backbone features and pixel embeddings of one RGB frame [H, W, 3] with
/// values in [0, 1]. H and W must be divisible by 4.
template <typename T>
Extracted<T> extract(Var<T> frame, const FeatNetVars<T>& w) {
  const Shape& s = frame.shape();
  if (s.size() != 3 || s[2] != 3) throw ShapeError("extract: expected an [H, W, 3] frame, got " + shape_string(s));
  if (s[0] % 4 != 0 || s[1] % 4 != 0)
    throw ShapeError("extract: frame extents " + shape_string(s) + " must be divisible by 4");
  counters().featnet_extract++;
  Var<T> x = frame;
  for (const auto& b : w.blocks)
    x = relu(pointwise_conv2d(depthwise_conv2d(x, b.depthwise, b.stride), b.pointwise, b.bias));
  const auto& e = w.embedding;
  Var<T> emb = pointwise_conv2d(depthwise_conv2d(x, e.depthwise, e.stride), e.pointwise, e.bias);
  return {x, emb};
}

}  // namespace embvos
