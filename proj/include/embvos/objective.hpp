#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "embvos/dynhead.hpp"
#include "embvos/labels.hpp"
#include "embvos/ops.hpp"

namespace embvos {

struct LossConfig {
  double bootstrap_fraction = 0.15;

  void validate() const {
    if (!(bootstrap_fraction > 0.0 && bootstrap_fraction <= 1.0))
      throw ConfigError("bootstrap_fraction must lie in (0, 1], got " + std::to_string(bootstrap_fraction));
  }
};

/// ceil(fraction * n), at least 1 and at most n. A relative slack absorbs
/// representation error such as 0.15 * 20 = 3.0000000000000004.
inline Index bootstrap_count(double fraction, Index n) {
  const double x = fraction * static_cast<double>(n);
  const auto k = static_cast<Index>(std::ceil(x - 1e-9 * std::max(1.0, x)));
  return std::clamp<Index>(k, 1, std::max<Index>(1, n));
}

/// Per-pixel cross entropy -log p(target) of a posterior [H, W, O].
template <typename T>
std::vector<T> pixel_cross_entropy(const Tensor<T>& probs, const LabelMap& target) {
  const Index O = static_cast<Index>(target.objects.size());
  require_shape(probs.shape(), {target.height(), target.width(), O}, "cross entropy posterior");
  const std::vector<Index> slot = target.object_slots();
  std::vector<T> ce(slot.size());
  for (std::size_t i = 0; i < slot.size(); ++i) {
    if (slot[i] < 0)
      throw ContractError("cross entropy: target label " + std::to_string(target.labels.data()[i]) +
                          " is not in the object set");
    const T p = std::max(probs.data()[static_cast<Index>(i) * O + slot[i]], std::numeric_limits<T>::min());
    ce[i] = -std::log(p);
  }
  return ce;
}

/// Mean cross entropy over the ceil(fraction * N) hardest pixels. Pixels
/// are ranked by a stable descending sort, so ties keep the smaller flat
/// index. Pixels outside the kept set receive zero gradient.
template <typename T>
Var<T> bootstrapped_ce(const ProbabilityVar<T>& probs, const LabelMap& target, const LossConfig& cfg) {
  cfg.validate();
  if (probs.objects != target.objects) throw ContractError("bootstrapped_ce: object sets differ");
  const Tensor<T>& pv = probs.probs.value();
  const std::vector<T> ce = pixel_cross_entropy(pv, target);
  const Index N = static_cast<Index>(ce.size());
  std::vector<Index> order(ce.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&ce](Index a, Index b) {
    return ce[static_cast<std::size_t>(a)] > ce[static_cast<std::size_t>(b)];
  });
  const Index K = bootstrap_count(cfg.bootstrap_fraction, N);
  order.resize(static_cast<std::size_t>(K));
  T acc = 0;
  for (Index i : order) acc += ce[static_cast<std::size_t>(i)];
  const T loss = acc / static_cast<T>(K);

  const Index O = static_cast<Index>(target.objects.size());
  std::vector<Index> slot = target.object_slots();
  std::vector<Index> kept_slot;
  for (Index i : order) kept_slot.push_back(i * O + slot[static_cast<std::size_t>(i)]);
  Var<T> src = probs.probs;
  return src.tape->record(Tensor<T>::scalar(loss), {src}, [src, kept_slot, K](Tape<T>& t, Index self) {
    const T g = t.grad(self)[0];
    const Tensor<T>& p = t.value(src.id);
    Tensor<T>& dp = t.grad(src.id);
    for (Index e : kept_slot) {
      const T pe = p.data()[e];
      if (pe < std::numeric_limits<T>::min()) continue;
      dp.data()[e] -= g / (static_cast<T>(K) * pe);
    }
  });
}

/// Classical momentum SGD: v <- momentum * v + g; theta <- theta - lr * v.
template <typename T>
struct SgdMomentum {
  double lr = 0.0007;
  double momentum = 0.9;
  std::vector<Tensor<T>> velocity;

  void step(const std::vector<Parameter<T>*>& params) {
    for (const Parameter<T>* p : params) {
      require_shape(p->grad.shape(), p->value.shape(), "sgd step gradient");
      if (!p->grad.all_finite()) throw NumericError("sgd step: non-finite gradient in " + p->name);
    }
    if (velocity.empty())
      for (const Parameter<T>* p : params) velocity.emplace_back(p->value.shape());
    if (velocity.size() != params.size()) throw ContractError("sgd step: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_shape(velocity[i].shape(), params[i]->value.shape(), "sgd velocity");
      velocity[i].vec() = static_cast<T>(momentum) * velocity[i].vec() + params[i]->grad.vec();
      params[i]->value.vec() -= static_cast<T>(lr) * velocity[i].vec();
    }
  }
};

}  // namespace embvos
