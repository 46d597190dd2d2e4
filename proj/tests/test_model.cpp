#include "doctest.h"

#include <cmath>
#include <numeric>

#include "embvos/dynhead.hpp"
#include "embvos/featnet.hpp"
#include "embvos/gradcheck.hpp"
#include "embvos/objective.hpp"
#include "support.hpp"

using namespace embvos;
using testing::random_tensor;

namespace {

FeatNetConfig small_featnet() {
  FeatNetConfig c;
  c.backbone_channels = 5;
  c.embedding_dim = 3;
  return c;
}

HeadConfig small_head() {
  HeadConfig c;
  c.channels = 4;
  c.kernel = 3;
  c.layers = 2;
  return c;
}

}  // namespace

TEST_CASE("featnet output extents are a quarter of the input") {
  auto w = init_featnet<double>(small_featnet(), 1);
  Rng rng(1);
  Tape<double> t;
  const auto fv = bind_frozen(t, w);
  const auto e = extract(t.constant(random_tensor<double>({24, 16, 3}, rng)), fv);
  CHECK(e.features.shape() == Shape{6, 4, 5});
  CHECK(e.embedding.shape() == Shape{6, 4, 3});
  CHECK_THROWS_AS(extract(t.constant(Tensor<double>({10, 16, 3})), fv), ShapeError);
  CHECK_THROWS_AS(extract(t.constant(Tensor<double>({16, 16, 1})), fv), ShapeError);
}

TEST_CASE("featnet initialization is seeded, scaled and named") {
  const auto a = init_featnet<float>(small_featnet(), 7);
  const auto b = init_featnet<float>(small_featnet(), 7);
  const auto c = init_featnet<float>(small_featnet(), 8);
  CHECK(a.blocks[0].depthwise.value == b.blocks[0].depthwise.value);
  CHECK_FALSE(a.blocks[0].depthwise.value == c.blocks[0].depthwise.value);
  CHECK(a.blocks[0].stride == 2);
  CHECK(a.blocks[1].stride == 2);
  CHECK(a.blocks[2].stride == 1);
  CHECK(a.embedding.pointwise.name == "featnet.embedding.pointwise");
  for (float v : a.blocks[1].pointwise.value) CHECK(std::abs(v) <= std::sqrt(6.0 / 5.0) + 1e-6);
  for (float v : a.blocks[1].bias.value) CHECK(v == 0.0f);
  FeatNetConfig bad = small_featnet();
  bad.stride = 8;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_featnet();
  bad.depth = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("featnet gradients pass a finite-difference check") {
  auto w = init_featnet<double>(small_featnet(), 3);
  Rng rng(3);
  const auto frame = random_tensor<double>({8, 8, 3}, rng);
  auto f = [&](Tape<double>& t) {
    const auto e = extract(t.constant(frame), bind(t, w));
    return add(sum(square(e.embedding)), sum(e.features));
  };
  CHECK(grad_check<double>(f, w.parameters()) < 1e-6);
}

TEST_CASE("extract increments the call counter once per frame") {
  auto w = init_featnet<float>(small_featnet(), 0);
  Tape<float> t;
  const auto fv = bind_frozen(t, w);
  counters().reset();
  for (int i = 0; i < 3; ++i) extract(t.constant(Tensor<float>({8, 8, 3})), fv);
  CHECK(counters().featnet_extract == 3);
}

TEST_CASE("segment_step produces a per-pixel distribution over objects") {
  Rng rng(5);
  auto hw = init_head<double>(small_head(), 5, 2);
  Tape<double> t;
  const auto hv = bind_frozen(t, hw);
  const std::vector<int> objs{0, 2, 9};
  Var<double> feats = t.constant(random_tensor<double>({3, 4, 5}, rng));
  Var<double> g = t.constant(random_tensor<double>({3, 3, 4}, rng));
  Var<double> l = t.constant(random_tensor<double>({3, 3, 4}, rng));
  Var<double> p = t.constant(random_tensor<double>({3, 4, 3}, rng));
  counters().reset();
  const auto post = segment_step(feats, {g, objs}, {l, objs}, {p, objs}, hv);
  CHECK(counters().head_forward == 3);
  CHECK(post.objects == objs);
  REQUIRE(post.probs.shape() == Shape{3, 4, 3});
  for (Index i = 0; i < 12; ++i) {
    const double* q = post.probs.value().data() + i * 3;
    CHECK(q[0] + q[1] + q[2] == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(segment_step(feats, {g, objs}, {l, {0, 2, 8}}, {p, objs}, hv), ContractError);
  CHECK_THROWS_AS(segment_step(feats, {g, objs}, {l, objs}, {t.constant(Tensor<double>({3, 4, 2})), objs}, hv),
                  ShapeError);
}

TEST_CASE("segment_step is equivariant to object permutations") {
  Rng rng(6);
  auto hw = init_head<double>(small_head(), 5, 4);
  const Index O = 4, H = 3, W = 5;
  const auto feats = random_tensor<double>({H, W, 5}, rng);
  const auto g = random_tensor<double>({O, H, W}, rng);
  const auto l = random_tensor<double>({O, H, W}, rng);
  const auto p = random_tensor<double>({H, W, O}, rng);
  const std::vector<int> objs{0, 1, 2, 3};
  std::vector<Index> perm{2, 0, 3, 1};
  Tensor<double> gp({O, H, W}), lp({O, H, W}), pp({H, W, O});
  for (Index o = 0; o < O; ++o)
    for (Index i = 0; i < H * W; ++i) {
      gp[o * H * W + i] = g[perm[static_cast<std::size_t>(o)] * H * W + i];
      lp[o * H * W + i] = l[perm[static_cast<std::size_t>(o)] * H * W + i];
      pp[i * O + o] = p[i * O + perm[static_cast<std::size_t>(o)]];
    }
  Tape<double> t;
  const auto hv = bind_frozen(t, hw);
  const auto a = segment_step(t.constant(feats), {t.constant(g), objs}, {t.constant(l), objs},
                              {t.constant(p), objs}, hv);
  const auto b = segment_step(t.constant(feats), {t.constant(gp), objs}, {t.constant(lp), objs},
                              {t.constant(pp), objs}, hv);
  for (Index i = 0; i < H * W; ++i)
    for (Index o = 0; o < O; ++o)
      CHECK(b.probs.value()[i * O + o] ==
            doctest::Approx(a.probs.value()[i * O + perm[static_cast<std::size_t>(o)]]).epsilon(1e-12));
}

TEST_CASE("head gradients pass a finite-difference check") {
  Rng rng(7);
  auto hw = init_head<double>(small_head(), 2, 9);
  const auto feats = random_tensor<double>({3, 3, 2}, rng);
  Parameter<double> g("g", random_tensor<double>({2, 3, 3}, rng));
  const auto l = random_tensor<double>({2, 3, 3}, rng);
  const auto p = random_tensor<double>({3, 3, 2}, rng);
  auto params = hw.parameters();
  params.push_back(&g);
  auto f = [&](Tape<double>& t) {
    const auto post = segment_step(t.constant(feats), {t.parameter(g), {0, 1}}, {t.constant(l), {0, 1}},
                                   {t.constant(p), {0, 1}}, bind(t, hw));
    return sum(square(post.probs));
  };
  CHECK(grad_check<double>(f, params) < 1e-6);
}

TEST_CASE("bootstrap count rounds up and clamps") {
  CHECK(bootstrap_count(0.15, 20) == 3);
  CHECK(bootstrap_count(0.15, 21) == 4);
  CHECK(bootstrap_count(0.15, 1) == 1);
  CHECK(bootstrap_count(1.0, 7) == 7);
  CHECK(bootstrap_count(0.01, 10) == 1);
  LossConfig bad;
  bad.bootstrap_fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("bootstrapped cross entropy averages the hardest pixels") {
  Tape<double> t;
  // four pixels, two objects; target = object slot per pixel
  Var<double> probs = t.input(Tensor<double>({1, 4, 2}, {0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.3, 0.7}));
  const LabelMap target(LabelTensor({1, 4}, {0, 0, 1, 1}), {0, 1});
  // per-pixel CE: -log .9, -log .2, -log .5, -log .7; hardest half = pixels 1, 2
  LossConfig cfg;
  cfg.bootstrap_fraction = 0.5;
  Var<double> loss = bootstrapped_ce<double>({probs, {0, 1}}, target, cfg);
  CHECK(loss.value()[0] == doctest::Approx((-std::log(0.2) - std::log(0.5)) / 2.0).epsilon(1e-14));
  t.backward(loss);
  const auto g = t.grad_of(probs);
  CHECK(g == Tensor<double>({1, 4, 2}, {0, 0, -1.0 / (2 * 0.2), 0, 0, -1.0 / (2 * 0.5), 0, 0}));

  cfg.bootstrap_fraction = 1.0;
  Tape<double> t2;
  Var<double> all = bootstrapped_ce<double>({t2.constant(probs.value()), {0, 1}}, target, cfg);
  CHECK(all.value()[0] ==
        doctest::Approx((-std::log(0.9) - std::log(0.2) - std::log(0.5) - std::log(0.7)) / 4.0).epsilon(1e-14));
  CHECK_THROWS_AS(bootstrapped_ce<double>({probs, {0, 2}}, target, cfg), ContractError);
}

TEST_CASE("a perfect posterior has zero loss and zero gradient") {
  Tape<double> t;
  Var<double> probs = t.input(Tensor<double>({1, 2, 2}, {1, 0, 0, 1}));
  const LabelMap target(LabelTensor({1, 2}, {0, 3}), {0, 3});
  Var<double> loss = bootstrapped_ce<double>({probs, {0, 3}}, target, LossConfig{});
  CHECK(loss.value()[0] == 0.0);
}

TEST_CASE("momentum SGD follows the classical recurrence") {
  Parameter<double> p("p", Tensor<double>({2}, {1.0, -1.0}));
  SgdMomentum<double> opt;
  opt.lr = 0.1;
  opt.momentum = 0.5;
  p.grad = Tensor<double>({2}, {1.0, 2.0});
  opt.step({&p});
  CHECK(p.value[0] == doctest::Approx(0.9));
  CHECK(p.value[1] == doctest::Approx(-1.2));
  p.grad = Tensor<double>({2}, {1.0, 2.0});
  opt.step({&p});
  // v = 0.5 * 1 + 1 = 1.5; 0.9 - 0.15
  CHECK(p.value[0] == doctest::Approx(0.75));
  CHECK(p.value[1] == doctest::Approx(-1.5));
  p.grad[0] = std::nan("");
  const Tensor<double> before = p.value;
  CHECK_THROWS_AS(opt.step({&p}), NumericError);
  CHECK(p.value == before);
}
