#include "doctest.h"

#include <cmath>

#include "embvos/gradcheck.hpp"
#include "embvos/matching.hpp"
#include "embvos/ops.hpp"
#include "support.hpp"

using namespace embvos;
using testing::oracle_match;
using testing::random_labels;
using testing::random_tensor;
using testing::same_as_oracle;

TEST_CASE("embedding distance closed form and endpoints") {
  for (int i = 0; i <= 1000; ++i) {
    const double s = 50.0 * i / 1000.0;
    const double d = kernels::embedding_distance_from_sq(s);
    CHECK(std::abs(d - std::tanh(s / 2.0)) < 1e-12);
  }
  CHECK(kernels::embedding_distance_from_sq(0.0) == 0.0);
  CHECK(kernels::embedding_distance_from_sq(800.0) == 1.0);
  const std::vector<double> a{1.0, 2.0}, b{1.0, 2.0}, c{1.5, 1.0};
  CHECK(embedding_distance<double>(a, b) == 0.0);
  CHECK(embedding_distance<double>(a, c) == doctest::Approx(std::tanh(1.25 / 2.0)));
  CHECK_THROWS_AS(embedding_distance<double>(a, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("embedding distance is monotone in the squared norm") {
  double prev = -1.0;
  for (int i = 0; i <= 2000; ++i) {
    const double d = kernels::embedding_distance_from_sq(i * 0.01);
    CHECK(d >= prev);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
    prev = d;
  }
}

TEST_CASE("pairwise squared distances agree with direct sums") {
  Rng rng(2);
  const auto a = random_tensor<double>({5, 7}, rng);
  const auto b = random_tensor<double>({4, 7}, rng);
  const auto s = pairwise_sqdist(a, b);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 4; ++j)
      CHECK(s(i, j) == doctest::Approx(squared_distance(a.data() + i * 7, b.data() + j * 7, 7)).epsilon(1e-12));
}

TEST_CASE("global, global-prev and local matching equal the brute-force oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const Index H = 1 + rng.uniform_int(10), W = 1 + rng.uniform_int(10), D = 1 + rng.uniform_int(8);
    std::vector<int> ids{0};
    const Index extra = rng.uniform_int(4);
    for (Index i = 0; i < extra; ++i) ids.push_back(static_cast<int>(3 * i + 1));
    if (static_cast<Index>(ids.size()) > H * W) ids.resize(static_cast<std::size_t>(H * W));
    const auto cur = random_tensor<float>({H, W, D}, rng);
    const auto ref = random_tensor<float>({H, W, D}, rng);
    const LabelMap labels = testing::random_labels(H, W, ids, rng);
    CHECK(same_as_oracle(global_match(cur, ref, labels), oracle_match(cur, ref, labels, -1)));
    CHECK(same_as_oracle(global_prev_match(cur, ref, labels), oracle_match(cur, ref, labels, -1)));
    const Index k = 1 + rng.uniform_int(4);
    CHECK(same_as_oracle(local_match(cur, ref, labels, WindowSpec{k}), oracle_match(cur, ref, labels, k)));
  }
}

TEST_CASE("duplicate reference embeddings tie to the smallest flat index") {
  Tensor<double> ref({1, 4, 1}, {2.0, 5.0, 2.0, 5.0});
  Tensor<double> cur({1, 4, 1}, {2.0, 5.0, 9.0, 9.0});
  LabelTensor l({1, 4}, {1, 1, 1, 1});
  const LabelMap labels = LabelMap::from_labels(l);
  const auto g = global_prev_match(cur, ref, labels);
  // slot 0 is background (absent) and slot 1 is object 1
  for (Index p = 0; p < 4; ++p) CHECK(g.argmin[static_cast<std::size_t>(p)] == -1);
  CHECK(g.argmin[4] == 0);
  CHECK(g.argmin[5] == 1);
  CHECK(g.argmin[6] == 1);
  CHECK(g.argmin[7] == 1);
  const auto loc = local_match(cur, ref, labels, WindowSpec{3});
  CHECK(loc.argmin == g.argmin);
}

TEST_CASE("objects absent from the previous frame yield constant maps of one") {
  Rng rng(4);
  const auto cur = random_tensor<double>({3, 3, 2}, rng);
  const auto prev = random_tensor<double>({3, 3, 2}, rng);
  LabelTensor l({3, 3});
  const LabelMap labels(l, {0, 5});
  for (const auto& m : {global_prev_match(cur, prev, labels), local_match(cur, prev, labels, WindowSpec{1})})
    for (Index p = 0; p < 9; ++p) {
      CHECK(m.maps(1, p / 3, p % 3) == 1.0);
      CHECK(m.argmin[static_cast<std::size_t>(9 + p)] == -1);
    }
  CHECK_THROWS_AS(global_match(cur, prev, labels), ContractError);
}

TEST_CASE("local matching far from every object pixel yields one") {
  Tensor<double> cur({1, 6, 1}), prev({1, 6, 1});
  LabelTensor l({1, 6}, {1, 0, 0, 0, 0, 0});
  const auto m = local_match(cur, prev, LabelMap::from_labels(l), WindowSpec{2});
  CHECK(m.maps(1, 0, 2) == 0.0);
  CHECK(m.maps(1, 0, 3) == 1.0);
  CHECK(local_candidate_count(6, 6, 0, 0, WindowSpec{2}) == 9);
  CHECK(local_candidate_count(40, 40, 20, 20, WindowSpec{15}) == 961);
  CHECK_THROWS_AS(local_match(cur, prev, LabelMap::from_labels(l), WindowSpec{0}), ContractError);
}

TEST_CASE("degenerate window reproduces global previous-frame matching bitwise") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Index H = 1 + rng.uniform_int(12), W = 1 + rng.uniform_int(12), D = 1 + rng.uniform_int(8);
    const auto cur = random_tensor<float>({H, W, D}, rng);
    const auto prev = random_tensor<float>({H, W, D}, rng);
    const LabelMap labels = random_labels(H, W, {0, 1, 2}, rng);
    const auto g = global_prev_match(cur, prev, labels);
    const auto l = local_match(cur, prev, labels, WindowSpec{std::max(H, W)});
    CHECK(l.maps == g.maps);
    CHECK(l.argmin == g.argmin);
  }
}

TEST_CASE("subsampled global matching is seeded and bounded by the full search") {
  Rng rng(8);
  const auto cur = random_tensor<double>({6, 6, 3}, rng);
  const auto ref = random_tensor<double>({6, 6, 3}, rng);
  const LabelMap labels = random_labels(6, 6, {0, 1}, rng);
  const auto full = global_match(cur, ref, labels);
  const auto a = global_match(cur, ref, labels, Index{4}, 99);
  const auto b = global_match(cur, ref, labels, Index{4}, 99);
  CHECK(a.maps == b.maps);
  for (Index i = 0; i < full.maps.size(); ++i) CHECK(a.maps[i] >= full.maps[i]);
  const auto all = global_match(cur, ref, labels, Index{1000}, 3);
  CHECK(all.maps == full.maps);
}

TEST_CASE("matching results do not depend on the thread count") {
  Rng rng(13);
  const auto cur = random_tensor<float>({40, 37, 6}, rng);
  const auto prev = random_tensor<float>({40, 37, 6}, rng);
  const LabelMap labels = random_labels(40, 37, {0, 1, 2, 3}, rng);
  set_num_threads(1);
  const auto g1 = global_prev_match(cur, prev, labels);
  const auto l1 = local_match(cur, prev, labels, WindowSpec{5});
  set_num_threads(3);
  const auto g3 = global_prev_match(cur, prev, labels);
  const auto l3 = local_match(cur, prev, labels, WindowSpec{5});
  set_num_threads(1);
  CHECK(g1.maps == g3.maps);
  CHECK(l1.maps == l3.maps);
}

TEST_CASE("matching gradients flow through the matched pair only") {
  Rng rng(17);
  Parameter<double> cur("cur", random_tensor<double>({4, 4, 3}, rng, 0.4));
  Parameter<double> ref("ref", random_tensor<double>({4, 4, 3}, rng, 0.4));
  const LabelMap labels = random_labels(4, 4, {0, 1, 2}, rng);
  auto f = [&](Tape<double>& t) {
    Var<double> a = t.parameter(cur), b = t.parameter(ref);
    Var<double> g = global_match(a, b, labels);
    Var<double> l = local_match(a, b, labels, WindowSpec{1});
    Var<double> p = global_prev_match(a, b, labels);
    return add(add(sum(square(g)), sum(l)), sum(p));
  };
  CHECK(grad_check<double>(f, {&cur, &ref}) < 1e-6);

  // A reference pixel that is never anyone's nearest neighbor gets no gradient.
  Tape<double> t;
  Var<double> a = t.parameter(cur), b = t.parameter(ref);
  const auto plain = global_match(cur.value, ref.value, labels);
  t.backward(sum(global_match(a, b, labels)));
  std::vector<bool> used(16, false);
  for (Index q : plain.argmin)
    if (q >= 0) used[static_cast<std::size_t>(q)] = true;
  const Tensor<double> gr = t.grad_of(b);
  for (Index q = 0; q < 16; ++q)
    if (!used[static_cast<std::size_t>(q)])
      for (Index c = 0; c < 3; ++c) CHECK(gr[q * 3 + c] == 0.0);
}

TEST_CASE("matching rejects inconsistent shapes") {
  Tensor<double> a({3, 3, 2}), b({3, 3, 3}), c({4, 3, 2});
  const LabelMap labels = LabelMap::from_labels(LabelTensor({3, 3}));
  CHECK_THROWS_AS(global_match(a, b, labels), ShapeError);
  CHECK_THROWS_AS(global_match(a, c, labels), ShapeError);
  CHECK_THROWS_AS(local_match(a, c, labels, WindowSpec{1}), ShapeError);
}
