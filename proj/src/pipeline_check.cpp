#include "embvos/pipeline_check.hpp"

namespace embvos {

namespace {

/// Frame with a soft color ramp and two solid rectangles; returns its mask.
FrameMask toy_frame(Index size, Index shift, Rng& rng) {
  Frame f({size, size, 3});
  LabelTensor m({size, size});
  const Index a = size / 4, b = size / 2;
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      int id = 0;
      if (y >= a && y < a + b / 2 && x >= a + shift && x < a + shift + b / 2) id = 1;
      if (y >= b && y < b + b / 2 && x >= b - shift && x < b - shift + b / 2) id = 2;
      m(y, x) = id;
      for (Index c = 0; c < 3; ++c) {
        const double base = id == 0 ? 0.2 + 0.3 * double(x + c) / double(size) : (id == 1 ? 0.8 : 0.5) - 0.2 * double(c);
        f(y, x, c) = static_cast<float>(base + 0.05 * rng.normal());
      }
    }
  return {f, m};
}

}  // namespace

ToyProblem make_toy_problem(Index grid, std::uint64_t seed, const AblationConfig& ablation) {
  if (grid < 2) throw ContractError("toy problem grid must be >= 2");
  FeatNetConfig fc;
  fc.backbone_channels = 6;
  fc.embedding_dim = 4;
  fc.depth = 3;
  HeadConfig hc;
  hc.channels = 8;
  hc.kernel = 3;
  hc.layers = 2;

  ToyProblem p;
  p.featnet = init_featnet<double>(fc, seed);
  p.head = init_head<double>(hc, fc.backbone_channels, seed + 1);
  Rng rng(seed + 2);
  const Index size = grid * 4;
  TrainSample s;
  s.reference = toy_frame(size, 0, rng);
  s.previous = toy_frame(size, 1, rng);
  s.current = toy_frame(size, 2, rng);
  s.previous_index = 1;
  p.sample = prepare_sample<double>(s);
  p.options.ablation = ablation;
  p.options.window = WindowSpec{2};
  p.options.subsample = std::nullopt;
  return p;
}

GradCheckReport pipeline_grad_check(Index grid, std::uint64_t seed, double eps) {
  ToyProblem p = make_toy_problem(grid, seed);
  std::vector<Parameter<double>*> params = p.featnet.parameters();
  for (auto* q : p.head.parameters()) params.push_back(q);
  auto loss = [&p](Tape<double>& tape) {
    const FeatNetVars<double> fv = bind(tape, p.featnet);
    const HeadVars<double> hv = bind(tape, p.head);
    return sample_loss(tape, fv, hv, p.sample, p.options).loss;
  };
  return grad_check_report<double>(loss, params, eps);
}

}  // namespace embvos
