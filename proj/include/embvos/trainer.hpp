#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "embvos/augment.hpp"
#include "embvos/dynhead.hpp"
#include "embvos/featnet.hpp"
#include "embvos/matching.hpp"
#include "embvos/objective.hpp"
#include "embvos/video.hpp"

namespace embvos {

/// Which matching cues feed the head. Disabled cues are replaced by neutral
/// constants (distance 1, probability 1/|O|) so the head layout never changes.
struct AblationConfig {
  bool use_ff_gm = true;
  bool use_pf_lm = true;
  bool use_pf_gm = false;
  bool use_pfp = true;

  void validate() const {
    if (use_pf_lm && use_pf_gm) throw ConfigError("use_pf_lm and use_pf_gm are mutually exclusive");
  }
};

struct TrainConfig {
  Index steps = 200000;
  Index batch_videos = 3;
  Index crop = 464;
  Index subsample_refs = 1024;
  Index window_k = 15;
  std::uint64_t seed = 0;
  double scale_min = 0.7;
  double scale_max = 1.3;
  double flip_probability = 0.5;
  Index log_every = 1;
  AblationConfig ablation;
  LossConfig loss;
  double lr = 0.0007;
  double momentum = 0.9;

  void validate() const {
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch_videos < 1) throw ConfigError("batch_videos must be >= 1");
    if (crop < 4 || crop % 4 != 0) throw ConfigError("crop must be a positive multiple of 4, got " + std::to_string(crop));
    if (subsample_refs < 1) throw ConfigError("subsample_refs must be >= 1");
    if (window_k < 1) throw ConfigError("window_k must be >= 1");
    if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ConfigError("scale range must satisfy 0 < min <= max");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ConfigError("flip_probability must lie in [0, 1]");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    ablation.validate();
    loss.validate();
  }

  AugmentConfig augment() const { return {crop, scale_min, scale_max, flip_probability}; }
};

/// Reference frame plus an adjacent (previous, current) pair of one video.
struct TrainSample {
  FrameMask reference;
  FrameMask previous;
  FrameMask current;
  Index reference_index = 0;
  Index previous_index = 0;
};

/// The reference index is drawn uniformly over all frames, then the pair
/// start uniformly over the length-1 adjacent pairs. The reference may
/// coincide with either frame of the pair.
inline TrainSample sample_triplet(const Video& video, Rng& rng) {
  if (video.length() < 2) throw ContractError("sample_triplet: video '" + video.name + "' has fewer than 2 frames");
  const Index ref = rng.uniform_int(video.length());
  const Index prev = rng.uniform_int(video.length() - 1);
  auto fm = [&video](Index i) {
    return FrameMask{video.frames[static_cast<std::size_t>(i)], video.masks[static_cast<std::size_t>(i)]};
  };
  return {fm(ref), fm(prev), fm(prev + 1), ref, prev};
}

/// Exact one-hot posterior [H, W, |O|] of a label map.
template <typename T>
Tensor<T> onehot_prev(const LabelMap& mask) {
  const Index O = mask.num_objects();
  Tensor<T> out({mask.height(), mask.width(), O});
  const std::vector<Index> slot = mask.object_slots();
  for (std::size_t i = 0; i < slot.size(); ++i) {
    if (slot[i] < 0) throw ContractError("onehot_prev: label " + std::to_string(mask.labels.data()[i]) + " is unknown");
    out.data()[static_cast<Index>(i) * O + slot[i]] = T(1);
  }
  return out;
}

/// Makes every object of the full-resolution mask survive downsampling: an
/// object that no grid center hits claims the cell of its first pixel.
inline LabelTensor grid_labels(const LabelTensor& full, Index stride) {
  LabelTensor grid = downsample_labels(full, stride);
  LabelMap full_map = LabelMap::from_labels(full);
  LabelMap grid_map = LabelMap::from_labels(grid);
  for (const int id : full_map.objects) {
    if (grid_map.slot_of(id) >= 0) continue;
    for (Index i = 0; i < full.size(); ++i)
      if (full.data()[i] == id) {
        const Index y = i / full.dim(1), x = i % full.dim(1);
        grid(y / stride, x / stride) = id;
        break;
      }
  }
  return grid;
}

/// Labels restricted to an object set; ids outside it become background.
inline LabelMap restrict_labels(const LabelTensor& grid, const std::vector<int>& objects) {
  LabelTensor out = grid;
  for (auto& v : out)
    if (!std::binary_search(objects.begin(), objects.end(), static_cast<int>(v))) v = 0;
  return LabelMap(std::move(out), objects);
}

/// A training sample converted to the working precision with its masks on
/// the stride-4 grid. The object set is taken from the reference frame.
template <typename T>
struct PreparedSample {
  Tensor<T> reference, previous, current;
  LabelMap reference_labels, previous_labels, current_labels;
};

template <typename T>
PreparedSample<T> prepare_sample(const TrainSample& s, Index stride = 4) {
  PreparedSample<T> p;
  p.reference = s.reference.frame.cast<T>();
  p.previous = s.previous.frame.cast<T>();
  p.current = s.current.frame.cast<T>();
  p.reference_labels = LabelMap::from_labels(grid_labels(s.reference.mask, stride));
  p.previous_labels = restrict_labels(downsample_labels(s.previous.mask, stride), p.reference_labels.objects);
  p.current_labels = restrict_labels(downsample_labels(s.current.mask, stride), p.reference_labels.objects);
  return p;
}

/// Embeddings of the three frames of a sample, exposed for gradient probes.
template <typename T>
struct SampleTrace {
  Var<T> loss;
  Var<T> reference_embedding, previous_embedding, current_embedding;
  ProbabilityVar<T> posterior;
};

struct SampleOptions {
  AblationConfig ablation;
  WindowSpec window;
  std::optional<Index> subsample;
  std::uint64_t subsample_seed = 0;
  LossConfig loss;
};

/// Forward pass of one sample: extract all three frames, match per the
/// ablation toggles, run the head and score the current frame. The previous
/// frame is conditioned on its ground truth.
template <typename T>
SampleTrace<T> sample_loss(Tape<T>& tape, const FeatNetVars<T>& fv, const HeadVars<T>& hv,
                           const PreparedSample<T>& s, const SampleOptions& opt) {
  const Extracted<T> ref = extract(tape.constant(s.reference), fv);
  const Extracted<T> prev = extract(tape.constant(s.previous), fv);
  const Extracted<T> cur = extract(tape.constant(s.current), fv);
  const std::vector<int>& objects = s.reference_labels.objects;
  const Index O = static_cast<Index>(objects.size());
  const Index H = cur.embedding.shape()[0], W = cur.embedding.shape()[1];

  Var<T> global = opt.ablation.use_ff_gm
                      ? global_match(cur.embedding, ref.embedding, s.reference_labels, opt.subsample, opt.subsample_seed)
                      : tape.constant(Tensor<T>({O, H, W}, T(1)));
  Var<T> local;
  if (opt.ablation.use_pf_lm) {
    counters().local_match_ground_truth++;
    local = local_match(cur.embedding, prev.embedding, s.previous_labels, opt.window);
  } else if (opt.ablation.use_pf_gm) {
    local = global_prev_match(cur.embedding, prev.embedding, s.previous_labels);
  } else {
    local = tape.constant(Tensor<T>({O, H, W}, T(1)));
  }
  Var<T> prev_probs = opt.ablation.use_pfp ? tape.constant(onehot_prev<T>(s.previous_labels))
                                           : tape.constant(Tensor<T>({H, W, O}, T(1) / static_cast<T>(O)));
  ProbabilityVar<T> post = segment_step(cur.features, {global, objects}, {local, objects}, {prev_probs, objects}, hv);
  Var<T> loss = bootstrapped_ce(post, s.current_labels, opt.loss);
  return {loss, ref.embedding, prev.embedding, cur.embedding, post};
}

/// Mean of the per-sample losses, summed in batch order.
template <typename T>
Var<T> batch_loss(Tape<T>& tape, const FeatNetVars<T>& fv, const HeadVars<T>& hv,
                  const std::vector<PreparedSample<T>>& batch, const std::vector<SampleOptions>& opts) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  Var<T> total = sample_loss(tape, fv, hv, batch[0], opts[0]).loss;
  for (std::size_t i = 1; i < batch.size(); ++i) total = add(total, sample_loss(tape, fv, hv, batch[i], opts[i]).loss);
  return scale(total, T(1) / static_cast<T>(batch.size()));
}

/// Forward, backward and one momentum step over a prepared batch.
template <typename T>
double train_step(const std::vector<PreparedSample<T>>& batch, const std::vector<SampleOptions>& opts,
                  FeatNetWeights<T>& featnet, HeadWeights<T>& head, SgdMomentum<T>& optim) {
  std::vector<Parameter<T>*> params = featnet.parameters();
  for (Parameter<T>* p : head.parameters()) params.push_back(p);
  for (Parameter<T>* p : params) p->zero_grad();
  Tape<T> tape;
  const FeatNetVars<T> fv = bind(tape, featnet);
  const HeadVars<T> hv = bind(tape, head);
  Var<T> loss = batch_loss(tape, fv, hv, batch, opts);
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) throw NumericError("train_step: non-finite loss");
  tape.backward(loss);
  optim.step(params);
  return value;
}

/// Owns the weights, optimizer and sampling stream of a training run.
template <typename T = float>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const FeatNetConfig& feat_cfg, const HeadConfig& head_cfg)
      : cfg_(cfg),
        featnet_(init_featnet<T>(feat_cfg, cfg.seed)),
        head_(init_head<T>(head_cfg, feat_cfg.backbone_channels, cfg.seed + 1)),
        rng_(cfg.seed + 2) {
    cfg_.validate();
    optim_.lr = cfg.lr;
    optim_.momentum = cfg.momentum;
  }

  /// Draws a batch of videos and samples, augments them and runs one step.
  double step(const std::vector<Video>& videos) {
    if (videos.empty()) throw ContractError("Trainer::step: no videos");
    std::vector<Index> picks;
    const auto n = static_cast<Index>(videos.size());
    if (n >= cfg_.batch_videos) {
      picks = rng_.sample_without_replacement(n, cfg_.batch_videos);
    } else {
      for (Index i = 0; i < cfg_.batch_videos; ++i) picks.push_back(rng_.uniform_int(n));
    }
    std::vector<PreparedSample<T>> batch;
    std::vector<SampleOptions> opts;
    for (Index v : picks) {
      TrainSample s = sample_triplet(videos[static_cast<std::size_t>(v)], rng_);
      const AugmentParams a = sample_augment(rng_, cfg_.augment(), s.current.frame.dim(0), s.current.frame.dim(1));
      s.reference = apply_augment(s.reference, a);
      s.previous = apply_augment(s.previous, a);
      s.current = apply_augment(s.current, a);
      batch.push_back(prepare_sample<T>(s));
      opts.push_back(options(rng_.next()));
    }
    const double loss = train_step(batch, opts, featnet_, head_, optim_);
    ++steps_done_;
    return loss;
  }

  /// Runs cfg.steps steps; `log` receives every log_every-th (step, loss).
  std::vector<double> run(const std::vector<Video>& videos,
                          const std::function<void(Index, double)>& log = nullptr) {
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg_.steps));
    for (Index i = 0; i < cfg_.steps; ++i) {
      losses.push_back(step(videos));
      if (log && (steps_done_ % cfg_.log_every == 0 || i + 1 == cfg_.steps)) log(steps_done_, losses.back());
    }
    return losses;
  }

  SampleOptions options(std::uint64_t subsample_seed) const {
    SampleOptions o;
    o.ablation = cfg_.ablation;
    o.window = WindowSpec{cfg_.window_k};
    o.subsample = cfg_.subsample_refs;
    o.subsample_seed = subsample_seed;
    o.loss = cfg_.loss;
    return o;
  }

  FeatNetWeights<T>& featnet() { return featnet_; }
  HeadWeights<T>& head() { return head_; }
  const TrainConfig& config() const { return cfg_; }
  Index steps_done() const { return steps_done_; }

 private:
  TrainConfig cfg_;
  FeatNetWeights<T> featnet_;
  HeadWeights<T> head_;
  SgdMomentum<T> optim_;
  Rng rng_;
  Index steps_done_ = 0;
};

}  // namespace embvos
