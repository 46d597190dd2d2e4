#include "embvos/cli.hpp"

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "embvos/config.hpp"
#include "embvos/dataset.hpp"
#include "embvos/inference.hpp"
#include "embvos/metrics.hpp"
#include "embvos/parallel.hpp"
#include "embvos/pipeline_check.hpp"

namespace embvos {

namespace {

std::string format_loss(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << v;
  return os.str();
}

bool has_indexed_pngs(const fs::path& dir) { return fs::is_regular_file(dir / "00000.png"); }

/// Masks of a sequence given as a directory of NNNNN.png files or as a
/// sequence directory with a masks/ subdirectory.
std::vector<LabelTensor> load_mask_dir(const fs::path& dir) {
  if (has_indexed_pngs(dir)) return load_masks(dir);
  if (fs::is_directory(dir / "masks")) return load_masks(dir / "masks");
  throw IoError("'" + dir.string() + "' holds neither NNNNN.png masks nor a masks/ directory");
}

bool is_mask_sequence(const fs::path& dir) {
  return has_indexed_pngs(dir) || fs::is_regular_file(dir / "masks" / "00000.png");
}

/// (name, directory) pairs of every sequence under an eval root.
std::vector<std::pair<std::string, fs::path>> mask_sequences(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("missing directory '" + root.string() + "'");
  if (is_mask_sequence(root)) return {{root.filename().string(), root}};
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && is_mask_sequence(e.path())) out.emplace_back(e.path().filename().string(), e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("'" + root.string() + "' contains no mask sequences");
  return out;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
  const SynthSpec spec = load_synth_spec(spec_path);
  const auto dirs = generate_synthetic(spec, out_dir);
  for (const auto& d : dirs) out << "wrote " << d.string() << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, std::string data, std::string ckpt, std::optional<Index> steps,
              std::ostream& out) {
  RunConfig cfg = config_path.empty() ? RunConfig::full_scale_defaults() : load_run_config(config_path);
  if (steps) cfg.train.steps = *steps;
  if (data.empty()) data = cfg.data_path;
  if (ckpt.empty()) ckpt = cfg.out_path;
  if (data.empty()) throw ConfigError("train: no dataset given (--data or paths.data)");
  if (ckpt.empty()) throw ConfigError("train: no output given (--out or paths.out)");
  cfg.validate();

  const std::vector<Video> videos = load_dataset(data);
  for (const auto& v : videos)
    if (v.masks.size() != v.frames.size()) throw IoError("train: sequence '" + v.name + "' has no masks");

  Trainer<float> trainer(cfg.train, cfg.featnet, cfg.head);
  trainer.run(videos, [&out](Index step, double loss) {
    out << "step=" << step << " loss=" << format_loss(loss) << "\n" << std::flush;
  });
  Model<float> model{trainer.featnet(), trainer.head(), cfg.train.ablation};
  save_checkpoint(ckpt, model, to_json(cfg));
  out << "checkpoint " << ckpt << "\n";
  return kExitOk;
}

int cmd_infer(const std::string& ckpt_dir, const fs::path& seq, const std::string& first_mask,
              const fs::path& out_dir, bool overlays, std::optional<Index> window_k, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt_dir);
  WindowSpec window;
  if (window_k) {
    window.k = *window_k;
  } else if (ck.config.contains("window") && ck.config["window"].contains("k")) {
    window.k = ck.config["window"]["k"].get<Index>();
  }
  window.validate();

  const fs::path frames_dir = fs::is_directory(seq / "frames") ? seq / "frames" : seq;
  const std::vector<Frame> frames = load_frames(frames_dir);
  const LabelTensor mask0 = read_mask_png(first_mask);
  if (mask0.dim(0) != frames.front().dim(0) || mask0.dim(1) != frames.front().dim(1))
    throw ShapeError("infer: first mask " + shape_string(mask0.shape()) + " does not match frame " +
                     shape_string(frames.front().shape()));

  const std::vector<LabelTensor> masks = infer_video(frames, mask0, ck.model, window);
  save_masks(out_dir, masks);
  if (overlays) {
    for (std::size_t t = 0; t < masks.size(); ++t) {
      char name[16];
      std::snprintf(name, sizeof name, "%05zu.png", t);
      write_rgb_png(out_dir / "overlays" / name, overlay(frames[t], masks[t]));
    }
  }
  out << "wrote " << masks.size() << " masks to " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const fs::path& pred_root, const fs::path& gt_root, const fs::path& report, std::string csv,
             bool include_first, double tol_frac, std::ostream& out) {
  EvalOptions opt;
  opt.include_first = include_first;
  opt.tol_frac = tol_frac;
  const auto gts = mask_sequences(gt_root);
  std::vector<SequenceReport> seqs;
  const bool single = gts.size() == 1 && gts.front().second == gt_root;
  for (const auto& [name, dir] : gts) {
    const fs::path pdir = single ? pred_root : pred_root / name;
    seqs.push_back(evaluate_sequence(load_mask_dir(pdir), load_mask_dir(dir), opt, name));
  }
  const EvalReport r = summarize(std::move(seqs), opt);
  write_file_atomic(report, r.to_json());
  if (csv.empty()) csv = fs::path(report).replace_extension(".csv").string();
  write_file_atomic(csv, r.to_csv());
  out << std::setprecision(6) << std::fixed << "J=" << r.j_mean << " F=" << r.f_mean << " J&F=" << r.jf_mean << "\n";
  return kExitOk;
}

int cmd_gradcheck(Index size, std::uint64_t seed, double eps, std::ostream& out) {
  const GradCheckReport r = pipeline_grad_check(size, seed, eps);
  out << std::setprecision(3) << std::scientific << "max_relative_error=" << r.max_relative_error
      << " checked=" << r.checked << " worst=" << r.worst_parameter << "[" << r.worst_index << "]\n";
  const bool ok = r.max_relative_error < 1e-4;
  out << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? kExitOk : kExitRuntime;
}

int cmd_bench(Index h, Index w, Index d, Index k, Index trials, Index objects, std::ostream& out) {
  const MatchBenchReport r = bench_matching(h, w, d, k, trials, objects);
  nlohmann::ordered_json j;
  j["height"] = r.height;
  j["width"] = r.width;
  j["dim"] = r.dim;
  j["window"] = r.window;
  j["trials"] = r.trials;
  j["objects"] = r.objects;
  j["local_match_median_ms"] = r.local_ns / 1e6;
  j["global_prev_match_median_ms"] = r.global_prev_ns / 1e6;
  j["speedup"] = r.speedup;
  j["local_candidates_per_pixel"] = r.local_candidates_per_pixel;
  j["global_candidates_per_pixel"] = r.global_candidates_per_pixel;
  out << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Embedding-matching video object segmentation", "embvos"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads; 1 gives bit-reproducible results")
      ->check(CLI::PositiveNumber);

  std::string spec_path, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate synthetic videos");
  synth->add_option("--spec", spec_path, "Synthetic spec JSON")->required();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  std::string config_path, data, ckpt;
  std::optional<Index> steps;
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Run config JSON");
  train->add_option("--data", data, "Dataset root");
  train->add_option("--out", ckpt, "Checkpoint directory");
  train->add_option("--steps", steps, "Override train.steps")->check(CLI::NonNegativeNumber);

  std::string infer_ckpt, seq, first_mask, infer_out;
  bool overlays = false;
  std::optional<Index> window_k;
  auto* infer = app.add_subcommand("infer", "Segment a sequence from its first-frame mask");
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint directory")->required();
  infer->add_option("--seq", seq, "Sequence directory (or its frames/ directory)")->required();
  infer->add_option("--first-mask", first_mask, "First-frame mask PNG")->required();
  infer->add_option("--out", infer_out, "Output mask directory")->required();
  infer->add_flag("--overlays", overlays, "Also write overlay PNGs under <out>/overlays");
  infer->add_option("--window", window_k, "Override the local matching radius k");

  std::string pred, gt, report, csv;
  bool include_first = false;
  double tol_frac = 0.008;
  auto* eval = app.add_subcommand("eval", "Score predicted masks against ground truth");
  eval->add_option("--pred", pred, "Predicted masks (sequence or root of sequences)")->required();
  eval->add_option("--gt", gt, "Ground-truth masks (sequence or root of sequences)")->required();
  eval->add_option("--report", report, "JSON report path")->required();
  eval->add_option("--csv", csv, "CSV table path (default: report path with .csv)");
  eval->add_flag("--include-first", include_first, "Score frame 0 as well");
  eval->add_option("--tol-frac", tol_frac, "Boundary tolerance as a fraction of the diagonal")
      ->check(CLI::PositiveNumber);

  Index gc_size = 8;
  std::uint64_t gc_seed = 0;
  double gc_eps = 1e-6;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the training loss");
  gradcheck->add_option("--size", gc_size, "Stride-grid extent of the toy problem")->check(CLI::Range(2, 64));
  gradcheck->add_option("--seed", gc_seed, "Seed of the toy problem");
  gradcheck->add_option("--eps", gc_eps, "Central-difference step")->check(CLI::Range(1e-7, 1e-4));

  Index bh = 120, bw = 120, bd = 32, bk = 15, btrials = 20, bobjects = 3;
  auto* bench = app.add_subcommand("bench-matching", "Time local_match against global_prev_match");
  bench->add_option("--height", bh, "Grid height")->check(CLI::PositiveNumber);
  bench->add_option("--width", bw, "Grid width")->check(CLI::PositiveNumber);
  bench->add_option("--dim", bd, "Embedding dimension")->check(CLI::PositiveNumber);
  bench->add_option("--window", bk, "Window radius k")->check(CLI::PositiveNumber);
  bench->add_option("--trials", btrials, "Timed trials")->check(CLI::PositiveNumber);
  bench->add_option("--objects", bobjects, "Object count including background")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitValidation;
  }

  set_num_threads(threads);
  try {
    if (*synth) return cmd_synth(spec_path, synth_out, out);
    if (*train) return cmd_train(config_path, data, ckpt, steps, out);
    if (*infer) return cmd_infer(infer_ckpt, seq, first_mask, infer_out, overlays, window_k, out);
    if (*eval) return cmd_eval(pred, gt, report, csv, include_first, tol_frac, out);
    if (*gradcheck) return cmd_gradcheck(gc_size, gc_seed, gc_eps, out);
    if (*bench) return cmd_bench(bh, bw, bd, bk, btrials, bobjects, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace embvos
