#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "embvos/cli.hpp"
#include "embvos/config.hpp"
#include "embvos/dataset.hpp"
#include "support.hpp"

using namespace embvos;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "embvos");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

Model<float> small_model() {
  FeatNetConfig fc;
  fc.backbone_channels = 4;
  fc.embedding_dim = 3;
  HeadConfig hc;
  hc.channels = 4;
  hc.kernel = 3;
  hc.layers = 1;
  return {init_featnet<float>(fc, 1), init_head<float>(hc, 4, 2), AblationConfig{true, false, true, false}};
}

}  // namespace

TEST_CASE("mask PNG round trip preserves ids exactly") {
  const auto dir = testing::temp_dir("mask");
  Rng rng(1);
  LabelTensor m({13, 21});
  for (auto& v : m) v = static_cast<int>(rng.uniform_int(256));
  write_mask_png(dir / "m.png", m);
  CHECK(read_mask_png(dir / "m.png") == m);
  CHECK_THROWS_AS(write_mask_png(dir / "bad.png", LabelTensor({2, 2}, {0, 1, 256, 0})), ContractError);
  CHECK(palette_color(1) == std::array<std::uint8_t, 3>{128, 0, 0});
  CHECK(palette_color(2) == std::array<std::uint8_t, 3>{0, 128, 0});
}

TEST_CASE("RGB PNG round trip is exact for 8-bit values") {
  const auto dir = testing::temp_dir("rgb");
  Frame f({5, 7, 3});
  Rng rng(2);
  for (auto& v : f) v = static_cast<float>(rng.uniform_int(256)) / 255.0f;
  write_rgb_png(dir / "f.png", f);
  CHECK(read_rgb_png(dir / "f.png") == f);
  // identical pixels encode to identical bytes
  write_rgb_png(dir / "g.png", f);
  CHECK(slurp(dir / "f.png") == slurp(dir / "g.png"));
  spit(dir / "junk.png", "not a png");
  CHECK_THROWS_AS(read_rgb_png(dir / "junk.png"), IoError);
  CHECK_THROWS_AS(read_rgb_png(dir / "missing.png"), IoError);
}

TEST_CASE("sequence layout loads frames and masks and rejects gaps") {
  const auto dir = testing::temp_dir("seq");
  SynthSpec spec;
  spec.height = 16;
  spec.width = 12;
  spec.size_min = spec.size_max = 5;
  spec.n_frames = 3;
  spec.n_videos = 2;
  const auto dirs = generate_synthetic(spec, dir);
  REQUIRE(dirs.size() == 2);
  const Video v = load_sequence(dirs[0]);
  const Video ref = synthesize_video(spec, 0);
  CHECK(v.name == "video_000");
  CHECK(v.length() == 3);
  CHECK(v.masks == ref.masks);
  CHECK(v.frames[0].shape() == Shape{16, 12, 3});
  CHECK(load_dataset(dir).size() == 2);
  CHECK(load_dataset(dirs[1]).size() == 1);

  fs::remove(dirs[1] / "frames" / "00001.png");
  CHECK_THROWS_AS(load_sequence(dirs[1]), IoError);
  fs::remove(dirs[0] / "masks" / "00002.png");
  CHECK_THROWS_AS(load_sequence(dirs[0]), IoError);
  CHECK_THROWS_AS(load_sequence(dir / "nothing"), IoError);
}

TEST_CASE("save_masks writes indexed files") {
  const auto dir = testing::temp_dir("save");
  std::vector<LabelTensor> ms{LabelTensor({2, 2}, {0, 1, 2, 3}), LabelTensor({2, 2}, {3, 2, 1, 0})};
  save_masks(dir, ms);
  CHECK(fs::exists(dir / "00000.png"));
  CHECK(load_masks(dir) == ms);
}

TEST_CASE("overlay blends object pixels at half opacity") {
  Frame f({1, 2, 3}, 1.0f);
  const Frame o = overlay(f, LabelTensor({1, 2}, {0, 1}));
  CHECK(o(0, 0, 0) == 1.0f);
  CHECK(o(0, 1, 0) == doctest::Approx(0.5 + 0.5 * 128.0 / 255.0));
  CHECK(o(0, 1, 1) == 0.5f);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto dir = testing::temp_dir("ckpt");
  const Model<float> m = small_model();
  save_checkpoint(dir, m, {{"note", "x"}});
  const Checkpoint c = load_checkpoint(dir);
  CHECK(c.config["note"] == "x");
  CHECK(c.model.ablation.use_pf_gm);
  CHECK_FALSE(c.model.ablation.use_pfp);
  auto a = const_cast<Model<float>&>(m).featnet.parameters();
  auto b = const_cast<Model<float>&>(c.model).featnet.parameters();
  auto ah = const_cast<Model<float>&>(m).head.parameters();
  auto bh = const_cast<Model<float>&>(c.model).head.parameters();
  a.insert(a.end(), ah.begin(), ah.end());
  b.insert(b.end(), bh.begin(), bh.end());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK(a[i]->value == b[i]->value);
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["format_version"] == 1);
  std::size_t expected = 0;
  for (const auto& t : manifest["tensors"]) {
    CHECK(t["offset"].get<std::size_t>() == expected);
    expected += t["nbytes"].get<std::size_t>();
  }
  CHECK(manifest["blob_bytes"].get<std::size_t>() == expected);
}

TEST_CASE("malformed checkpoints raise FormatError") {
  const auto base = testing::temp_dir("ckbad");
  const Model<float> m = small_model();
  auto fresh = [&](const std::string& tag) {
    const auto d = base / tag;
    save_checkpoint(d, m, {});
    return d;
  };
  auto edit = [&](const fs::path& d, const std::function<void(nlohmann::json&)>& fn) {
    auto j = nlohmann::json::parse(slurp(d / "manifest.json"));
    fn(j);
    spit(d / "manifest.json", j.dump());
  };
  {
    const auto d = fresh("version");
    edit(d, [](auto& j) { j["format_version"] = 2; });
    CHECK_THROWS_AS(load_checkpoint(d), FormatError);
  }
  {
    const auto d = fresh("syntax");
    spit(d / "manifest.json", "{ not json");
    CHECK_THROWS_AS(load_checkpoint(d), FormatError);
  }
  {
    const auto d = fresh("shape");
    edit(d, [](auto& j) { j["tensors"][0]["shape"] = {1, 2, 3}; });
    CHECK_THROWS_AS(load_checkpoint(d), FormatError);
  }
  {
    const auto d = fresh("overlap");
    edit(d, [](auto& j) { j["tensors"][1]["offset"] = 0; });
    CHECK_THROWS_AS(load_checkpoint(d), FormatError);
  }
  {
    const auto d = fresh("truncated");
    const std::string blob = slurp(d / "weights.bin");
    spit(d / "weights.bin", blob.substr(0, blob.size() - 4));
    CHECK_THROWS_AS(load_checkpoint(d), FormatError);
  }
  {
    const auto d = fresh("missing");
    edit(d, [](auto& j) { j["tensors"].erase(j["tensors"].size() - 1); });
    CHECK_THROWS_AS(load_checkpoint(d), FormatError);
  }
  {
    const auto d = fresh("dtype");
    edit(d, [](auto& j) { j["tensors"][0]["dtype"] = "f64"; });
    CHECK_THROWS_AS(load_checkpoint(d), FormatError);
  }
  CHECK_THROWS_AS(load_checkpoint(base / "absent"), IoError);
}

TEST_CASE("synthetic generator is deterministic and moves objects with constant velocity") {
  SynthSpec s;
  s.height = 20;
  s.width = 30;
  s.n_objects = 1;
  s.shapes = {"square"};
  s.size_min = s.size_max = 6;
  s.velocities = {{1, 0}};
  s.positions = {{3, 4}};
  s.n_frames = 3;
  const Video v = synthesize_video(s, 0);
  std::vector<double> cx;
  for (const auto& m : v.masks) {
    double sx = 0, n = 0;
    for (Index y = 0; y < 20; ++y)
      for (Index x = 0; x < 30; ++x)
        if (m(y, x) == 1) {
          sx += double(x);
          n += 1;
        }
    CHECK(n == 36);
    cx.push_back(sx / n);
  }
  CHECK(cx[1] - cx[0] == 1.0);
  CHECK(cx[2] - cx[1] == 1.0);
  CHECK(synthesize_video(s, 0).frames == v.frames);

  const auto d1 = testing::temp_dir("syn1"), d2 = testing::temp_dir("syn2");
  generate_synthetic(s, d1);
  generate_synthetic(s, d2);
  CHECK(slurp(d1 / "video_000" / "frames" / "00002.png") == slurp(d2 / "video_000" / "frames" / "00002.png"));
}

TEST_CASE("objects bounce and stay inside the canvas") {
  SynthSpec s;
  s.height = 24;
  s.width = 24;
  s.n_objects = 3;
  s.size_min = 6;
  s.size_max = 9;
  s.speed_max = 3;
  s.n_frames = 60;
  s.overlap = false;
  s.shapes = {"square"};
  const Video v = synthesize_video(s, 2);
  // squares never overlap, so every object keeps its full area
  const auto first = v.masks.front();
  Index a1 = 0;
  for (auto id : first) a1 += id == 1;
  for (const auto& m : v.masks) {
    Index a = 0;
    for (auto id : m) a += id == 1;
    CHECK(a == a1);
  }
  SynthSpec big = s;
  big.size_max = 30;
  CHECK_THROWS_AS(big.validate(), ConfigError);
  SynthSpec crowded = s;
  crowded.n_objects = 40;
  CHECK_THROWS_AS(synthesize_video(crowded, 0), ConfigError);
}

TEST_CASE("synth spec parsing is strict") {
  CHECK(parse_synth_spec(nlohmann::json::parse(R"({"n_objects": 3, "overlap": false})")).n_objects == 3);
  CHECK_THROWS_AS(parse_synth_spec(nlohmann::json::parse(R"({"n_object": 3})")), ConfigError);
  CHECK_THROWS_AS(parse_synth_spec(nlohmann::json::parse(R"({"noise": "high"})")), ConfigError);
  CHECK_THROWS_AS(parse_synth_spec(nlohmann::json::parse(R"({"shapes": ["star"]})")), ConfigError);
}

TEST_CASE("run config defaults and strict validation") {
  const RunConfig d = parse_run_config(nlohmann::json::object());
  CHECK(d.featnet.embedding_dim == 100);
  CHECK(d.train.window_k == 15);
  CHECK(d.train.loss.bootstrap_fraction == 0.15);
  CHECK(d.train.lr == 0.0007);
  CHECK(d.train.momentum == 0.9);
  CHECK(d.train.batch_videos == 3);
  CHECK(d.train.crop == 464);
  CHECK(d.train.subsample_refs == 1024);
  CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"optim": {"learning_rate": 0.1}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"windw": {"k": 3}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"window": {"k": "3"}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"window": {"k": 0}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"ablation": {"use_pf_gm": true}})")), ConfigError);
  const RunConfig desk = load_run_config(std::string(EMBVOS_SOURCE_DIR) + "/configs/desk.json");
  CHECK(parse_run_config(nlohmann::json::parse(to_json(desk).dump())).train.lr == desk.train.lr);
}

TEST_CASE("cli exit codes") {
  CHECK(cli({}).code == 1);
  const auto unknown = cli({"eval", "--bogus"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("Usage") != std::string::npos);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"--help"}).code == 0);
  const auto dir = testing::temp_dir("cli");
  spit(dir / "bad.json", R"({"unknown_key": 1})");
  CHECK(cli({"train", "--config", (dir / "bad.json").string(), "--data", dir.string(), "--out", dir.string()}).code ==
        1);
  CHECK(cli({"synth", "--spec", (dir / "bad.json").string(), "--out", dir.string()}).code == 1);
  CHECK(cli({"infer", "--ckpt", (dir / "none").string(), "--seq", dir.string(), "--first-mask", "x.png", "--out",
             dir.string()})
            .code == 2);
}

TEST_CASE("cli eval on identical predictions reports J&F of one") {
  const auto dir = testing::temp_dir("clieval");
  SynthSpec s;
  s.height = 16;
  s.width = 16;
  s.size_min = s.size_max = 5;
  s.n_frames = 3;
  s.n_videos = 2;
  generate_synthetic(s, dir / "gt");
  const auto r = cli({"eval", "--pred", (dir / "gt").string(), "--gt", (dir / "gt").string(), "--report",
                      (dir / "r.json").string()});
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "r.json"));
  CHECK(j["JF_mean"] == 1.0);
  CHECK(j["sequences"].size() == 2);
  CHECK(slurp(dir / "r.csv").rfind("sequence,object,J,F\n", 0) == 0);
}

TEST_CASE("cli gradcheck and bench-matching") {
  const auto g = cli({"gradcheck", "--size", "4"});
  CHECK(g.code == 0);
  CHECK(g.out.find("max_relative_error=") != std::string::npos);
  const auto b = cli({"bench-matching", "--height", "12", "--width", "10", "--dim", "4", "--window", "2", "--trials",
                      "3"});
  CHECK(b.code == 0);
  const auto j = nlohmann::json::parse(b.out);
  CHECK(j["local_candidates_per_pixel"] == 25);
  CHECK(j["global_candidates_per_pixel"] == 120);
  CHECK(cli({"bench-matching", "--window", "0"}).code == 1);
}

TEST_CASE("cli synth, train and infer produce loadable artifacts") {
  const auto dir = testing::temp_dir("clirun");
  spit(dir / "spec.json", R"({"height": 16, "width": 16, "n_objects": 1, "size_min": 6, "size_max": 6,
                              "n_frames": 4, "n_videos": 2, "seed": 3})");
  spit(dir / "cfg.json", R"({"featnet": {"backbone_channels": 4, "embedding_dim": 3},
                             "head": {"channels": 4, "kernel": 3, "layers": 1},
                             "train": {"steps": 2, "batch_videos": 2, "crop": 16, "log_every": 1},
                             "window": {"k": 2}})");
  REQUIRE(cli({"synth", "--spec", (dir / "spec.json").string(), "--out", (dir / "data").string()}).code == 0);
  const auto t = cli({"train", "--config", (dir / "cfg.json").string(), "--data", (dir / "data").string(), "--out",
                      (dir / "ck").string()});
  REQUIRE(t.code == 0);
  CHECK(t.out.rfind("step=1 loss=", 0) == 0);
  CHECK(t.out.find("step=2 loss=") != std::string::npos);
  const auto seq = dir / "data" / "video_000";
  const auto i = cli({"infer", "--ckpt", (dir / "ck").string(), "--seq", seq.string(), "--first-mask",
                      (seq / "masks" / "00000.png").string(), "--out", (dir / "pred").string(), "--overlays"});
  REQUIRE(i.code == 0);
  CHECK(load_masks(dir / "pred").size() == 4);
  CHECK(fs::exists(dir / "pred" / "overlays" / "00003.png"));
  CHECK(load_masks(dir / "pred")[0] == load_masks(seq / "masks")[0]);
}
