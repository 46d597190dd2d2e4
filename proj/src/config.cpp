#include "embvos/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace embvos {

namespace {

using nlohmann::json;

/// Strict object reader: rejects unknown keys and mistyped values.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError("config: '" + path_ + "' must be an object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    auto it = doc_.find(key);
    if (it == doc_.end()) return;
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<V>) {
        if (!it->is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<V>)
          if (it->is_number_integer() && it->get<std::int64_t>() < 0) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!it->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!it->is_string()) throw ConfigError("");
      }
      out = it->get<V>();
    } catch (const std::exception&) {
      throw ConfigError("config: '" + path_ + "." + key + "' has the wrong type");
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    auto it = doc_.find(key);
    if (it == doc_.end()) return std::nullopt;
    return Section(*it, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("config: unknown key '" + (path_.empty() ? it.key() : path_ + "." + it.key()) + "'");
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig RunConfig::full_scale_defaults() {
  RunConfig c;
  c.featnet.backbone_channels = 256;
  c.featnet.embedding_dim = 100;
  c.featnet.stride = 4;
  c.featnet.depth = 3;
  c.head.channels = 256;
  c.head.kernel = 7;
  c.head.layers = 4;
  c.train = TrainConfig{};
  return c;
}

void RunConfig::validate() const {
  featnet.validate();
  head.validate();
  train.validate();
}

RunConfig parse_run_config(const json& doc) {
  RunConfig c = RunConfig::full_scale_defaults();
  Section root(doc, "");
  root.read("seed", c.train.seed);
  if (auto s = root.child("featnet")) {
    s->read("backbone_channels", c.featnet.backbone_channels);
    s->read("embedding_dim", c.featnet.embedding_dim);
    s->read("stride", c.featnet.stride);
    s->read("depth", c.featnet.depth);
    s->finish();
  }
  if (auto s = root.child("head")) {
    s->read("channels", c.head.channels);
    s->read("kernel", c.head.kernel);
    s->read("layers", c.head.layers);
    s->finish();
  }
  if (auto s = root.child("train")) {
    s->read("steps", c.train.steps);
    s->read("batch_videos", c.train.batch_videos);
    s->read("crop", c.train.crop);
    s->read("subsample_refs", c.train.subsample_refs);
    s->read("scale_min", c.train.scale_min);
    s->read("scale_max", c.train.scale_max);
    s->read("flip_probability", c.train.flip_probability);
    s->read("log_every", c.train.log_every);
    s->finish();
  }
  if (auto s = root.child("window")) {
    s->read("k", c.train.window_k);
    s->finish();
  }
  if (auto s = root.child("ablation")) {
    s->read("use_ff_gm", c.train.ablation.use_ff_gm);
    s->read("use_pf_lm", c.train.ablation.use_pf_lm);
    s->read("use_pf_gm", c.train.ablation.use_pf_gm);
    s->read("use_pfp", c.train.ablation.use_pfp);
    s->finish();
  }
  if (auto s = root.child("loss")) {
    s->read("bootstrap_fraction", c.train.loss.bootstrap_fraction);
    s->finish();
  }
  if (auto s = root.child("optim")) {
    s->read("lr", c.train.lr);
    s->read("momentum", c.train.momentum);
    s->finish();
  }
  if (auto s = root.child("paths")) {
    s->read("data", c.data_path);
    s->read("out", c.out_path);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.train.seed;
  j["featnet"] = {{"backbone_channels", c.featnet.backbone_channels},
                  {"embedding_dim", c.featnet.embedding_dim},
                  {"stride", c.featnet.stride},
                  {"depth", c.featnet.depth}};
  j["head"] = {{"channels", c.head.channels}, {"kernel", c.head.kernel}, {"layers", c.head.layers}};
  j["train"] = {{"steps", c.train.steps},
                {"batch_videos", c.train.batch_videos},
                {"crop", c.train.crop},
                {"subsample_refs", c.train.subsample_refs},
                {"scale_min", c.train.scale_min},
                {"scale_max", c.train.scale_max},
                {"flip_probability", c.train.flip_probability},
                {"log_every", c.train.log_every}};
  j["window"] = {{"k", c.train.window_k}};
  j["ablation"] = {{"use_ff_gm", c.train.ablation.use_ff_gm},
                   {"use_pf_lm", c.train.ablation.use_pf_lm},
                   {"use_pf_gm", c.train.ablation.use_pf_gm},
                   {"use_pfp", c.train.ablation.use_pfp}};
  j["loss"] = {{"bootstrap_fraction", c.train.loss.bootstrap_fraction}};
  j["optim"] = {{"lr", c.train.lr}, {"momentum", c.train.momentum}};
  j["paths"] = {{"data", c.data_path}, {"out", c.out_path}};
  return j;
}

}  // namespace embvos
