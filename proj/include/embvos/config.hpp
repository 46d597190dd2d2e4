#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "embvos/dynhead.hpp"
#include "embvos/featnet.hpp"
#include "embvos/trainer.hpp"

namespace embvos {

/// Complete run configuration as read from a JSON document.
///
/// Parsing starts from full_scale_defaults(); every key must be known and of the
/// right type, otherwise ConfigError. configs/desk.json carries the
/// desk-scale overrides.
struct RunConfig {
  FeatNetConfig featnet;
  HeadConfig head;
  TrainConfig train;
  std::string data_path;
  std::string out_path;

  /// embedding_dim 100, backbone/head width 256, k 15, bootstrap 0.15,
  /// lr 0.0007, momentum 0.9, 3 videos per batch, 464 crop, 1024 refs.
  static RunConfig full_scale_defaults();

  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
nlohmann::ordered_json to_json(const RunConfig& cfg);

}  // namespace embvos
