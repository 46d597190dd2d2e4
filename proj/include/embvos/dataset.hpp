#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "embvos/inference.hpp"
#include "embvos/video.hpp"

namespace embvos {

namespace fs = std::filesystem;

// ---- PNG codec --------------------------------------------------------------

/// Reads an 8-bit PNG as RGB in [0, 1]; gray and alpha inputs are converted.
Frame read_rgb_png(const fs::path& path);
void write_rgb_png(const fs::path& path, const Frame& frame);

/// Reads an object-id mask: 8-bit grayscale values or raw palette indices.
LabelTensor read_mask_png(const fs::path& path);

/// Writes a palette-indexed mask (ids 0..255) using the DAVIS color palette.
void write_mask_png(const fs::path& path, const LabelTensor& mask);

/// Color of object id `id` in the DAVIS palette.
std::array<std::uint8_t, 3> palette_color(int id);

// ---- Sequence layout ---------------------------------------------------------
//
//   <sequence>/frames/00000.png, 00001.png, ...   RGB, 8-bit
//   <sequence>/masks/00000.png,  00001.png, ...   object ids
//
// Indices are contiguous from 00000.

/// Sorted paths of NNNNN.png files in a directory; throws IoError when the
/// indices are not contiguous from 0 or the directory is missing.
std::vector<fs::path> indexed_pngs(const fs::path& dir);

std::vector<Frame> load_frames(const fs::path& dir);
std::vector<LabelTensor> load_masks(const fs::path& dir);

/// Frames and, when present, masks of one sequence directory.
Video load_sequence(const fs::path& dir);

/// Every sequence directory below `root`, sorted by name.
std::vector<Video> load_dataset(const fs::path& root);

void save_masks(const fs::path& dir, const std::vector<LabelTensor>& masks);

/// Input blended 50/50 with the palette color of each pixel's object;
/// background pixels are left as they are.
Frame overlay(const Frame& frame, const LabelTensor& mask);

/// Writes `bytes` to a temporary sibling and renames it over `path`.
void write_file_atomic(const fs::path& path, const std::string& bytes);

// ---- Checkpoint ---------------------------------------------------------------
//
//   <ckpt>/manifest.json  {format_version, config, blob, blob_bytes,
//                          tensors: [{name, shape, dtype, offset, nbytes}]}
//   <ckpt>/weights.bin    little-endian f32 data in manifest order

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  nlohmann::ordered_json config;
};

void save_checkpoint(const fs::path& dir, const Model<float>& model, const nlohmann::ordered_json& config);

/// Either the whole model is loaded or FormatError/IoError is thrown.
Checkpoint load_checkpoint(const fs::path& dir);

// ---- Synthetic videos ---------------------------------------------------------

struct SynthSpec {
  Index height = 64;
  Index width = 64;
  Index n_objects = 2;
  std::vector<std::string> shapes{"square", "disc"};
  Index size_min = 16;
  Index size_max = 22;
  Index speed_max = 2;
  std::vector<std::array<Index, 2>> velocities;  // (vx, vy) per object; random when empty
  std::vector<std::array<Index, 2>> positions;   // top-left (x, y) per object; random when empty
  Index n_frames = 20;
  Index n_videos = 1;
  double color_jitter = 0.03;
  double noise = 0.05;
  bool overlap = true;  // false: objects also bounce off each other
  std::uint64_t seed = 0;

  void validate() const;
};

SynthSpec parse_synth_spec(const nlohmann::json& doc);
SynthSpec load_synth_spec(const fs::path& path);

/// Video `index` of a spec. Objects move with constant integer velocity and
/// bounce off the canvas border; higher ids are drawn on top. Without
/// overlap, bounding boxes never intersect: a move that would collide is
/// retried with vx, vy or both reversed, and the object waits a frame if
/// every option collides.
Video synthesize_video(const SynthSpec& spec, Index index);

/// Writes video_000, video_001, ... under `out`; returns their paths.
std::vector<fs::path> generate_synthetic(const SynthSpec& spec, const fs::path& out);

}  // namespace embvos
