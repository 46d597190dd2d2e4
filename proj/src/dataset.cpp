#include "embvos/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

namespace embvos {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return ss.str();
}

// ---- libpng plumbing ----------------------------------------------------------

struct MemoryReader {
  const std::string* bytes;
  std::size_t pos = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->bytes->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, r->bytes->data() + r->pos, n);
  r->pos += n;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t n) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}

void flush_noop(png_structp) {}

void warn_noop(png_structp, png_const_charp) {}

struct DecodedPng {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int channels = 0;
  int color_type = 0;
  std::vector<png_byte> pixels;
  std::vector<png_color> palette;
};

enum class PngMode { Rgb, Indices };

/// Decodes to 8-bit samples. Rgb mode expands everything to 3 channels;
/// Indices mode keeps palette indices and gray values unscaled.
DecodedPng decode_png(const fs::path& path, PngMode mode) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw IoError("'" + path.string() + "' is not a PNG file");

  DecodedPng out;
  MemoryReader reader{&bytes};
  std::vector<png_bytep> rows;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warn_noop);
  if (!png) throw IoError("libpng: cannot allocate read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng: cannot allocate info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path.string() + "': corrupt PNG");
  }
  png_set_read_fn(png, &reader, read_from_memory);
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);
  if (mode == PngMode::Rgb) {
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY || out.color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
      png_set_gray_to_rgb(png);
    if (bit_depth == 16) png_set_strip_16(png);
    if (out.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  } else {
    if (bit_depth == 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw FormatError("'" + path.string() + "': 16-bit masks are not supported");
    }
    if (bit_depth < 8) png_set_packing(png);
    if (out.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) {
      png_colorp pal = nullptr;
      int n = 0;
      if (png_get_PLTE(png, info, &pal, &n)) out.palette.assign(pal, pal + n);
    }
  }
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.pixels.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (png_uint_32 y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  if (rowbytes != static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.channels))
    throw FormatError("'" + path.string() + "': unexpected PNG row layout");
  return out;
}

/// Encodes 8-bit rows with fixed compression settings so output bytes
/// depend only on the pixels.
std::string encode_png(png_uint_32 width, png_uint_32 height, int color_type, const std::vector<png_byte>& pixels,
                       const std::vector<png_color>& palette) {
  std::string out;
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(pixels.data()) + static_cast<std::size_t>(y) * width * channels;

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, warn_noop);
  if (!png) throw IoError("libpng: cannot allocate write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng: cannot allocate info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: encoding failed");
  }
  png_set_write_fn(png, &out, write_to_memory, flush_noop);
  png_set_compression_level(png, 6);
  png_set_compression_strategy(png, 0);
  png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_PALETTE)
    png_set_PLTE(png, info, const_cast<png_colorp>(palette.data()), static_cast<int>(palette.size()));
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::array<std::array<std::uint8_t, 3>, 256> make_palette() {
  std::array<std::array<std::uint8_t, 3>, 256> pal{};
  for (int i = 0; i < 256; ++i) {
    int r = 0, g = 0, b = 0, c = i;
    for (int j = 0; j < 8; ++j) {
      r |= ((c >> 0) & 1) << (7 - j);
      g |= ((c >> 1) & 1) << (7 - j);
      b |= ((c >> 2) & 1) << (7 - j);
      c >>= 3;
    }
    pal[static_cast<std::size_t>(i)] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                                        static_cast<std::uint8_t>(b)};
  }
  return pal;
}

const std::array<std::array<std::uint8_t, 3>, 256>& davis_palette() {
  static const auto pal = make_palette();
  return pal;
}

Index parse_index(const fs::path& p) {
  const std::string stem = p.stem().string();
  if (stem.size() != 5 || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return -1;
  return std::stol(stem);
}

std::string indexed_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu.png", i);
  return buf;
}

}  // namespace

// ---- PNG ------------------------------------------------------------------------

std::array<std::uint8_t, 3> palette_color(int id) {
  if (id < 0 || id > 255) throw ContractError("palette_color: id " + std::to_string(id) + " outside 0..255");
  return davis_palette()[static_cast<std::size_t>(id)];
}

Frame read_rgb_png(const fs::path& path) {
  const DecodedPng d = decode_png(path, PngMode::Rgb);
  if (d.channels != 3) throw FormatError("'" + path.string() + "': could not convert to RGB");
  Frame f({static_cast<Index>(d.height), static_cast<Index>(d.width), 3});
  for (std::size_t i = 0; i < d.pixels.size(); ++i) f.data()[i] = static_cast<float>(d.pixels[i]) / 255.0f;
  return f;
}

void write_rgb_png(const fs::path& path, const Frame& frame) {
  require_rank(frame.shape(), 3, "write_rgb_png frame");
  if (frame.dim(2) != 3) throw ShapeError("write_rgb_png: expected 3 channels, got " + shape_string(frame.shape()));
  std::vector<png_byte> px(static_cast<std::size_t>(frame.size()));
  for (Index i = 0; i < frame.size(); ++i) {
    const float v = std::clamp(frame.data()[i], 0.0f, 1.0f);
    px[static_cast<std::size_t>(i)] = static_cast<png_byte>(std::lround(v * 255.0f));
  }
  write_file_atomic(path, encode_png(static_cast<png_uint_32>(frame.dim(1)), static_cast<png_uint_32>(frame.dim(0)),
                                     PNG_COLOR_TYPE_RGB, px, {}));
}

LabelTensor read_mask_png(const fs::path& path) {
  const DecodedPng d = decode_png(path, PngMode::Indices);
  LabelTensor m({static_cast<Index>(d.height), static_cast<Index>(d.width)});
  const std::size_t n = static_cast<std::size_t>(d.height) * d.width;
  if (d.channels == 1) {
    for (std::size_t i = 0; i < n; ++i) m.data()[i] = d.pixels[i];
    return m;
  }
  if (d.channels == 3) {
    // RGB masks are accepted when every color is a palette entry.
    std::map<std::array<std::uint8_t, 3>, int> lookup;
    for (int id = 255; id >= 0; --id) lookup[davis_palette()[static_cast<std::size_t>(id)]] = id;
    for (std::size_t i = 0; i < n; ++i) {
      const std::array<std::uint8_t, 3> c{d.pixels[3 * i], d.pixels[3 * i + 1], d.pixels[3 * i + 2]};
      auto it = lookup.find(c);
      if (it == lookup.end()) throw FormatError("'" + path.string() + "': RGB mask color is not in the palette");
      m.data()[i] = it->second;
    }
    return m;
  }
  throw FormatError("'" + path.string() + "': unsupported mask channel count " + std::to_string(d.channels));
}

void write_mask_png(const fs::path& path, const LabelTensor& mask) {
  require_rank(mask.shape(), 2, "write_mask_png mask");
  std::vector<png_byte> px(static_cast<std::size_t>(mask.size()));
  int max_id = 0;
  for (Index i = 0; i < mask.size(); ++i) {
    const int v = mask.data()[i];
    if (v < 0 || v > 255) throw ContractError("write_mask_png: id " + std::to_string(v) + " outside 0..255");
    px[static_cast<std::size_t>(i)] = static_cast<png_byte>(v);
    max_id = std::max(max_id, v);
  }
  std::vector<png_color> pal(256);
  for (std::size_t i = 0; i < 256; ++i) pal[i] = {davis_palette()[i][0], davis_palette()[i][1], davis_palette()[i][2]};
  write_file_atomic(path, encode_png(static_cast<png_uint_32>(mask.dim(1)), static_cast<png_uint_32>(mask.dim(0)),
                                     PNG_COLOR_TYPE_PALETTE, px, pal));
}

// ---- Files and sequences ---------------------------------------------------------

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create '" + path.parent_path().string() + "': " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp);
      throw IoError("short write to '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

std::vector<fs::path> indexed_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing directory '" + dir.string() + "'");
  std::map<Index, fs::path> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    const Index i = parse_index(e.path());
    if (i >= 0) found.emplace(i, e.path());
  }
  std::vector<fs::path> out;
  for (const auto& [i, p] : found) {
    if (i != static_cast<Index>(out.size()))
      throw IoError("'" + dir.string() + "': missing " + indexed_name(out.size()));
    out.push_back(p);
  }
  if (out.empty()) throw IoError("'" + dir.string() + "' contains no NNNNN.png files");
  return out;
}

std::vector<Frame> load_frames(const fs::path& dir) {
  std::vector<Frame> out;
  for (const auto& p : indexed_pngs(dir)) {
    out.push_back(read_rgb_png(p));
    if (out.back().shape() != out.front().shape())
      throw ShapeError("'" + p.string() + "': frame size " + shape_string(out.back().shape()) + " differs from " +
                       shape_string(out.front().shape()));
  }
  return out;
}

std::vector<LabelTensor> load_masks(const fs::path& dir) {
  std::vector<LabelTensor> out;
  for (const auto& p : indexed_pngs(dir)) out.push_back(read_mask_png(p));
  return out;
}

Video load_sequence(const fs::path& dir) {
  Video v;
  v.name = dir.filename().string();
  if (v.name.empty()) v.name = dir.parent_path().filename().string();
  v.frames = load_frames(dir / "frames");
  if (fs::exists(dir / "masks")) {
    v.masks = load_masks(dir / "masks");
    if (v.masks.size() != v.frames.size())
      throw IoError("'" + dir.string() + "': " + std::to_string(v.frames.size()) + " frames but " +
                    std::to_string(v.masks.size()) + " masks");
    for (std::size_t t = 0; t < v.masks.size(); ++t)
      if (v.masks[t].dim(0) != v.frames[t].dim(0) || v.masks[t].dim(1) != v.frames[t].dim(1))
        throw ShapeError("'" + dir.string() + "': mask " + indexed_name(t) + " size does not match its frame");
  }
  return v;
}

std::vector<Video> load_dataset(const fs::path& root) {
  if (fs::is_directory(root / "frames")) return {load_sequence(root)};
  if (!fs::is_directory(root)) throw IoError("missing dataset directory '" + root.string() + "'");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::is_directory(e.path() / "frames")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("'" + root.string() + "' contains no sequence directories");
  std::vector<Video> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

void save_masks(const fs::path& dir, const std::vector<LabelTensor>& masks) {
  for (std::size_t t = 0; t < masks.size(); ++t) write_mask_png(dir / indexed_name(t), masks[t]);
}

Frame overlay(const Frame& frame, const LabelTensor& mask) {
  require_rank(frame.shape(), 3, "overlay frame");
  if (mask.dim(0) != frame.dim(0) || mask.dim(1) != frame.dim(1))
    throw ShapeError("overlay: mask " + shape_string(mask.shape()) + " vs frame " + shape_string(frame.shape()));
  Frame out = frame;
  for (Index i = 0; i < mask.size(); ++i) {
    const int id = mask.data()[i];
    if (id == 0) continue;
    const auto c = palette_color(std::clamp(id, 0, 255));
    for (Index ch = 0; ch < 3; ++ch) {
      float& v = out.data()[i * 3 + ch];
      v = 0.5f * v + 0.5f * (static_cast<float>(c[static_cast<std::size_t>(ch)]) / 255.0f);
    }
  }
  return out;
}

// ---- Checkpoint ---------------------------------------------------------------------

namespace {

std::vector<const Parameter<float>*> model_parameters(const Model<float>& m) {
  auto& mm = const_cast<Model<float>&>(m);
  std::vector<const Parameter<float>*> out;
  for (auto* p : mm.featnet.parameters()) out.push_back(p);
  for (auto* p : mm.head.parameters()) out.push_back(p);
  return out;
}

ordered_json architecture_json(const Model<float>& m) {
  ordered_json a;
  a["featnet"] = {{"backbone_channels", m.featnet.config.backbone_channels},
                  {"embedding_dim", m.featnet.config.embedding_dim},
                  {"stride", m.featnet.config.stride},
                  {"depth", m.featnet.config.depth}};
  a["head"] = {{"channels", m.head.config.channels}, {"kernel", m.head.config.kernel}, {"layers", m.head.config.layers}};
  a["ablation"] = {{"use_ff_gm", m.ablation.use_ff_gm},
                   {"use_pf_lm", m.ablation.use_pf_lm},
                   {"use_pf_gm", m.ablation.use_pf_gm},
                   {"use_pfp", m.ablation.use_pfp}};
  return a;
}

void put_le32(std::string& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFFu));
}

float get_le32(const char* p) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

template <typename V>
V field(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError("checkpoint manifest: missing '" + where + key + "'");
  try {
    return it->get<V>();
  } catch (const json::exception&) {
    throw FormatError("checkpoint manifest: '" + where + key + "' has the wrong type");
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Model<float>& model, const ordered_json& config) {
  std::string blob;
  ordered_json tensors = ordered_json::array();
  for (const auto* p : model_parameters(model)) {
    const std::size_t offset = blob.size();
    for (const float v : p->value) put_le32(blob, v);
    tensors.push_back({{"name", p->name},
                       {"shape", p->value.shape()},
                       {"dtype", "f32"},
                       {"offset", offset},
                       {"nbytes", blob.size() - offset}});
  }
  ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["model"] = architecture_json(model);
  manifest["config"] = config;
  manifest["blob"] = "weights.bin";
  manifest["blob_bytes"] = blob.size();
  manifest["tensors"] = tensors;
  write_file_atomic(dir / "weights.bin", blob);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const std::string text = read_file(dir / "manifest.json");
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!manifest.is_object()) throw FormatError("checkpoint manifest must be a JSON object");
  const int version = field<int>(manifest, "format_version", "");
  if (version != kCheckpointVersion)
    throw FormatError("unknown checkpoint format_version " + std::to_string(version));

  const json arch = field<json>(manifest, "model", "");
  FeatNetConfig fc;
  HeadConfig hc;
  AblationConfig ab;
  const json jf = field<json>(arch, "featnet", "model.");
  fc.backbone_channels = field<Index>(jf, "backbone_channels", "model.featnet.");
  fc.embedding_dim = field<Index>(jf, "embedding_dim", "model.featnet.");
  fc.stride = field<Index>(jf, "stride", "model.featnet.");
  fc.depth = field<Index>(jf, "depth", "model.featnet.");
  const json jh = field<json>(arch, "head", "model.");
  hc.channels = field<Index>(jh, "channels", "model.head.");
  hc.kernel = field<Index>(jh, "kernel", "model.head.");
  hc.layers = field<Index>(jh, "layers", "model.head.");
  const json ja = field<json>(arch, "ablation", "model.");
  ab.use_ff_gm = field<bool>(ja, "use_ff_gm", "model.ablation.");
  ab.use_pf_lm = field<bool>(ja, "use_pf_lm", "model.ablation.");
  ab.use_pf_gm = field<bool>(ja, "use_pf_gm", "model.ablation.");
  ab.use_pfp = field<bool>(ja, "use_pfp", "model.ablation.");

  Checkpoint ck;
  try {
    ck.model.featnet = init_featnet<float>(fc, 0);
    ck.model.head = init_head<float>(hc, fc.backbone_channels, 0);
    ab.validate();
  } catch (const Error& e) {
    throw FormatError("checkpoint architecture is invalid: " + std::string(e.what()));
  }
  ck.model.ablation = ab;
  ck.config = ordered_json(manifest.value("config", json::object()));

  const auto blob_name = field<std::string>(manifest, "blob", "");
  const auto blob_bytes = field<std::size_t>(manifest, "blob_bytes", "");
  const std::string blob = read_file(dir / blob_name);
  if (blob.size() != blob_bytes)
    throw FormatError("checkpoint blob has " + std::to_string(blob.size()) + " bytes, manifest says " +
                      std::to_string(blob_bytes));

  const json tensors = field<json>(manifest, "tensors", "");
  if (!tensors.is_array()) throw FormatError("checkpoint manifest: 'tensors' must be an array");
  std::map<std::string, Parameter<float>*> by_name;
  for (auto* p : ck.model.featnet.parameters()) by_name[p->name] = p;
  for (auto* p : ck.model.head.parameters()) by_name[p->name] = p;

  std::set<std::string> loaded;
  std::size_t expected_offset = 0;
  for (const auto& t : tensors) {
    const auto name = field<std::string>(t, "name", "tensors[].");
    const auto shape = field<Shape>(t, "shape", "tensors[].");
    const auto dtype = field<std::string>(t, "dtype", "tensors[].");
    const auto offset = field<std::size_t>(t, "offset", "tensors[].");
    const auto nbytes = field<std::size_t>(t, "nbytes", "tensors[].");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint tensor '" + name + "' is not part of the model");
    if (!loaded.insert(name).second) throw FormatError("checkpoint tensor '" + name + "' appears twice");
    if (dtype != "f32") throw FormatError("checkpoint tensor '" + name + "' has unsupported dtype " + dtype);
    if (shape != it->second->value.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                        shape_string(it->second->value.shape()));
    if (offset != expected_offset) throw FormatError("checkpoint tensor '" + name + "' is out of order or overlaps");
    if (nbytes != static_cast<std::size_t>(shape_size(shape)) * 4 || offset + nbytes > blob.size())
      throw FormatError("checkpoint tensor '" + name + "' has an inconsistent byte range");
    Tensor<float>& v = it->second->value;
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = get_le32(blob.data() + offset + static_cast<std::size_t>(i) * 4);
    expected_offset = offset + nbytes;
  }
  if (loaded.size() != by_name.size()) throw FormatError("checkpoint is missing model tensors");
  if (expected_offset != blob.size()) throw FormatError("checkpoint blob has trailing bytes");
  return ck;
}

// ---- Synthetic videos ------------------------------------------------------------------

void SynthSpec::validate() const {
  if (height < 1 || width < 1) throw ConfigError("synth: canvas must be at least 1x1");
  if (n_objects < 1 || n_objects > 255) throw ConfigError("synth: n_objects must be in 1..255");
  if (shapes.empty()) throw ConfigError("synth: shapes must not be empty");
  for (const auto& s : shapes)
    if (s != "square" && s != "disc") throw ConfigError("synth: unknown shape '" + s + "'");
  if (size_min < 1 || size_max < size_min) throw ConfigError("synth: need 1 <= size_min <= size_max");
  if (size_max > std::min(height, width))
    throw ConfigError("synth: object size " + std::to_string(size_max) + " does not fit a " + std::to_string(height) +
                      "x" + std::to_string(width) + " canvas");
  if (speed_max < 0) throw ConfigError("synth: speed_max must be >= 0");
  if (!velocities.empty() && static_cast<Index>(velocities.size()) != n_objects)
    throw ConfigError("synth: velocities must list one (vx, vy) per object");
  if (!positions.empty() && static_cast<Index>(positions.size()) != n_objects)
    throw ConfigError("synth: positions must list one (x, y) per object");
  for (const auto& p : positions)
    if (p[0] < 0 || p[1] < 0 || p[0] + size_max > width || p[1] + size_max > height)
      throw ConfigError("synth: initial position puts an object outside the canvas");
  if (n_frames < 1 || n_videos < 1) throw ConfigError("synth: n_frames and n_videos must be >= 1");
  if (color_jitter < 0.0 || noise < 0.0) throw ConfigError("synth: color_jitter and noise must be >= 0");
}

SynthSpec parse_synth_spec(const json& doc) {
  if (!doc.is_object()) throw ConfigError("synth spec must be a JSON object");
  static const std::set<std::string> known{"height",    "width",     "n_objects", "shapes",   "size_min",
                                           "size_max",  "speed_max", "velocities", "positions", "n_frames",
                                           "n_videos",  "color_jitter", "noise",  "overlap", "seed"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("synth spec: unknown key '" + it.key() + "'");
  SynthSpec s;
  auto get = [&](const char* key, auto& out) {
    auto it = doc.find(key);
    if (it == doc.end()) return;
    using V = std::decay_t<decltype(out)>;
    if constexpr (std::is_same_v<V, bool>) {
      if (!it->is_boolean()) throw ConfigError(std::string("synth spec: '") + key + "' must be true or false");
    } else if constexpr (std::is_integral_v<V>) {
      if (!it->is_number_integer()) throw ConfigError(std::string("synth spec: '") + key + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!it->is_number()) throw ConfigError(std::string("synth spec: '") + key + "' must be a number");
    }
    try {
      out = it->get<V>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("synth spec: '") + key + "' has the wrong type");
    }
  };
  get("height", s.height);
  get("width", s.width);
  get("n_objects", s.n_objects);
  get("shapes", s.shapes);
  get("size_min", s.size_min);
  get("size_max", s.size_max);
  get("speed_max", s.speed_max);
  get("velocities", s.velocities);
  get("positions", s.positions);
  get("n_frames", s.n_frames);
  get("n_videos", s.n_videos);
  get("color_jitter", s.color_jitter);
  get("noise", s.noise);
  get("overlap", s.overlap);
  get("seed", s.seed);
  s.validate();
  return s;
}

SynthSpec load_synth_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synth spec '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("synth spec '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_synth_spec(doc);
}

namespace {

/// Advances one coordinate by v inside [0, range], reflecting at the ends.
void bounce(Index& p, Index& v, Index range) {
  if (range == 0) {
    v = 0;
    return;
  }
  Index q = p + v;
  while (q < 0 || q > range) {
    if (q < 0) q = -q;
    if (q > range) q = 2 * range - q;
    v = -v;
  }
  p = q;
}

struct ObjectTrack {
  Index size;
  bool disc;
  Index x, y, vx, vy;
  std::array<double, 3> color;
};

bool covers(const ObjectTrack& o, Index px, Index py) {
  const Index dx = px - o.x, dy = py - o.y;
  if (dx < 0 || dy < 0 || dx >= o.size || dy >= o.size) return false;
  if (!o.disc) return true;
  const double c = (static_cast<double>(o.size) - 1.0) / 2.0, r = static_cast<double>(o.size) / 2.0;
  const double ex = static_cast<double>(dx) - c, ey = static_cast<double>(dy) - c;
  return ex * ex + ey * ey <= r * r;
}

bool boxes_meet(const ObjectTrack& a, const ObjectTrack& b) {
  return a.x < b.x + b.size && b.x < a.x + a.size && a.y < b.y + b.size && b.y < a.y + a.size;
}

bool collides(const std::vector<ObjectTrack>& objects, std::size_t i, const ObjectTrack& moved) {
  for (std::size_t j = 0; j < objects.size(); ++j)
    if (j != i && boxes_meet(moved, objects[j])) return true;
  return false;
}

double color_gap(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

}  // namespace

Video synthesize_video(const SynthSpec& spec, Index index) {
  spec.validate();
  Rng rng(spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index) + 1);

  std::vector<std::array<double, 3>> palette;
  auto pick_color = [&]() {
    std::array<double, 3> c{};
    for (int attempt = 0; attempt < 200; ++attempt) {
      c = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
      bool ok = true;
      for (const auto& q : palette) ok = ok && color_gap(c, q) >= 0.6;
      if (ok) break;
    }
    palette.push_back(c);
    return c;
  };
  const auto background = pick_color();
  const std::array<double, 3> bg_slope{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};

  std::vector<ObjectTrack> objects;
  for (Index i = 0; i < spec.n_objects; ++i) {
    ObjectTrack o{};
    o.size = spec.size_min + rng.uniform_int(spec.size_max - spec.size_min + 1);
    o.disc = spec.shapes[static_cast<std::size_t>(i) % spec.shapes.size()] == "disc";
    if (spec.positions.empty()) {
      int attempts = 0;
      do {
        if (++attempts > 10000)
          throw ConfigError("synth: cannot place " + std::to_string(spec.n_objects) + " non-overlapping objects");
        o.x = rng.uniform_int(spec.width - o.size + 1);
        o.y = rng.uniform_int(spec.height - o.size + 1);
      } while (!spec.overlap && collides(objects, objects.size(), o));
    } else {
      o.x = spec.positions[static_cast<std::size_t>(i)][0];
      o.y = spec.positions[static_cast<std::size_t>(i)][1];
    }
    if (spec.velocities.empty()) {
      do {
        o.vx = rng.uniform_int(2 * spec.speed_max + 1) - spec.speed_max;
        o.vy = rng.uniform_int(2 * spec.speed_max + 1) - spec.speed_max;
      } while (spec.speed_max > 0 && o.vx == 0 && o.vy == 0);
    } else {
      o.vx = spec.velocities[static_cast<std::size_t>(i)][0];
      o.vy = spec.velocities[static_cast<std::size_t>(i)][1];
    }
    o.color = pick_color();
    if (!spec.overlap && collides(objects, objects.size(), o))
      throw ConfigError("synth: initial positions overlap");
    objects.push_back(o);
  }

  Video v;
  char name[32];
  std::snprintf(name, sizeof name, "video_%03lld", static_cast<long long>(index));
  v.name = name;
  const Index H = spec.height, W = spec.width;
  for (Index t = 0; t < spec.n_frames; ++t) {
    if (t > 0)
      for (std::size_t i = 0; i < objects.size(); ++i) {
        ObjectTrack& o = objects[i];
        bool placed = false;
        for (int flip = 0; flip < 4 && !placed; ++flip) {
          ObjectTrack c = o;
          if (flip & 1) c.vx = -c.vx;
          if (flip & 2) c.vy = -c.vy;
          bounce(c.x, c.vx, W - c.size);
          bounce(c.y, c.vy, H - c.size);
          if (spec.overlap || !collides(objects, i, c)) {
            o = c;
            placed = true;
          }
        }
        if (!placed) {
          o.vx = -o.vx;
          o.vy = -o.vy;
        }
      }
    std::vector<std::array<double, 3>> shade;
    for (const auto& o : objects) {
      auto c = o.color;
      for (double& ch : c) ch += rng.uniform(-spec.color_jitter, spec.color_jitter);
      shade.push_back(c);
    }
    Frame f({H, W, 3});
    LabelTensor m({H, W});
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        std::array<double, 3> c;
        const double ramp = (static_cast<double>(x + y) / static_cast<double>(H + W)) - 0.5;
        for (std::size_t ch = 0; ch < 3; ++ch) c[ch] = background[ch] + bg_slope[ch] * ramp;
        int id = 0;
        for (std::size_t i = 0; i < objects.size(); ++i)
          if (covers(objects[i], x, y)) {
            id = static_cast<int>(i) + 1;
            c = shade[i];
          }
        m(y, x) = id;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double n = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
          f(y, x, static_cast<Index>(ch)) = static_cast<float>(std::clamp(c[ch] + n, 0.0, 1.0));
        }
      }
    v.frames.push_back(std::move(f));
    v.masks.push_back(std::move(m));
  }
  return v;
}

std::vector<fs::path> generate_synthetic(const SynthSpec& spec, const fs::path& out) {
  spec.validate();
  std::vector<fs::path> dirs;
  for (Index i = 0; i < spec.n_videos; ++i) {
    const Video v = synthesize_video(spec, i);
    const fs::path dir = out / v.name;
    for (std::size_t t = 0; t < v.frames.size(); ++t) {
      write_rgb_png(dir / "frames" / indexed_name(t), v.frames[t]);
      write_mask_png(dir / "masks" / indexed_name(t), v.masks[t]);
    }
    dirs.push_back(dir);
  }
  return dirs;
}

}  // namespace embvos
