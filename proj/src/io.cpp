#include "mdepth/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include "json.hpp"
#include <regex>
#include <sstream>

#include "mdepth/errors.hpp"

namespace mdepth::io {

using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string() + (mode[0] == 'w' ? " for writing" : ""));
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  (void)png;
  throw DataError(std::string("png: ") + msg);
}

void png_warn(png_structp, png_const_charp) {}

// Writes rows of already-encoded big-endian samples.
void write_png_rows(const fs::path& path, int height, int width, int color_type, int bit_depth,
                    const std::vector<std::uint8_t>& bytes) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("png: out of memory");
  }
  try {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = bytes.size() / static_cast<std::size_t>(height);
    for (int y = 0; y < height; ++y) {
      png_write_row(png, const_cast<png_bytep>(bytes.data() + stride * static_cast<std::size_t>(y)));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

struct PngPixels {
  int height = 0, width = 0, channels = 0, bit_depth = 8;
  std::vector<std::uint8_t> bytes;
};

PngPixels read_png_rows(const fs::path& path) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("png: out of memory");
  }
  PngPixels out;
  try {
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    out.bytes.resize(stride * static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) png_read_row(png, out.bytes.data() + stride * static_cast<std::size_t>(y), nullptr);
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (out.channels != 1 && out.channels != 3) throw DataError("unsupported PNG channel layout: " + path.string());
  return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  if (at + 4 > in.size()) throw DataError("checkpoint: truncated data");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

float get_f32(const std::vector<std::uint8_t>& in, std::size_t at) {
  const std::uint32_t bits = get_u32(in, at);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

json pose_json(const Pose6& p) {
  const auto a = p.as_array();
  return json(std::vector<double>(a.begin(), a.end()));
}

Pose6 pose_from(const json& j) {
  if (!j.is_array() || j.size() != 6) throw DataError("pose must be an array of 6 numbers");
  std::array<double, 6> a{};
  for (std::size_t i = 0; i < 6; ++i) a[i] = j.at(i).get<double>();
  return Pose6::from_array(a);
}

json vec3_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw DataError("expected an array of 3 numbers");
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json intrinsics_json(const Intrinsics& k) {
  return json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

Intrinsics intrinsics_from(const json& j) {
  Intrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
               j.at("cy").get<double>(), j.at("width").get<int>(),   j.at("height").get<int>()};
  k.validate();
  return k;
}

json scene_json(const synth::SceneSpec& s) {
  json objects = json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"object_id", o.object_id},
                       {"category_id", o.category_id},
                       {"width", o.width},
                       {"height", o.height},
                       {"position", vec3_json(o.position)},
                       {"velocity", vec3_json(o.velocity)}});
  }
  return json{{"intrinsics", intrinsics_json(s.k)},
              {"layout", s.layout == synth::Layout::plane ? "plane" : "ground_wall"},
              {"wall_depth", s.wall_depth},
              {"ground_height", s.ground_height},
              {"camera_step", pose_json(s.camera_step)},
              {"objects", objects},
              {"texture_seed", s.texture_seed},
              {"texture_frequency", s.texture_frequency},
              {"texture_contrast", s.texture_contrast},
              {"frame_count", s.frame_count}};
}

synth::SceneSpec scene_from(const json& j) {
  synth::SceneSpec s;
  s.k = intrinsics_from(j.at("intrinsics"));
  const std::string layout = j.at("layout").get<std::string>();
  if (layout == "plane") {
    s.layout = synth::Layout::plane;
  } else if (layout == "ground_wall") {
    s.layout = synth::Layout::ground_wall;
  } else {
    throw DataError("unknown scene layout '" + layout + "'");
  }
  s.wall_depth = j.at("wall_depth").get<double>();
  s.ground_height = j.at("ground_height").get<double>();
  s.camera_step = pose_from(j.at("camera_step"));
  for (const auto& o : j.at("objects")) {
    synth::ObjectSpec spec;
    spec.object_id = o.at("object_id").get<int>();
    spec.category_id = o.at("category_id").get<int>();
    spec.width = o.at("width").get<double>();
    spec.height = o.at("height").get<double>();
    spec.position = vec3_from(o.at("position"));
    spec.velocity = vec3_from(o.at("velocity"));
    s.objects.push_back(spec);
  }
  s.texture_seed = j.at("texture_seed").get<std::uint64_t>();
  s.texture_frequency = j.at("texture_frequency").get<double>();
  s.texture_contrast = j.at("texture_contrast").get<double>();
  s.frame_count = j.at("frame_count").get<int>();
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(std::string("invalid scene: ") + e.what());
  }
  return s;
}

}  // namespace

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

void write_png(const fs::path& path, const Field& image, int bit_depth) {
  if (image.channels != 1 && image.channels != 3) throw InvalidArgument("write_png: 1 or 3 channels required");
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("write_png: bit depth must be 8 or 16");
  const double top = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<std::uint8_t> bytes;
  bytes.reserve(image.size() * static_cast<std::size_t>(bit_depth / 8));
  for (double v : image.data) {
    const auto q = static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * top));
    if (bit_depth == 16) bytes.push_back(static_cast<std::uint8_t>(q >> 8));
    bytes.push_back(static_cast<std::uint8_t>(q & 0xFF));
  }
  write_png_rows(path, image.height, image.width, image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 bit_depth, bytes);
}

Field read_png(const fs::path& path) {
  PngPixels px = read_png_rows(path);
  Field out(px.height, px.width, px.channels);
  const double top = px.bit_depth == 16 ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double q = px.bit_depth == 16 ? (px.bytes[2 * i] << 8) | px.bytes[2 * i + 1] : px.bytes[i];
    out.data[i] = q / top;
  }
  return out;
}

void write_rgb8(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * 3) {
    throw InvalidArgument("write_rgb8: buffer size does not match the image shape");
  }
  write_png_rows(path, height, width, PNG_COLOR_TYPE_RGB, 8, rgb);
}

void write_pfm(const fs::path& path, const Field& field) {
  if (field.channels != 1 && field.channels != 3) throw InvalidArgument("write_pfm: 1 or 3 channels required");
  std::ostringstream header;
  header << (field.channels == 1 ? "Pf" : "PF") << "\n" << field.width << " " << field.height << "\n-1\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (int y = field.height - 1; y >= 0; --y) {
    for (int x = 0; x < field.width; ++x) {
      for (int c = 0; c < field.channels; ++c) put_f32(bytes, static_cast<float>(field.at(x, y, c)));
    }
  }
  write_bytes(path, bytes);
}

Field read_pfm(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_bytes(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  const std::string magic = token();
  const int channels = magic == "Pf" ? 1 : magic == "PF" ? 3 : 0;
  if (channels == 0) throw DataError("not a PFM file: " + path.string());
  int width = 0, height = 0;
  double scale = 0;
  try {
    width = std::stoi(token());
    height = std::stoi(token());
    scale = std::stod(token());
  } catch (const std::exception&) {
    throw DataError("malformed PFM header: " + path.string());
  }
  ++pos;  // single whitespace byte after the scale
  if (width <= 0 || height <= 0) throw DataError("malformed PFM header: " + path.string());
  if (scale > 0) throw DataError("big-endian PFM not supported: " + path.string());
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * channels;
  if (bytes.size() < pos + 4 * count) throw DataError("truncated PFM: " + path.string());
  Field out(height, width, channels);
  std::size_t at = pos;
  for (int y = height - 1; y >= 0; --y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c, at += 4) out.at(x, y, c) = get_f32(bytes, at);
    }
  }
  return out;
}

void write_label_png(const fs::path& path, int height, int width, const std::vector<InstanceMask>& masks) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0);
  for (const auto& m : masks) {
    if (m.object_id < 1 || m.object_id > 255) throw InvalidArgument("label png: object ids must be in 1..255");
    if (m.mask.height != height || m.mask.width != width) throw InvalidArgument("label png: mask shape mismatch");
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      if (m.mask.data[i]) bytes[i] = static_cast<std::uint8_t>(m.object_id);
    }
  }
  write_png_rows(path, height, width, PNG_COLOR_TYPE_GRAY, 8, bytes);
}

std::vector<InstanceMask> read_label_png(const fs::path& path, const std::map<int, int>& categories) {
  PngPixels px = read_png_rows(path);
  if (px.channels != 1 || px.bit_depth != 8) throw DataError("label image must be 8-bit gray: " + path.string());
  std::map<int, InstanceMask> found;
  for (std::size_t i = 0; i < px.bytes.size(); ++i) {
    const int id = px.bytes[i];
    if (id == 0) continue;
    auto it = found.find(id);
    if (it == found.end()) {
      auto cat = categories.find(id);
      if (cat == categories.end()) {
        throw DataError("label image " + path.string() + " has object " + std::to_string(id) + " with no category");
      }
      it = found.emplace(id, InstanceMask{id, cat->second, Mask(px.height, px.width, 0)}).first;
    }
    it->second.mask.data[i] = 1;
  }
  std::vector<InstanceMask> out;
  for (auto& [id, m] : found) out.push_back(std::move(m));
  return out;
}

void save_checkpoint(const fs::path& dir, const ad::ParamSet& params) {
  ensure_directory(dir);
  std::vector<std::uint8_t> bytes;
  json index = json::array();
  for (const auto& [name, p] : params) {
    const Field& v = p.value;
    index.push_back({{"name", name},
                     {"shape", {v.height, v.width, v.channels}},
                     {"offset", bytes.size()},
                     {"trainable", p.trainable}});
    put_u32(bytes, static_cast<std::uint32_t>(v.height));
    put_u32(bytes, static_cast<std::uint32_t>(v.width));
    put_u32(bytes, static_cast<std::uint32_t>(v.channels));
    for (double x : v.data) put_f32(bytes, static_cast<float>(x));
  }
  write_bytes(dir / "checkpoint.bin", bytes);
  write_text(dir / "checkpoint.json", json{{"format", "mdepth-checkpoint"}, {"version", 1}, {"params", index}}.dump(2) + "\n");
}

ad::ParamSet load_checkpoint(const fs::path& dir) {
  json index;
  try {
    index = json::parse(read_text(dir / "checkpoint.json"));
  } catch (const json::exception& e) {
    throw DataError("checkpoint index: " + std::string(e.what()));
  }
  const std::vector<std::uint8_t> bytes = read_bytes(dir / "checkpoint.bin");
  ad::ParamSet params;
  try {
    if (index.at("format") != "mdepth-checkpoint" || index.at("version") != 1) {
      throw DataError("unsupported checkpoint format");
    }
    for (const auto& e : index.at("params")) {
      const std::string name = e.at("name").get<std::string>();
      std::size_t at = e.at("offset").get<std::size_t>();
      const int h = static_cast<int>(get_u32(bytes, at));
      const int w = static_cast<int>(get_u32(bytes, at + 4));
      const int c = static_cast<int>(get_u32(bytes, at + 8));
      const auto shape = e.at("shape").get<std::vector<int>>();
      if (shape != std::vector<int>{h, w, c}) throw DataError("checkpoint: shape mismatch for " + name);
      at += 12;
      Field v(h, w, c);
      for (std::size_t i = 0; i < v.size(); ++i, at += 4) v.data[i] = get_f32(bytes, at);
      params.add(name, std::move(v), e.at("trainable").get<bool>());
    }
  } catch (const json::exception& e) {
    throw DataError("checkpoint index: " + std::string(e.what()));
  } catch (const InvalidArgument& e) {
    throw DataError("checkpoint: " + std::string(e.what()));
  }
  return params;
}

std::string scene_to_json(const synth::SceneSpec& spec) { return scene_json(spec).dump(2); }

synth::SceneSpec scene_from_json(const std::string& text) {
  try {
    return scene_from(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError("scene json: " + std::string(e.what()));
  }
}

void write_sequence(const fs::path& root, int index, const synth::SceneSpec& spec) {
  const fs::path dir = root / ("seq_" + std::to_string(index));
  ensure_directory(dir);
  json poses = json::array();
  for (int f = 0; f < spec.frame_count; ++f) {
    const synth::RenderedFrame r = synth::render(spec, f);
    const std::string k = std::to_string(f);
    write_png(dir / ("frame_" + k + ".png"), r.image.field(), 16);
    write_pfm(dir / ("depth_" + k + ".pfm"), r.depth.field());
    write_label_png(dir / ("mask_" + k + ".png"), spec.k.height, spec.k.width, r.masks);
    poses.push_back(pose_json(matrix_to_pose(synth::camera_pose(spec, f))));
  }
  json meta{{"intrinsics", intrinsics_json(spec.k)},
            {"frame_count", spec.frame_count},
            {"camera_poses", poses},
            {"scene", scene_json(spec)}};
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

Sequence read_sequence(const fs::path& dir) {
  Sequence seq;
  seq.name = dir.filename().string();
  json meta;
  try {
    meta = json::parse(read_text(dir / "meta.json"));
    seq.k = intrinsics_from(meta.at("intrinsics"));
    seq.scene = scene_from(meta.at("scene"));
    for (const auto& p : meta.at("camera_poses")) seq.camera_poses.push_back(pose_from(p));
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/meta.json: " + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(dir.string() + "/meta.json: " + e.what());
  }
  std::map<int, int> categories;
  for (const auto& o : seq.scene.objects) categories[o.object_id] = o.category_id;
  const int frames = static_cast<int>(seq.camera_poses.size());
  for (int f = 0; f < frames; ++f) {
    const std::string k = std::to_string(f);
    try {
      seq.frames.emplace_back(read_png(dir / ("frame_" + k + ".png")));
      seq.depths.emplace_back(read_pfm(dir / ("depth_" + k + ".pfm")));
    } catch (const InvalidArgument& e) {
      throw DataError(dir.string() + " frame " + k + ": " + e.what());
    }
    seq.masks.push_back(read_label_png(dir / ("mask_" + k + ".png"), categories));
    const Field& img = seq.frames.back().field();
    if (img.height != seq.k.height || img.width != seq.k.width) {
      throw DataError(dir.string() + " frame " + k + " does not match the intrinsics size");
    }
  }
  return seq;
}

std::vector<Sequence> read_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
  std::vector<std::pair<int, fs::path>> dirs;
  const std::regex pattern("seq_([0-9]+)");
  for (const auto& entry : fs::directory_iterator(root)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (entry.is_directory() && std::regex_match(name, m, pattern)) dirs.emplace_back(std::stoi(m[1]), entry.path());
  }
  if (dirs.empty()) throw DataError("no seq_<n> directories under " + root.string());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Sequence> out;
  for (const auto& [n, dir] : dirs) out.push_back(read_sequence(dir));
  return out;
}

std::vector<Window> windows(const std::vector<Sequence>& dataset) {
  std::vector<Window> out;
  for (const Sequence& seq : dataset) {
    const int frames = static_cast<int>(seq.frames.size());
    for (int c = 1; c + 1 < frames; ++c) {
      Window w;
      SequenceSample& s = w.sample;
      s.name = seq.name + "/" + std::to_string(c);
      s.k = seq.k;
      s.masks.height = seq.k.height;
      s.masks.width = seq.k.width;
      for (int i = 0; i < 3; ++i) {
        s.frames[static_cast<std::size_t>(i)] = seq.frames[static_cast<std::size_t>(c - 1 + i)];
        s.masks.frames[static_cast<std::size_t>(i)] = seq.masks[static_cast<std::size_t>(c - 1 + i)];
      }
      try {
        s.validate();
      } catch (const std::exception& e) {
        throw DataError("window " + s.name + ": " + e.what());
      }
      w.gt_depth = seq.depths[static_cast<std::size_t>(c)];
      const auto pose = [&](int f) { return pose_to_matrix(seq.camera_poses[static_cast<std::size_t>(f)]); };
      w.gt_ego_prev = matrix_to_pose(invert(pose(c - 1)) * pose(c));
      w.gt_ego_next = matrix_to_pose(invert(pose(c + 1)) * pose(c));
      out.push_back(std::move(w));
    }
  }
  return out;
}

const std::array<std::array<std::uint8_t, 3>, 256>& colormap() {
  static const std::array<std::array<std::uint8_t, 3>, 256> table{{
#include "colormap.inc"
  }};
  return table;
}

std::vector<std::uint8_t> heatmap(const Field& values, double lo, double hi) {
  if (values.channels != 1) throw InvalidArgument("heatmap: single-channel field required");
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<std::uint8_t> rgb;
  rgb.reserve(values.size() * 3);
  for (double v : values.data) {
    const double t = std::isfinite(v) ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
    const auto& c = colormap()[static_cast<std::size_t>(std::lround(t * 255))];
    rgb.insert(rgb.end(), c.begin(), c.end());
  }
  return rgb;
}

}  // namespace mdepth::io
