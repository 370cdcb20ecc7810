#include "nucseg/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "nucseg/error.hpp"

namespace nucseg::io {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string() + " (" + std::strerror(errno) + ")");
  return f;
}

struct PngErrorSink {
  char message[256] = {0};
};

void png_error_to_sink(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<PngErrorSink*>(png_get_error_ptr(png));
  std::snprintf(sink->message, sizeof(sink->message), "%s", msg);
  png_longjmp(png, 1);
}

void png_warning_ignore(png_structp, png_const_charp) {}

// libpng reports errors via longjmp; only trivially destructible locals live
// in the frames it may unwind.
bool decode_png(std::FILE* fp, GrayImage* out, PngErrorSink* sink) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, sink, png_error_to_sink, png_warning_ignore);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int raw_depth = png_get_bit_depth(png, info);
  const int depth = raw_depth < 8 ? 8 : raw_depth;
  if (color != PNG_COLOR_TYPE_GRAY) {
    std::snprintf(sink->message, sizeof(sink->message), "expected a grayscale PNG (color type %d)", color);
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  if (raw_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);
  out->width = static_cast<int>(w);
  out->height = static_cast<int>(h);
  out->bit_depth = depth;
  out->pixels.assign(static_cast<std::size_t>(w) * h, 0);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char>* rowbuf = new std::vector<unsigned char>(rowbytes);
  if (setjmp(png_jmpbuf(png))) {
    delete rowbuf;
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  for (png_uint_32 r = 0; r < h; ++r) {
    png_read_row(png, rowbuf->data(), nullptr);
    for (png_uint_32 c = 0; c < w; ++c) {
      std::uint16_t v;
      if (depth == 16) {
        std::memcpy(&v, rowbuf->data() + 2 * c, 2);
      } else {
        v = (*rowbuf)[c];
      }
      out->pixels[static_cast<std::size_t>(r) * w + c] = v;
    }
  }
  png_read_end(png, nullptr);
  delete rowbuf;
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode_png(std::FILE* fp, const GrayImage* img, const char* key, const char* text, PngErrorSink* sink) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, sink, png_error_to_sink, png_warning_ignore);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  const int depth = img->bit_depth;
  std::vector<unsigned char>* rowbuf =
      new std::vector<unsigned char>(static_cast<std::size_t>(img->width) * (depth == 16 ? 2 : 1));
  if (setjmp(png_jmpbuf(png))) {
    delete rowbuf;
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img->width), static_cast<png_uint_32>(img->height), depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_text chunk;
  if (key && *key) {
    std::memset(&chunk, 0, sizeof(chunk));
    chunk.compression = PNG_TEXT_COMPRESSION_NONE;
    chunk.key = const_cast<char*>(key);
    chunk.text = const_cast<char*>(text);
    chunk.text_length = std::strlen(text);
    png_set_text(png, info, &chunk, 1);
  }
  png_write_info(png, info);
  for (int r = 0; r < img->height; ++r) {
    for (int c = 0; c < img->width; ++c) {
      const std::uint16_t v = img->pixels[static_cast<std::size_t>(r) * img->width + c];
      if (depth == 16) {
        (*rowbuf)[2 * c] = static_cast<unsigned char>(v >> 8);
        (*rowbuf)[2 * c + 1] = static_cast<unsigned char>(v & 0xff);
      } else {
        (*rowbuf)[c] = static_cast<unsigned char>(v);
      }
    }
    png_write_row(png, rowbuf->data());
  }
  png_write_end(png, nullptr);
  delete rowbuf;
  png_destroy_write_struct(&png, &info);
  return true;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s, const fs::path& path, std::size_t line) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": cannot parse number '" + s + "'");
  }
  return v;
}

int parse_int(const std::string& s, const fs::path& path, std::size_t line) {
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": cannot parse integer '" + s + "'");
  }
  return v;
}

// Returns data rows (header checked and removed); blank lines are skipped.
std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::vector<std::string>& header_prefix,
                                               bool exact_header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file, expected a header");
  const auto header = split_csv(trim(line));
  const bool ok = exact_header ? header == header_prefix
                               : header.size() >= header_prefix.size() &&
                                     std::equal(header_prefix.begin(), header_prefix.end(), header.begin());
  if (!ok) throw DataError(path.string() + ": unexpected CSV header '" + trim(line) + "'");
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv(trim(line));
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(cells.size()));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

json parse_json_file(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

int json_int(const json& j, const char* key, const fs::path& path) {
  if (!j.contains(key) || !j[key].is_number_integer()) {
    throw DataError(path.string() + ": missing integer field '" + key + "'");
  }
  return j[key].get<int>();
}

std::vector<float> read_raw_floats(const fs::path& path, std::size_t count) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw DataError("cannot stat " + path.string());
  if (size != count * sizeof(float)) {
    throw DataError(path.string() + ": holds " + std::to_string(size) + " bytes, manifest implies " +
                    std::to_string(count * sizeof(float)));
  }
  std::vector<float> data(count);
  auto f = open_file(path, "rb");
  if (count && std::fread(data.data(), sizeof(float), count, f.get()) != count) {
    throw DataError(path.string() + ": short read");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : data) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = __builtin_bswap32(bits);
      v = std::bit_cast<float>(bits);
    }
  }
  return data;
}

void write_raw_floats(const fs::path& path, const std::vector<float>& data) {
  auto f = open_file(path, "wb");
  if constexpr (std::endian::native == std::endian::big) {
    for (float v : data) {
      const auto bits = __builtin_bswap32(std::bit_cast<std::uint32_t>(v));
      std::fwrite(&bits, 4, 1, f.get());
    }
  } else if (!data.empty() && std::fwrite(data.data(), sizeof(float), data.size(), f.get()) != data.size()) {
    throw DataError("short write to " + path.string());
  }
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write to " + path.string());
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw InvariantError("format_double: conversion failed");
  return std::string(buf, ptr);
}

GrayImage read_gray_png(const fs::path& path) {
  auto f = open_file(path, "rb");
  GrayImage img;
  PngErrorSink sink;
  if (!decode_png(f.get(), &img, &sink)) throw DataError(path.string() + ": " + sink.message);
  return img;
}

void write_gray_png(const fs::path& path, const GrayImage& img, const std::string& key, const std::string& text) {
  if (img.bit_depth != 8 && img.bit_depth != 16) throw InvalidArgument("write_gray_png: bit depth must be 8 or 16");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw InvalidArgument("write_gray_png: pixel buffer does not match dimensions");
  }
  auto f = open_file(path, "wb");
  PngErrorSink sink;
  if (!encode_png(f.get(), &img, key.c_str(), text.c_str(), &sink)) throw DataError(path.string() + ": " + sink.message);
}

fs::path classes_sidecar(const fs::path& png) {
  fs::path p = png;
  p.replace_extension(".classes.json");
  return p;
}

InstanceMap read_instance_map(const fs::path& png) {
  GrayImage img = read_gray_png(png);
  InstanceMap map;
  map.width = img.width;
  map.height = img.height;
  map.ids = std::move(img.pixels);
  const fs::path side = classes_sidecar(png);
  if (fs::exists(side)) {
    const json j = parse_json_file(side);
    if (!j.is_object()) throw DataError(side.string() + ": expected an object of \"id\": class");
    std::map<std::uint16_t, int> classes;
    for (const auto& [key, value] : j.items()) {
      int id = 0;
      auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
      if (ec != std::errc() || ptr != key.data() + key.size() || id < 1 || id > 65535 || !value.is_number_integer()) {
        throw DataError(side.string() + ": bad entry \"" + key + "\"");
      }
      classes[static_cast<std::uint16_t>(id)] = value.get<int>();
    }
    map.classes = std::move(classes);
  }
  try {
    map.validate();
  } catch (const DataError& e) {
    throw DataError(png.string() + ": " + e.what());
  }
  return map;
}

void write_instance_map(const fs::path& png, const InstanceMap& map, const std::string& provenance) {
  map.validate();
  GrayImage img{map.width, map.height, 16, map.ids};
  write_gray_png(png, img, provenance.empty() ? std::string() : "nucseg", provenance);
  const fs::path side = classes_sidecar(png);
  if (map.classes) {
    ordered_json j = ordered_json::object();
    for (const auto& [id, cls] : *map.classes) j[std::to_string(id)] = cls;
    write_text(side, j.dump(2) + "\n");
  } else if (fs::exists(side)) {
    fs::remove(side);
  }
}

BinaryMask read_mask_png(const fs::path& png) {
  const GrayImage img = read_gray_png(png);
  BinaryMask m(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) m.bits[i] = img.pixels[i] != 0 ? 1 : 0;
  return m;
}

void write_mask_png(const fs::path& png, const BinaryMask& mask) {
  GrayImage img{mask.width, mask.height, 8, {}};
  img.pixels.resize(mask.bits.size());
  for (std::size_t i = 0; i < mask.bits.size(); ++i) img.pixels[i] = mask.bits[i] ? 255 : 0;
  write_gray_png(png, img);
}

FloatGrid read_float_grid(const fs::path& manifest) {
  const json j = parse_json_file(manifest);
  if (!j.is_object()) throw DataError(manifest.string() + ": expected a JSON object");
  FloatGrid g;
  g.width = json_int(j, "width", manifest);
  g.height = json_int(j, "height", manifest);
  g.channels = json_int(j, "channels", manifest);
  if (g.width < 0 || g.height < 0 || g.channels < 1) throw DataError(manifest.string() + ": invalid dimensions");
  fs::path bin = manifest;
  bin.replace_extension(".bin");
  if (j.contains("file")) {
    if (!j["file"].is_string()) throw DataError(manifest.string() + ": 'file' must be a string");
    bin = manifest.parent_path() / j["file"].get<std::string>();
  }
  g.data = read_raw_floats(bin, static_cast<std::size_t>(g.width) * g.height * g.channels);
  return g;
}

void write_float_grid(const fs::path& manifest, const FloatGrid& grid) {
  if (grid.data.size() != static_cast<std::size_t>(grid.width) * grid.height * grid.channels) {
    throw InvalidArgument("write_float_grid: buffer does not match dimensions");
  }
  fs::path bin = manifest;
  bin.replace_extension(".bin");
  ordered_json j;
  j["width"] = grid.width;
  j["height"] = grid.height;
  j["channels"] = grid.channels;
  j["file"] = bin.filename().string();
  write_text(manifest, j.dump(2) + "\n");
  write_raw_floats(bin, grid.data);
}

ProbabilityMap read_probability_map(const fs::path& manifest) {
  FloatGrid g = read_float_grid(manifest);
  if (g.channels != 1) throw DataError(manifest.string() + ": probability map must have 1 channel");
  ProbabilityMap p;
  p.width = g.width;
  p.height = g.height;
  p.values = std::move(g.data);
  try {
    p.validate();
  } catch (const DataError& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  return p;
}

void write_probability_map(const fs::path& manifest, const ProbabilityMap& prob) {
  write_float_grid(manifest, {prob.width, prob.height, 1, prob.values});
}

FeaturePyramid read_feature_pyramid(const fs::path& manifest, int image_width, int image_height) {
  const json j = parse_json_file(manifest);
  const json& levels = j.is_object() && j.contains("levels") ? j["levels"] : j;
  if (!levels.is_array()) throw DataError(manifest.string() + ": expected an array of levels");
  FeaturePyramid pyr;
  pyr.image_width = image_width;
  pyr.image_height = image_height;
  for (const auto& lj : levels) {
    FeatureLevel lvl;
    lvl.j = json_int(lj, "j", manifest);
    lvl.width = json_int(lj, "width", manifest);
    lvl.height = json_int(lj, "height", manifest);
    lvl.channels = json_int(lj, "channels", manifest);
    if (!lj.contains("file") || !lj["file"].is_string()) throw DataError(manifest.string() + ": level without 'file'");
    if (lvl.width < 0 || lvl.height < 0 || lvl.channels < 1) throw DataError(manifest.string() + ": invalid level size");
    lvl.data = read_raw_floats(manifest.parent_path() / lj["file"].get<std::string>(),
                               static_cast<std::size_t>(lvl.width) * lvl.height * lvl.channels);
    pyr.levels.push_back(std::move(lvl));
  }
  try {
    pyr.validate();
  } catch (const DataError& e) {
    throw DataError(manifest.string() + ": " + e.what());
  }
  return pyr;
}

void write_feature_pyramid(const fs::path& manifest, const FeaturePyramid& pyramid) {
  pyramid.validate();
  ordered_json levels = ordered_json::array();
  for (const auto& lvl : pyramid.levels) {
    const std::string file = manifest.stem().string() + "_P" + std::to_string(lvl.j) + ".bin";
    ordered_json lj;
    lj["j"] = lvl.j;
    lj["width"] = lvl.width;
    lj["height"] = lvl.height;
    lj["channels"] = lvl.channels;
    lj["file"] = file;
    levels.push_back(lj);
    write_raw_floats(manifest.parent_path() / file, lvl.data);
  }
  write_text(manifest, levels.dump(2) + "\n");
}

GroundTruthPoints read_points_csv(const fs::path& path) {
  GroundTruthPoints out;
  std::size_t line = 1;
  for (const auto& row : read_csv(path, {"x", "y", "class", "score"}, true)) {
    ++line;
    LabeledPoint p;
    p.pos = {parse_double(row[0], path, line), parse_double(row[1], path, line)};
    p.cls = row[2].empty() ? 1 : parse_int(row[2], path, line);
    if (!row[3].empty()) p.score = parse_double(row[3], path, line);
    out.push_back(p);
  }
  return out;
}

void write_points_csv(const fs::path& path, const GroundTruthPoints& points) {
  std::string s = "x,y,class,score\n";
  for (const auto& p : points) {
    s += format_double(p.pos.x) + "," + format_double(p.pos.y) + "," + std::to_string(p.cls) + "," +
         (p.score ? format_double(*p.score) : std::string()) + "\n";
  }
  write_text(path, s);
}

std::vector<Prompt> read_prompts_csv(const fs::path& path) {
  std::vector<Prompt> out;
  for (const auto& p : read_points_csv(path)) out.push_back({p.pos, p.cls, p.score.value_or(1.0)});
  return out;
}

std::vector<PromptCandidate> read_candidates_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string first;
  std::getline(in, first);
  const auto header = split_csv(trim(first));
  if (header.size() < 4 || header[0] != "x" || header[1] != "y") {
    throw DataError(path.string() + ": candidates header must be x,y,logit_0,...,logit_C");
  }
  for (std::size_t k = 2; k < header.size(); ++k) {
    if (header[k] != "logit_" + std::to_string(k - 2)) {
      throw DataError(path.string() + ": unexpected column '" + header[k] + "'");
    }
  }
  std::vector<PromptCandidate> out;
  std::size_t line = 1;
  for (const auto& row : read_csv(path, header, true)) {
    ++line;
    PromptCandidate c;
    c.position = {parse_double(row[0], path, line), parse_double(row[1], path, line)};
    for (std::size_t k = 2; k < row.size(); ++k) c.logits.push_back(parse_double(row[k], path, line));
    out.push_back(std::move(c));
  }
  return out;
}

void write_candidates_csv(const fs::path& path, const std::vector<PromptCandidate>& cands) {
  const std::size_t width = cands.empty() ? 2 : cands.front().logits.size();
  std::string s = "x,y";
  for (std::size_t k = 0; k < width; ++k) s += ",logit_" + std::to_string(k);
  s += "\n";
  for (const auto& c : cands) {
    if (c.logits.size() != width) throw InvalidArgument("write_candidates_csv: ragged logits");
    s += format_double(c.position.x) + "," + format_double(c.position.y);
    for (double l : c.logits) s += "," + format_double(l);
    s += "\n";
  }
  write_text(path, s);
}

std::vector<Point> read_offsets_csv(const fs::path& path) {
  std::vector<Point> out;
  std::size_t line = 1;
  for (const auto& row : read_csv(path, {"dx", "dy"}, true)) {
    ++line;
    out.push_back({parse_double(row[0], path, line), parse_double(row[1], path, line)});
  }
  return out;
}

}  // namespace nucseg::io
