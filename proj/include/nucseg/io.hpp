#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "nucseg/assignment.hpp"
#include "nucseg/corpus.hpp"
#include "nucseg/pipeline.hpp"
#include "nucseg/prompter_geom.hpp"

namespace nucseg::io {

namespace fs = std::filesystem;

struct GrayImage {
  int width = 0;
  int height = 0;
  int bit_depth = 16;
  std::vector<std::uint16_t> pixels;
};

/// Grayscale PNG, 8 or 16 bits per sample (other bit depths are expanded to 8).
GrayImage read_gray_png(const fs::path& path);
/// `text` (when non-empty) is stored in a tEXt chunk under `key`.
void write_gray_png(const fs::path& path, const GrayImage& img, const std::string& key = {},
                    const std::string& text = {});

/// `<dir>/<stem>.classes.json` next to `<dir>/<stem>.png`.
fs::path classes_sidecar(const fs::path& png);

/// 16-bit grayscale PNG plus optional class sidecar. The map is validated.
InstanceMap read_instance_map(const fs::path& png);
void write_instance_map(const fs::path& png, const InstanceMap& map, const std::string& provenance = {});

BinaryMask read_mask_png(const fs::path& png);
void write_mask_png(const fs::path& png, const BinaryMask& mask);

/// Channel-major float32 grid.
struct FloatGrid {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;
};

/// Manifest `{ "width", "height", "channels" }` next to raw little-endian
/// float32 data in `<stem>.bin` (or the manifest's optional "file" entry).
FloatGrid read_float_grid(const fs::path& manifest);
void write_float_grid(const fs::path& manifest, const FloatGrid& grid);

ProbabilityMap read_probability_map(const fs::path& manifest);
void write_probability_map(const fs::path& manifest, const ProbabilityMap& prob);

/// Manifest is a JSON array (or {"levels": [...]}) of
/// {"j","width","height","channels","file"} entries.
FeaturePyramid read_feature_pyramid(const fs::path& manifest, int image_width, int image_height);
void write_feature_pyramid(const fs::path& manifest, const FeaturePyramid& pyramid);

/// CSV `x,y,class,score`; score is blank for ground truth.
GroundTruthPoints read_points_csv(const fs::path& path);
void write_points_csv(const fs::path& path, const GroundTruthPoints& points);
std::vector<Prompt> read_prompts_csv(const fs::path& path);

/// CSV `x,y,logit_0,...,logit_C`.
std::vector<PromptCandidate> read_candidates_csv(const fs::path& path);
void write_candidates_csv(const fs::path& path, const std::vector<PromptCandidate>& cands);

/// CSV `dx,dy`, one row per anchor.
std::vector<Point> read_offsets_csv(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace nucseg::io
