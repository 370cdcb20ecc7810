#include "nucseg/config.hpp"

#include <functional>
#include <map>

#include "nucseg/error.hpp"
#include "nucseg/io.hpp"

namespace nucseg {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

using Setter = std::function<void(const json&)>;

template <typename T>
Setter field(T& dst, const std::string& where) {
  return [&dst, where](const json& v) {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw DataError("config: " + where + " must be a number");
      dst = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw DataError("config: " + where + " must be a non-negative integer");
      dst = v.get<std::uint64_t>();
    } else {
      if (!v.is_number_integer()) throw DataError("config: " + where + " must be an integer");
      dst = v.get<T>();
    }
  };
}

void apply_section(const json& j, const std::string& name, const std::map<std::string, Setter>& fields) {
  if (!j.is_object()) throw DataError("config: section '" + name + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw DataError("config: unknown key '" + name + "." + key + "'");
    it->second(value);
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw DataError("config: top level must be an object");
  RunConfig c;
  for (const auto& [section, body] : j.items()) {
    if (section == "synth") {
      apply_section(body, section,
                    {{"width", field(c.synth.width, "synth.width")},
                     {"height", field(c.synth.height, "synth.height")},
                     {"min_count", field(c.synth.min_count, "synth.min_count")},
                     {"max_count", field(c.synth.max_count, "synth.max_count")},
                     {"min_axis", field(c.synth.min_axis, "synth.min_axis")},
                     {"max_axis", field(c.synth.max_axis, "synth.max_axis")},
                     {"overlap", field(c.synth.overlap, "synth.overlap")},
                     {"classes", field(c.synth.num_classes, "synth.classes")},
                     {"seed", field(c.synth.seed, "synth.seed")},
                     {"n_images", field(c.n_images, "synth.n_images")}});
    } else if (section == "prompter") {
      apply_section(body, section,
                    {{"step", field(c.prompter.step, "prompter.step")},
                     {"alpha", field(c.prompter.alpha, "prompter.alpha")},
                     {"beta", field(c.prompter.beta, "prompter.beta")},
                     {"gamma", field(c.prompter.gamma, "prompter.gamma")}});
    } else if (section == "sam_loss") {
      apply_section(body, section,
                    {{"omega", field(c.sam_loss.omega, "sam_loss.omega")},
                     {"focal_gamma", field(c.sam_loss.focal_gamma, "sam_loss.focal_gamma")},
                     {"focal_alpha", field(c.sam_loss.focal_alpha, "sam_loss.focal_alpha")},
                     {"dice_smooth", field(c.sam_loss.dice_smooth, "sam_loss.dice_smooth")}});
    } else if (section == "pipeline") {
      apply_section(body, section,
                    {{"tile", field(c.pipeline.tile, "pipeline.tile")},
                     {"overlap", field(c.pipeline.overlap, "pipeline.overlap")},
                     {"k_neg", field(c.pipeline.k_negatives, "pipeline.k_neg")},
                     {"prob_threshold", field(c.pipeline.prob_threshold, "pipeline.prob_threshold")},
                     {"nms_iou", field(c.pipeline.nms_iou, "pipeline.nms_iou")}});
    } else if (section == "metrics") {
      apply_section(body, section,
                    {{"radius_px", field(c.metrics.radius_px, "metrics.radius_px")},
                     {"mpp", field(c.metrics.mpp, "metrics.mpp")},
                     {"classes", field(c.metrics.classes, "metrics.classes")}});
    } else {
      throw DataError("config: unknown section '" + section + "'");
    }
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw DataError(path + ": invalid JSON (" + e.what() + ")");
  }
  return from_json(j);
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["synth"] = {{"width", synth.width},         {"height", synth.height},     {"min_count", synth.min_count},
                {"max_count", synth.max_count}, {"min_axis", synth.min_axis}, {"max_axis", synth.max_axis},
                {"overlap", synth.overlap},     {"classes", synth.num_classes}, {"seed", synth.seed},
                {"n_images", n_images}};
  j["prompter"] = {{"step", prompter.step}, {"alpha", prompter.alpha}, {"beta", prompter.beta},
                   {"gamma", prompter.gamma}};
  j["sam_loss"] = {{"omega", sam_loss.omega},
                   {"focal_gamma", sam_loss.focal_gamma},
                   {"focal_alpha", sam_loss.focal_alpha},
                   {"dice_smooth", sam_loss.dice_smooth}};
  j["pipeline"] = {{"tile", pipeline.tile},
                   {"overlap", pipeline.overlap},
                   {"k_neg", pipeline.k_negatives},
                   {"prob_threshold", pipeline.prob_threshold},
                   {"nms_iou", pipeline.nms_iou}};
  j["metrics"] = {{"radius_px", metrics.radius_px}, {"mpp", metrics.mpp}, {"classes", metrics.classes}};
  return j;
}

void RunConfig::validate() const {
  synth.validate();
  if (n_images < 1) throw InvalidArgument("synth.n_images must be >= 1");
  if (prompter.step < 1) throw InvalidArgument("prompter.step must be >= 1");
  if (!(prompter.alpha >= 0.0)) throw InvalidArgument("prompter.alpha must be >= 0");
  PrompterLossConfig{prompter.beta, prompter.gamma}.validate();
  sam_loss.validate();
  pipeline.validate();
  if (!(metrics.radius_px > 0.0)) throw InvalidArgument("metrics.radius_px must be > 0");
  if (!(metrics.mpp > 0.0)) throw InvalidArgument("metrics.mpp must be > 0");
  if (metrics.classes < 1) throw InvalidArgument("metrics.classes must be >= 1");
}

}  // namespace nucseg
