#pragma once

#include <string>

#include "json.hpp"
#include "nucseg/corpus.hpp"
#include "nucseg/losses.hpp"
#include "nucseg/pipeline.hpp"

namespace nucseg {

struct PrompterSettings {
  int step = 16;
  double alpha = 0.05;
  double beta = 0.5;
  double gamma = 0.05;
};

struct MetricsSettings {
  double radius_px = 12.0;
  double mpp = 0.25;
  int classes = 5;
};

/// Effective settings of a CLI run. Every field is optional in the JSON file.
struct RunConfig {
  SynthConfig synth;
  int n_images = 1;
  PrompterSettings prompter;
  SamLossConfig sam_loss;
  PipelineConfig pipeline;
  MetricsSettings metrics;

  /// Throws DataError on unknown sections/keys or mistyped values.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::ordered_json to_json() const;
  void validate() const;
};

}  // namespace nucseg
