#pragma once

// Flat `namespace.key = value` run configuration shared by every subcommand.
// Blank lines and `#` comments are ignored; unknown keys are rejected.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/datasets.hpp"
#include "xmodal/evaluation.hpp"
#include "xmodal/model.hpp"
#include "xmodal/trainer.hpp"

namespace xmodal {

struct DataConfig {
  std::filesystem::path root;
  DatasetLayout layout = DatasetLayout::generic;
  std::optional<double> test_fraction;
  std::optional<std::size_t> test_count;
  std::optional<std::size_t> per_scene_count;
  std::uint64_t split_seed = 0;
};

struct SweepConfig {
  std::vector<double> lambdas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct SynthConfig {
  std::size_t n = 40;
  int size = 128;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> source;
};

using Assignment = std::pair<std::string, std::string>;

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalOptions eval;
  SweepConfig sweep;
  SynthConfig synth;

  /// Sets one key. Throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);

  /// Applies the last `trainer.preset` first, then every other assignment in order,
  /// so explicit keys always override preset values.
  static RunConfig resolve(const std::vector<Assignment>& assignments);

  /// Every key with its resolved value, one `key = value` per line.
  std::string to_text() const;

  /// The explicit data.* split when one is given, else the layout's default split.
  SplitRequest split_request() const;
  SyntheticParams synth_params() const;

  void validate() const;
};

/// Parses a config file into assignments (file order). Line numbers appear in errors.
std::vector<Assignment> read_config_file(const std::filesystem::path& path);
/// Parses "key=value".
Assignment parse_assignment(const std::string& text);

}  // namespace xmodal
