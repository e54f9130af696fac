#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "confoundnet/data.hpp"
#include "confoundnet/json_io.hpp"
#include "confoundnet/network.hpp"
#include "confoundnet/trainer.hpp"

namespace confoundnet::cli {

/// Where chips come from: the synthetic generator, or a dataset directory in
/// the metadata.csv layout.
struct DataSource {
  SynthConfig synthetic;
  std::optional<std::filesystem::path> path;
  /// Add left-right mirrors of the training chips.
  bool flip_augment = true;
};

/// Settings for the finite-difference verification run.
struct GradcheckSettings {
  std::size_t instances = 20;
  double eps = 1e-5;
  double smooth_tolerance = 1e-6;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
  /// Network used for the whole-objective check; small so the sweep is quick.
  NetworkConfig network = default_network();
  double init_std = 0.25;
  std::size_t batch = 3;

  static NetworkConfig default_network();
};

struct RunConfig {
  DataSource data;
  NetworkConfig network;
  HyperParams train;
  std::filesystem::path output_dir = "run";
  std::vector<std::uint64_t> ab_seeds = {1, 2, 3, 4, 5};
  GradcheckSettings gradcheck;
};

/// Parses a config document. Missing keys keep their defaults; unknown keys
/// throw ConfigError.
RunConfig run_config_from_json(const Json& j);
Json to_json(const RunConfig& config);

/// Reads and parses a config file. Relative paths inside it are relative to
/// the working directory.
RunConfig load_run_config(const std::filesystem::path& path);

/// Writes `config` as indented JSON.
void write_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace confoundnet::cli
