#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "confoundnet/checkpoint.hpp"
#include "confoundnet/data.hpp"
#include "confoundnet_cli/run_config.hpp"

namespace confoundnet::cli {

/// Flags shared by every subcommand.
struct Options {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool strip_pose = false;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> data;
};

inline constexpr const char* kResolvedConfigFile = "resolved_config.json";
inline constexpr const char* kCheckpointFile = "checkpoint.ckpt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kConfusionFile = "confusion.csv";
inline constexpr const char* kAbFile = "ab.csv";

/// Config from --config (or defaults) with --seed and --out applied.
RunConfig resolve_config(const Options& options, bool seed_sets_data = false);

/// Normalized train and test chips plus class names for a data source.
struct PreparedData {
  std::vector<std::string> class_names;
  std::vector<Chip> train;
  std::vector<Chip> test;
};
PreparedData prepare_data(const DataSource& source);

/// The network config with input geometry and class count taken from the
/// data. Throws ConfigError if the config states different values.
NetworkConfig fit_network_to_data(const RunConfig& config, const PreparedData& data);

// Every command returns the process exit code and reports on `out`. Library
// errors propagate as exceptions; main() maps them to exit codes.

int cmd_gen_data(const Options& options, std::ostream& out);
int cmd_train(const Options& options, std::ostream& out);
int cmd_eval(const Options& options, std::ostream& out);
int cmd_ab(const Options& options, std::ostream& out, std::ostream& warn);

/// One line of the gradient verification report.
struct GradcheckLine {
  std::string component;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t instances = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// Test hook: called on every analytic gradient before comparison, with the
/// component name. Lets a fixture corrupt one backward pass.
using GradientTamper = std::function<void(const std::string& component, std::vector<double>& grad)>;

std::vector<GradcheckLine> run_gradcheck(const GradcheckSettings& settings,
                                         const GradientTamper& tamper = {});
int cmd_gradcheck(const Options& options, std::ostream& out, const GradientTamper& tamper = {});

/// Parses CONFOUNDNET_THREADS; 1 when unset or invalid.
std::size_t worker_threads();

/// Entry point shared by the executable and the tests: parses argv, runs the
/// subcommand, maps errors to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace confoundnet::cli
