#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "confoundnet/pose.hpp"
#include "confoundnet/tensor.hpp"

namespace confoundnet {

enum class Split { train, test };

std::string_view to_string(Split split) noexcept;
std::optional<Split> parse_split(std::string_view text) noexcept;

/// One centered target image with its labels.
struct Chip {
  Tensor image;  // 1 x H x W
  int class_label = 0;
  /// Absent only for ingested rows without pose metadata.
  std::optional<Azimuth> azimuth;
  /// Emulated depression angle, degrees.
  double nuisance = 0.0;
  Split split = Split::train;
  bool augmented = false;
  std::string name;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Chip> chips;

  std::vector<Chip> split(Split which) const;
  /// Rows lacking an azimuth; such data only supports lambda = 0 training.
  std::size_t missing_azimuth_count() const;
  std::size_t height() const;
  std::size_t width() const;
};

/// Synthetic rotating-target generator settings.
struct SynthConfig {
  std::size_t classes = 4;
  std::size_t image_size = 32;
  std::size_t train_per_class = 400;
  std::size_t test_per_class = 100;
  double train_nuisance = 17.0;
  double test_nuisance = 15.0;
  double nuisance_jitter = 1.0;
  /// Relative size change per degree of nuisance away from train_nuisance.
  double scale_per_degree = 0.02;
  double noise_std = 0.9;
  double speckle_std = 0.5;
  std::uint64_t seed = 2017;

  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

/// Class templates: binary, mirror-symmetric about the vertical axis, and
/// front/back asymmetric so a half turn changes the image.
std::vector<Tensor> make_templates(const SynthConfig& cfg);

/// Rotates `tmpl` by `azimuth` (bilinear, zero outside) and rescales it by the
/// nuisance value. Speckle and additive noise are drawn from `noise_rng` when
/// one is given; without it the rendering is noise-free.
Tensor render_chip(const Tensor& tmpl, Azimuth azimuth, double nuisance, const SynthConfig& cfg,
                   std::mt19937_64* noise_rng = nullptr);

/// Fraction of pixels where two chips differ by more than `threshold` after
/// per-chip standardization.
double differing_fraction(const Tensor& a, const Tensor& b, double threshold);

/// Train and test chips for every class. Chip randomness derives from
/// (seed, class, split, index) only.
Dataset synth_generate(const SynthConfig& cfg);

/// Left-right mirror with negated azimuth.
Chip flip_chip(const Chip& chip);

/// Originals followed by their mirrors. Throws UsageError on test chips.
std::vector<Chip> flip_augment(std::span<const Chip> train);

/// Zero mean, unit variance per image; constant images become all zeros.
Tensor normalize_image(const Tensor& image);
std::vector<Chip> normalize(std::vector<Chip> chips);

inline constexpr const char* kMetadataFile = "metadata.csv";
inline constexpr const char* kClassesFile = "classes.txt";

/// Writes metadata.csv, classes.txt and one raster per chip.
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Raster files. Writing always produces the float64 "Pd" variant; reading
// also accepts 8/16-bit PGM (P2, P5) and float32 PFM (Pf).
void write_raster(const std::filesystem::path& path, const Tensor& image);
Tensor read_raster(const std::filesystem::path& path);

}  // namespace confoundnet
