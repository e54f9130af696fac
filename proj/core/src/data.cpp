#include "confoundnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "confoundnet/error.hpp"

namespace confoundnet {

namespace {

constexpr std::size_t kTemplateAttempts = 100;
constexpr double kAsymmetryFraction = 0.10;
constexpr double kAsymmetryThreshold = 0.1;

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t p : parts) {
    words.push_back(static_cast<std::uint32_t>(p & 0xffffffffU));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

// Shape primitives in normalized template coordinates: u to the right, v down,
// both in [-0.5, 0.5]. The target's front points up (v < 0).
struct Box {
  double u0, u1, v0, v1;
  bool contains(double u, double v) const { return u >= u0 && u <= u1 && v >= v0 && v <= v1; }
};
struct Disk {
  double u, v, r;
  bool contains(double x, double y) const {
    return (x - u) * (x - u) + (y - v) * (y - v) <= r * r;
  }
};

Tensor draw_template(std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<Box> boxes;
  std::vector<Disk> disks;
  const double body_w = between(0.08, 0.16);
  const double body_l = between(0.20, 0.32);
  const double body_shift = between(-0.04, 0.08);
  boxes.push_back({-body_w, body_w, -body_l + body_shift, body_l + body_shift});
  // Turret and barrel point forward.
  const double turret_v = between(-0.12, 0.10);
  const double turret_r = between(0.06, 0.12);
  disks.push_back({0.0, turret_v, turret_r});
  const double barrel_w = between(0.015, 0.035);
  const double barrel_end = between(-0.44, -0.30);
  boxes.push_back({-barrel_w, barrel_w, barrel_end, turret_v});
  // Mirrored side features.
  const int extras = 1 + static_cast<int>(unit(rng) * 3.0);
  for (int i = 0; i < extras; ++i) {
    const double u = between(0.05, 0.22);
    const double v = between(-0.25, 0.35);
    const double hw = between(0.02, 0.07);
    const double hl = between(0.02, 0.10);
    boxes.push_back({u - hw, u + hw, v - hl, v + hl});
    boxes.push_back({-u - hw, -u + hw, v - hl, v + hl});
  }

  Tensor tmpl(Shape{1, size, size});
  const double center = 0.5 * static_cast<double>(size - 1);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      // Pixel centers symmetric about the vertical axis keep the template
      // exactly mirror-symmetric.
      const double u = (static_cast<double>(c) - center) / static_cast<double>(size);
      const double v = (static_cast<double>(r) - center) / static_cast<double>(size);
      const double au = std::abs(u);
      bool on = false;
      for (const Box& b : boxes) on = on || b.contains(au, v) || b.contains(-au, v);
      for (const Disk& d : disks) on = on || d.contains(au, v);
      tmpl[r * size + c] = on ? 1.0 : 0.0;
    }
  }
  return tmpl;
}

double sample_bilinear(const Tensor& img, std::size_t size, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
  const auto n = static_cast<std::ptrdiff_t>(size);
  auto at = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
    return (xx >= 0 && xx < n && yy >= 0 && yy < n) ? img[static_cast<std::size_t>(yy * n + xx)]
                                                    : 0.0;
  };
  if (ax == 0.0 && ay == 0.0) return at(y0, x0);
  return (1.0 - ay) * ((1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
         ay * ((1.0 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
}

bool asymmetric_enough(const Tensor& tmpl, const SynthConfig& cfg) {
  const Tensor front = render_chip(tmpl, Azimuth(0.0), cfg.train_nuisance, cfg);
  const Tensor back = render_chip(tmpl, Azimuth(std::numbers::pi), cfg.train_nuisance, cfg);
  return differing_fraction(front, back, kAsymmetryThreshold) >= kAsymmetryFraction;
}

Chip make_chip(const Tensor& tmpl, const SynthConfig& cfg, std::size_t cls, Split split,
               std::size_t index) {
  std::mt19937_64 rng = seeded({cfg.seed, 0x63686970ULL, cls, split == Split::train ? 0U : 1U, index});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Azimuth azimuth(2.0 * std::numbers::pi * unit(rng));
  // Train nuisance lies in (c - j, c + j], test in [c - j, c + j).
  const double u = unit(rng);
  const double nuisance = split == Split::train
                              ? cfg.train_nuisance + cfg.nuisance_jitter * (1.0 - 2.0 * u)
                              : cfg.test_nuisance + cfg.nuisance_jitter * (2.0 * u - 1.0);
  Chip chip;
  chip.image = render_chip(tmpl, azimuth, nuisance, cfg, &rng);
  chip.class_label = static_cast<int>(cls);
  chip.azimuth = azimuth;
  chip.nuisance = nuisance;
  chip.split = split;
  chip.name = std::string(to_string(split)) + "_c" + std::to_string(cls) + "_" +
              std::to_string(index);
  return chip;
}

}  // namespace

std::string_view to_string(Split split) noexcept {
  return split == Split::train ? "train" : "test";
}

std::optional<Split> parse_split(std::string_view text) noexcept {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  return std::nullopt;
}

std::vector<Chip> Dataset::split(Split which) const {
  std::vector<Chip> out;
  for (const Chip& c : chips) {
    if (c.split == which) out.push_back(c);
  }
  return out;
}

std::size_t Dataset::missing_azimuth_count() const {
  return static_cast<std::size_t>(
      std::count_if(chips.begin(), chips.end(), [](const Chip& c) { return !c.azimuth; }));
}

std::size_t Dataset::height() const { return chips.empty() ? 0 : chips.front().image.dim(1); }
std::size_t Dataset::width() const { return chips.empty() ? 0 : chips.front().image.dim(2); }

void SynthConfig::validate() const {
  if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (image_size < 4) throw ConfigError("synthetic image size must be at least 4");
  if (train_per_class == 0 && test_per_class == 0) {
    throw ConfigError("synthetic data needs at least one chip per class");
  }
  if (!(noise_std >= 0.0) || !(speckle_std >= 0.0) || !(nuisance_jitter >= 0.0)) {
    throw ConfigError("noise, speckle and jitter must be nonnegative");
  }
  if (!std::isfinite(train_nuisance) || !std::isfinite(test_nuisance) ||
      !std::isfinite(scale_per_degree)) {
    throw ConfigError("nuisance settings must be finite");
  }
  const double lo = std::min(train_nuisance, test_nuisance) - nuisance_jitter;
  const double hi = std::max(train_nuisance, test_nuisance) + nuisance_jitter;
  for (double n : {lo, hi}) {
    if (!(1.0 + scale_per_degree * (n - train_nuisance) > 0.0)) {
      throw ConfigError("nuisance scaling would shrink the target to nothing");
    }
  }
}

std::vector<Tensor> make_templates(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<Tensor> templates;
  for (std::size_t cls = 0; cls < cfg.classes; ++cls) {
    bool found = false;
    for (std::size_t attempt = 0; attempt < kTemplateAttempts && !found; ++attempt) {
      std::mt19937_64 rng = seeded({cfg.seed, 0x746d706cULL, cls, attempt});
      Tensor tmpl = draw_template(cfg.image_size, rng);
      if (!asymmetric_enough(tmpl, cfg)) continue;
      const bool duplicate = std::any_of(templates.begin(), templates.end(), [&](const Tensor& t) {
        return differing_fraction(t, tmpl, kAsymmetryThreshold) < 0.02;
      });
      if (duplicate) continue;
      templates.push_back(std::move(tmpl));
      found = true;
    }
    if (!found) {
      throw ConfigError("could not draw a distinct rotation-asymmetric template for class " +
                        std::to_string(cls) + " at image size " + std::to_string(cfg.image_size));
    }
  }
  return templates;
}

Tensor render_chip(const Tensor& tmpl, Azimuth azimuth, double nuisance, const SynthConfig& cfg,
                   std::mt19937_64* noise_rng) {
  const std::size_t size = tmpl.dim(1);
  const double scale = 1.0 + cfg.scale_per_degree * (nuisance - cfg.train_nuisance);
  const double center = 0.5 * static_cast<double>(size - 1);
  const double c = std::cos(azimuth.radians());
  const double s = std::sin(azimuth.radians());
  Tensor out(Shape{1, size, size});
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t col = 0; col < size; ++col) {
      const double dx = static_cast<double>(col) - center;
      const double dy = static_cast<double>(r) - center;
      const double sx = (c * dx + s * dy) / scale + center;
      const double sy = (-s * dx + c * dy) / scale + center;
      out[r * size + col] = sample_bilinear(tmpl, size, sx, sy);
    }
  }
  if (noise_rng != nullptr) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : out.data()) {
      const double n1 = normal(*noise_rng);
      const double n2 = normal(*noise_rng);
      v = v * (1.0 + cfg.speckle_std * n1) + cfg.noise_std * n2;
    }
  }
  return out;
}

double differing_fraction(const Tensor& a, const Tensor& b, double threshold) {
  if (a.shape() != b.shape()) throw DimensionError("differing_fraction needs equal shapes");
  const Tensor na = normalize_image(a);
  const Tensor nb = normalize_image(b);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (std::abs(na[i] - nb[i]) > threshold) ++differ;
  }
  return static_cast<double>(differ) / static_cast<double>(na.size());
}

Dataset synth_generate(const SynthConfig& cfg) {
  const std::vector<Tensor> templates = make_templates(cfg);
  Dataset ds;
  for (std::size_t cls = 0; cls < cfg.classes; ++cls) {
    ds.class_names.push_back("class_" + std::to_string(cls));
  }
  for (Split split : {Split::train, Split::test}) {
    const std::size_t count = split == Split::train ? cfg.train_per_class : cfg.test_per_class;
    for (std::size_t cls = 0; cls < cfg.classes; ++cls) {
      for (std::size_t i = 0; i < count; ++i) {
        ds.chips.push_back(make_chip(templates[cls], cfg, cls, split, i));
      }
    }
  }
  return ds;
}

Chip flip_chip(const Chip& chip) {
  Chip out = chip;
  const std::size_t h = chip.image.dim(1), w = chip.image.dim(2);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) out.image[r * w + c] = chip.image[r * w + (w - 1 - c)];
  }
  if (chip.azimuth) out.azimuth = negate_azimuth(*chip.azimuth);
  out.augmented = !chip.augmented;
  out.name = chip.augmented && chip.name.ends_with("_flip")
                 ? chip.name.substr(0, chip.name.size() - 5)
                 : chip.name + "_flip";
  return out;
}

std::vector<Chip> flip_augment(std::span<const Chip> train) {
  for (const Chip& c : train) {
    if (c.split != Split::train) {
      throw UsageError("flip augmentation is train-only; got test chip '" + c.name + "'");
    }
  }
  std::vector<Chip> out(train.begin(), train.end());
  out.reserve(2 * train.size());
  for (const Chip& c : train) out.push_back(flip_chip(c));
  return out;
}

Tensor normalize_image(const Tensor& image) {
  const auto n = static_cast<double>(image.size());
  double mean = 0.0;
  for (double v : image.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : image.data()) var += (v - mean) * (v - mean);
  const double std_dev = std::sqrt(var / n);
  Tensor out(image.shape());
  if (!(std_dev > 1e-12 * std::max(1.0, std::abs(mean)))) return out;
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = (image[i] - mean) / std_dev;
  return out;
}

std::vector<Chip> normalize(std::vector<Chip> chips) {
  for (Chip& c : chips) c.image = normalize_image(c.image);
  return chips;
}

}  // namespace confoundnet
