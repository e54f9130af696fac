#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "confoundnet/error.hpp"
#include "confoundnet/data.hpp"

using namespace confoundnet;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_config() {
  SynthConfig c;
  c.train_per_class = 5;
  c.test_per_class = 3;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("confoundnet_test_data_" + name);
  fs::remove_all(dir);
  return dir;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(SynthConfig, Validation) {
  EXPECT_NO_THROW(SynthConfig{}.validate());
  SynthConfig c;
  c.classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig{};
  c.noise_std = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SynthGenerate, NoiseFreeAzimuthZeroEqualsTemplate) {
  SynthConfig c;
  c.noise_std = 0.0;
  c.speckle_std = 0.0;
  const auto templates = make_templates(c);
  ASSERT_EQ(templates.size(), 4u);
  for (const Tensor& t : templates) {
    EXPECT_TRUE(bitwise_equal(render_chip(t, Azimuth(0.0), c.train_nuisance, c), t));
    for (double v : t.data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
}

TEST(SynthGenerate, TemplatesAreRotationAsymmetricAndDistinct) {
  const SynthConfig c;
  const auto templates = make_templates(c);
  for (std::size_t i = 0; i < templates.size(); ++i) {
    const Tensor front = render_chip(templates[i], Azimuth(0.0), c.train_nuisance, c);
    const Tensor back = render_chip(templates[i], Azimuth(std::numbers::pi), c.train_nuisance, c);
    EXPECT_GE(differing_fraction(front, back, 0.1), 0.10);
    for (std::size_t j = 0; j < i; ++j) EXPECT_GT(differing_fraction(templates[i], templates[j], 0.1), 0.0);
  }
}

TEST(SynthGenerate, CountsSplitsAndNuisanceRanges) {
  const Dataset ds = synth_generate(SynthConfig{});
  EXPECT_EQ(ds.class_names.size(), 4u);
  EXPECT_EQ(ds.split(Split::train).size(), 1600u);
  EXPECT_EQ(ds.split(Split::test).size(), 400u);
  EXPECT_EQ(ds.missing_azimuth_count(), 0u);
  std::vector<std::size_t> per_class(4, 0);
  for (const Chip& chip : ds.chips) {
    ++per_class[static_cast<std::size_t>(chip.class_label)];
    EXPECT_EQ(chip.image.shape(), (Shape{1, 32, 32}));
    EXPECT_FALSE(chip.augmented);
    if (chip.split == Split::train) {
      EXPECT_GT(chip.nuisance, 16.0);
      EXPECT_LE(chip.nuisance, 18.0);
    } else {
      EXPECT_GE(chip.nuisance, 14.0);
      EXPECT_LT(chip.nuisance, 16.0);
    }
    EXPECT_NO_THROW(chip.image.check_finite("chip"));
  }
  for (std::size_t n : per_class) EXPECT_EQ(n, 500u);
}

TEST(SynthGenerate, SameSeedIsBitIdentical) {
  const Dataset a = synth_generate(tiny_config());
  const Dataset b = synth_generate(tiny_config());
  ASSERT_EQ(a.chips.size(), b.chips.size());
  for (std::size_t i = 0; i < a.chips.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(a.chips[i].image, b.chips[i].image));
    EXPECT_EQ(a.chips[i].azimuth, b.chips[i].azimuth);
    EXPECT_EQ(a.chips[i].nuisance, b.chips[i].nuisance);
  }
  SynthConfig other = tiny_config();
  other.seed = 99;
  EXPECT_FALSE(bitwise_equal(synth_generate(other).chips[0].image, a.chips[0].image));
}

TEST(SynthGenerate, ChipDependsOnlyOnItsIndex) {
  SynthConfig more = tiny_config();
  more.train_per_class = 9;
  const Dataset a = synth_generate(tiny_config());
  const Dataset b = synth_generate(more);
  // Chip 2 of class 0 in the train split is the third chip in both.
  EXPECT_TRUE(bitwise_equal(a.chips[2].image, b.chips[2].image));
}

TEST(FlipAugment, DoublesTrainSplitAndNegatesAzimuth) {
  const Dataset ds = synth_generate(tiny_config());
  const std::vector<Chip> train = ds.split(Split::train);
  const std::vector<Chip> out = flip_augment(train);
  ASSERT_EQ(out.size(), 2 * train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(out[i].image, train[i].image));
    EXPECT_FALSE(out[i].augmented);
    const Chip& f = out[train.size() + i];
    EXPECT_TRUE(f.augmented);
    EXPECT_EQ(f.class_label, train[i].class_label);
    EXPECT_EQ(f.split, Split::train);
    EXPECT_EQ(*f.azimuth, negate_azimuth(*train[i].azimuth));
    EXPECT_EQ(azimuth_dist(*f.azimuth, negate_azimuth(*train[i].azimuth)), 0.0);
    const std::size_t w = 32;
    EXPECT_EQ(f.image[5 * w + 0], train[i].image[5 * w + w - 1]);
  }
}

TEST(FlipAugment, SixThousandSeventyThreeOriginalsBecomeTwelveThousandOneHundredFortySix) {
  Chip chip;
  chip.image = Tensor(Shape{1, 2, 2});
  chip.azimuth = Azimuth(0.5);
  const std::vector<Chip> originals(6073, chip);
  EXPECT_EQ(flip_augment(originals).size(), 12146u);
}

TEST(FlipAugment, ZeroAzimuthIsAFixedPoint) {
  Chip chip;
  chip.image = Tensor(Shape{1, 2, 2});
  chip.azimuth = Azimuth(0.0);
  EXPECT_EQ(flip_chip(chip).azimuth->radians(), 0.0);
}

TEST(FlipAugment, DoubleFlipIsIdentity) {
  const Dataset ds = synth_generate(tiny_config());
  for (const Chip& c : ds.split(Split::train)) {
    const Chip twice = flip_chip(flip_chip(c));
    EXPECT_TRUE(bitwise_equal(twice.image, c.image));
    EXPECT_EQ(twice.azimuth->radians(), c.azimuth->radians());
    EXPECT_EQ(twice.augmented, c.augmented);
    EXPECT_EQ(twice.name, c.name);
  }
}

TEST(FlipAugment, MirroredRenderingMatchesNegatedAzimuth) {
  SynthConfig c;
  c.noise_std = 0.0;
  c.speckle_std = 0.0;
  const auto templates = make_templates(c);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < 20; ++i) {
    Chip chip;
    chip.azimuth = Azimuth(u(rng));
    chip.image = render_chip(templates[static_cast<std::size_t>(i) % 4], *chip.azimuth, 17.0, c);
    const Chip flipped = flip_chip(chip);
    const Tensor expected = render_chip(templates[static_cast<std::size_t>(i) % 4], *flipped.azimuth, 17.0, c);
    for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_NEAR(flipped.image[k], expected[k], 1e-9);
  }
}

TEST(FlipAugment, TestSplitIsRejected) {
  const Dataset ds = synth_generate(tiny_config());
  EXPECT_THROW(flip_augment(ds.split(Split::test)), UsageError);
  EXPECT_THROW(flip_augment(ds.chips), UsageError);
}

TEST(Normalize, ConstantChipBecomesZeros) {
  const Tensor out = normalize_image(Tensor(Shape{1, 4, 4}, 3.5));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, ZeroMeanUnitStdAndIdempotent) {
  const Dataset ds = synth_generate(tiny_config());
  const std::vector<Chip> once = normalize(ds.chips);
  const std::vector<Chip> twice = normalize(once);
  for (std::size_t i = 0; i < once.size(); ++i) {
    const auto d = once[i].image.data();
    const double n = static_cast<double>(d.size());
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : d) var += (v - mean) * (v - mean);
    EXPECT_LT(std::abs(mean), 1e-12);
    EXPECT_NEAR(std::sqrt(var / n), 1.0, 1e-9);
    for (std::size_t k = 0; k < d.size(); ++k) EXPECT_NEAR(twice[i].image[k], d[k], 1e-9);
  }
}

TEST(DatasetIo, ExportLoadRoundTrip) {
  const fs::path dir = fresh_dir("roundtrip");
  const Dataset ds = synth_generate(tiny_config());
  export_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.class_names, ds.class_names);
  ASSERT_EQ(back.chips.size(), ds.chips.size());
  for (std::size_t i = 0; i < ds.chips.size(); ++i) {
    const Chip& a = ds.chips[i];
    const Chip& b = back.chips[i];
    EXPECT_EQ(a.class_label, b.class_label);
    EXPECT_EQ(a.split, b.split);
    EXPECT_NEAR(a.nuisance, b.nuisance, 1e-12);
    EXPECT_NEAR(a.azimuth->radians(), b.azimuth->radians(), 1e-12);
    double worst = 0.0;
    for (std::size_t k = 0; k < a.image.size(); ++k) worst = std::max(worst, std::abs(a.image[k] - b.image[k]));
    EXPECT_LE(worst, 1e-12);
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, AzimuthIsConvertedAndCanonicalized) {
  const fs::path dir = fresh_dir("azimuth");
  fs::create_directories(dir);
  write_raster(dir / "a.pd", Tensor(Shape{1, 2, 2}, 1.0));
  {
    std::ofstream meta(dir / kMetadataFile);
    meta << "filename,class_name,azimuth_deg,nuisance_deg,split\n"
         << "a.pd,tank,370,17,train\n"
         << "a.pd,truck,,15,test\n";
  }
  const Dataset ds = load_dataset(dir);
  ASSERT_EQ(ds.chips.size(), 2u);
  EXPECT_NEAR(ds.chips[0].azimuth->radians(), 10.0 * std::numbers::pi / 180.0, 1e-12);
  EXPECT_FALSE(ds.chips[1].azimuth.has_value());
  EXPECT_EQ(ds.missing_azimuth_count(), 1u);
  EXPECT_EQ(ds.class_names, (std::vector<std::string>{"tank", "truck"}));
  fs::remove_all(dir);
}

TEST(DatasetIo, IngestionErrors) {
  const fs::path dir = fresh_dir("errors");
  EXPECT_THROW(load_dataset(dir), IngestionError);
  fs::create_directories(dir);
  EXPECT_THROW(load_dataset(dir), IngestionError);

  write_raster(dir / "a.pd", Tensor(Shape{1, 2, 2}, 1.0));
  {
    std::ofstream(dir / kClassesFile) << "tank\ntruck\n";
    std::ofstream meta(dir / kMetadataFile);
    meta << "filename,class_name,azimuth_deg,nuisance_deg,split\n"
         << "a.pd,tank,10,17,train\n"
         << "a.pd,boat,10,17,train\n";
  }
  try {
    load_dataset(dir);
    FAIL() << "unknown class accepted";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  {
    std::ofstream meta(dir / kMetadataFile);
    meta << "filename,class_name,azimuth_deg,nuisance_deg,split\n"
         << "missing.pd,tank,10,17,train\n";
  }
  EXPECT_THROW(load_dataset(dir), IngestionError);
  {
    std::ofstream meta(dir / kMetadataFile);
    meta << "filename,class_name,azimuth_deg,nuisance_deg,split\n";
  }
  EXPECT_THROW(load_dataset(dir), IngestionError);
  {
    std::ofstream meta(dir / kMetadataFile);
    meta << "filename,class_name\n" << "a.pd,tank\n";
  }
  EXPECT_THROW(load_dataset(dir), IngestionError);
  fs::remove_all(dir);
}

TEST(DatasetIo, ReadsPortableGraymaps) {
  const fs::path dir = fresh_dir("pgm");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "ascii.pgm") << "P2\n# comment\n3 2\n255\n0 1 2\n3 4 255\n";
    std::ofstream bin(dir / "bin.pgm", std::ios::binary);
    bin << "P5\n2 1\n255\n";
    bin.put(static_cast<char>(7));
    bin.put(static_cast<char>(200));
  }
  const Tensor a = read_raster(dir / "ascii.pgm");
  EXPECT_EQ(a.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(a[5], 255.0);
  EXPECT_EQ(a[3], 3.0);
  const Tensor b = read_raster(dir / "bin.pgm");
  EXPECT_EQ(b[0], 7.0);
  EXPECT_EQ(b[1], 200.0);
  {
    std::ofstream bad(dir / "short.pd", std::ios::binary);
    bad << "Pd\n4 4\n-1.0\n" << "abc";
  }
  EXPECT_THROW(read_raster(dir / "short.pd"), IngestionError);
  fs::remove_all(dir);
}
