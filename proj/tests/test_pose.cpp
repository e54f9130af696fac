#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "confoundnet/error.hpp"
#include "confoundnet/grad_check.hpp"
#include "confoundnet/pose.hpp"

using namespace confoundnet;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kSamples = 100000;

Quaternion random_quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

Azimuth random_azimuth(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
  return Azimuth(u(rng));
}

}  // namespace

TEST(Azimuth, CanonicalRange) {
  EXPECT_NEAR(Azimuth(-kPi / 2).radians(), 3 * kPi / 2, 1e-15);
  EXPECT_NEAR(Azimuth(5 * kPi).radians(), kPi, 1e-12);
  EXPECT_EQ(Azimuth(2 * kPi).radians(), 0.0);
  EXPECT_NEAR(Azimuth::from_degrees(370.0).radians(), 10.0 * kPi / 180.0, 1e-12);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> wide(-100.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double r = Azimuth(wide(rng)).radians();
    EXPECT_GE(r, 0.0);
    EXPECT_LT(r, 2 * kPi);
  }
}

TEST(QuatFromAzimuth, ReferencePoints) {
  EXPECT_EQ(quat_from_azimuth(Azimuth(0.0)), (Quaternion{1, 0, 0, 0}));
  const Quaternion half = quat_from_azimuth(Azimuth(kPi));
  EXPECT_NEAR(half.w, 0.0, 1e-16);
  EXPECT_EQ(half.z, 1.0);
  const Quaternion quarter = quat_from_azimuth(Azimuth(kPi / 2));
  EXPECT_NEAR(quarter.w, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(quarter.z, std::sqrt(0.5), 1e-15);
  EXPECT_EQ(quarter.x, 0.0);
  EXPECT_EQ(quarter.y, 0.0);
}

TEST(Quaternion, NormalizeGivesUnitNorm) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const Quaternion q = Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
    EXPECT_LT(std::abs(q.norm() - 1.0), 1e-12);
  }
  EXPECT_THROW((Quaternion{0, 0, 0, 0}.normalized()), DegenerateRotationError);
  EXPECT_THROW(quat_dist(Quaternion{0, 0, 0, 0}, Quaternion{}), DegenerateRotationError);
}

TEST(QuatDist, ReferencePoints) {
  std::mt19937_64 rng(3);
  const Quaternion q = random_quaternion(rng);
  EXPECT_EQ(quat_dist(q, q), 0.0);
  EXPECT_EQ(quat_dist(q, -q), 0.0);
  EXPECT_NEAR(quat_dist(Quaternion{}, quat_from_azimuth(Azimuth(kPi))), kPi / 2, 1e-12);
}

TEST(QuatDist, RangeSymmetrySignInvarianceTriangle) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < kSamples; ++i) {
    const Quaternion a = random_quaternion(rng), b = random_quaternion(rng), c = random_quaternion(rng);
    const double ab = quat_dist(a, b);
    ASSERT_GE(ab, 0.0);
    ASSERT_LE(ab, kPi / 2);
    ASSERT_EQ(ab, quat_dist(b, a));
    ASSERT_EQ(ab, quat_dist(a, -b));
    ASSERT_LE(quat_dist(a, c), ab + quat_dist(b, c) + 1e-12);
  }
}

TEST(QuatDist, MatchesArccosFormAwayFromZero) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10000; ++i) {
    const Quaternion a = random_quaternion(rng), b = random_quaternion(rng);
    const double d = std::abs(a.dot(b));
    if (d > 0.999) continue;
    EXPECT_NEAR(quat_dist(a, b), std::acos(d), 1e-12);
  }
}

TEST(AzimuthDist, ReferencePoints) {
  EXPECT_EQ(azimuth_dist(Azimuth(0.0), Azimuth(0.0)), 0.0);
  EXPECT_NEAR(azimuth_dist(Azimuth(0.0), Azimuth(kPi)), kPi / 2, 1e-12);
  EXPECT_NEAR(azimuth_dist(Azimuth(0.0), Azimuth(kPi / 2)), kPi / 4, 1e-12);
  EXPECT_NEAR(azimuth_dist(Azimuth(0.1), Azimuth(2 * kPi - 0.1)), 0.1, 1e-12);
}

TEST(AzimuthDist, ConsistentWithQuaternionDistance) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < kSamples; ++i) {
    const Azimuth t1 = random_azimuth(rng), t2 = random_azimuth(rng);
    const double d = azimuth_dist(t1, t2);
    ASSERT_GE(d, 0.0);
    ASSERT_LE(d, kPi / 2);
    ASSERT_EQ(d, azimuth_dist(t2, t1));
    ASSERT_NEAR(d, quat_dist(quat_from_azimuth(t1), quat_from_azimuth(t2)), 1e-12);
    if (std::abs(std::cos((t1.radians() - t2.radians()) / 2)) < 0.999) {
      ASSERT_NEAR(d, std::acos(std::abs(std::cos((t1.radians() - t2.radians()) / 2))), 1e-12);
    }
  }
}

TEST(NegateAzimuth, ReferencePointsAndInvolution) {
  EXPECT_EQ(negate_azimuth(Azimuth(0.0)).radians(), 0.0);
  EXPECT_NEAR(negate_azimuth(Azimuth(kPi / 2)).radians(), 3 * kPi / 2, 1e-15);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const Azimuth t = random_azimuth(rng);
    EXPECT_EQ(negate_azimuth(negate_azimuth(t)).radians(), t.radians());
    EXPECT_EQ(azimuth_dist(negate_azimuth(negate_azimuth(t)), t), 0.0);
    const double n = negate_azimuth(t).radians();
    EXPECT_GE(n, 0.0);
    EXPECT_LT(n, 2 * kPi);
  }
  // pi is its own negation; tiny angles stay exact under double negation.
  EXPECT_EQ(negate_azimuth(Azimuth(kPi)).radians(), kPi);
  const Azimuth tiny(1e-300);
  EXPECT_EQ(negate_azimuth(negate_azimuth(tiny)).radians(), 1e-300);
  const Azimuth wrapped(-1e-300);
  EXPECT_GE(wrapped.radians(), 0.0);
  EXPECT_LT(wrapped.radians(), 2 * kPi);
}

TEST(PoseMode, DimsAndParsing) {
  EXPECT_EQ(pose_dim(PoseMode::none), 0u);
  EXPECT_EQ(pose_dim(PoseMode::azimuth), 2u);
  EXPECT_EQ(pose_dim(PoseMode::quaternion), 4u);
  for (PoseMode m : {PoseMode::none, PoseMode::azimuth, PoseMode::quaternion}) {
    EXPECT_EQ(parse_pose_mode(to_string(m)), m);
  }
  EXPECT_FALSE(parse_pose_mode("euler").has_value());
}

TEST(PoseLoss, PerfectPredictionHasZeroLossAndGradient) {
  std::mt19937_64 rng(8);
  std::vector<Azimuth> truth;
  std::vector<double> raw;
  for (int i = 0; i < 6; ++i) {
    truth.push_back(random_azimuth(rng));
    raw.push_back(std::cos(truth.back().radians() / 2));
    raw.push_back(std::sin(truth.back().radians() / 2));
  }
  const PoseLoss r = pose_loss(raw, 2, truth);
  EXPECT_LT(r.loss, 1e-7);
  for (double g : r.grad) EXPECT_LT(std::abs(g), 1e-6);
}

TEST(PoseLoss, ScaleInvariance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t dim : {2u, 4u}) {
    std::vector<Quaternion> truth;
    std::vector<double> raw, scaled;
    for (int i = 0; i < 8; ++i) {
      truth.push_back(dim == 2 ? quat_from_azimuth(random_azimuth(rng)) : random_quaternion(rng));
      for (std::size_t k = 0; k < dim; ++k) {
        raw.push_back(n(rng));
        scaled.push_back(5.0 * raw.back());
      }
    }
    EXPECT_NEAR(pose_loss(raw, dim, truth).loss, pose_loss(scaled, dim, truth).loss, 1e-10);
  }
}

TEST(PoseLoss, GradientMatchesFiniteDifferences) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t dim : {2u, 4u}) {
    for (int seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      std::vector<Quaternion> truth;
      std::vector<double> raw;
      while (truth.size() < 8) {
        const Quaternion t = dim == 2 ? quat_from_azimuth(random_azimuth(rng)) : random_quaternion(rng);
        std::vector<double> p(dim);
        for (double& v : p) v = n(rng);
        const double d = std::abs(raw_to_quaternion(p).normalized().dot(t));
        if (d < 0.05 || d > 0.95) continue;
        truth.push_back(t);
        raw.insert(raw.end(), p.begin(), p.end());
      }
      const PoseLoss r = pose_loss(raw, dim, truth);
      const auto res = grad_check([&] { return pose_loss(raw, dim, truth).loss; }, raw, r.grad, 1e-5);
      EXPECT_LT(res.max_rel_error, 1e-4) << "dim " << dim << " seed " << seed;
    }
  }
}

TEST(PoseLoss, TinyRawOutputIsMaximumDistanceWithoutGradient) {
  const std::vector<double> raw = {1e-10, -2e-10};
  const std::vector<Azimuth> truth = {Azimuth(0.3)};
  const PoseLoss r = pose_loss(raw, 2, truth);
  EXPECT_EQ(r.loss, kPi / 2);
  EXPECT_EQ(r.grad[0], 0.0);
  EXPECT_EQ(r.grad[1], 0.0);
}

TEST(PoseLoss, GradientStaysFiniteAtExactMatch) {
  const std::vector<double> raw = {1.0, 0.0};
  const std::vector<Azimuth> truth = {Azimuth(0.0)};
  const PoseLoss r = pose_loss(raw, 2, truth);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad) EXPECT_TRUE(std::isfinite(g));
}

TEST(PoseLoss, BatchMismatch) {
  const std::vector<double> raw = {1.0, 0.0, 0.0, 1.0};
  const std::vector<Azimuth> truth = {Azimuth(0.0)};
  EXPECT_THROW(pose_loss(raw, 2, truth), BatchError);
}
