#pragma once

#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace confoundnet {

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double dot(const Quaternion& other) const noexcept {
    return w * other.w + x * other.x + y * other.y + z * other.z;
  }
  double norm() const noexcept;
  /// Throws DegenerateRotationError for a zero quaternion.
  Quaternion normalized() const;
  Quaternion operator-() const noexcept { return {-w, -x, -y, -z}; }
  bool operator==(const Quaternion&) const = default;
};

/// Heading angle in radians. radians() is always in [0, 2pi).
///
/// The angle is stored signed in (-pi, pi] so that negation is an exact
/// sign flip and negating twice gives back the same bits.
class Azimuth {
 public:
  constexpr Azimuth() = default;
  explicit Azimuth(double radians);
  static Azimuth from_degrees(double degrees);

  double radians() const noexcept;
  double degrees() const noexcept { return radians() * 180.0 / std::numbers::pi; }
  bool operator==(const Azimuth& other) const noexcept { return radians() == other.radians(); }

  friend Azimuth negate_azimuth(Azimuth theta);

 private:
  double signed_ = 0.0;
};

/// Rotation by theta about the vertical axis: (cos theta/2, 0, 0, sin theta/2).
Quaternion quat_from_azimuth(Azimuth theta);

/// Angular distance arccos(|q1 . q2|) in [0, pi/2]. Inputs are normalized
/// first. Evaluated as 2 atan2(|q1 - s q2|, |q1 + s q2|) with s = sign(q1 . q2),
/// which is the same quantity without arccos' loss of precision near 0.
double quat_dist(const Quaternion& q1, const Quaternion& q2);

/// Ground-plane specialization: arccos(|cos((t1 - t2) / 2)|).
double azimuth_dist(Azimuth t1, Azimuth t2);

/// -theta, canonicalized.
Azimuth negate_azimuth(Azimuth theta);

enum class PoseMode { none, azimuth, quaternion };

/// Number of raw regression outputs for a mode: 0, 2 or 4.
std::size_t pose_dim(PoseMode mode) noexcept;
std::string_view to_string(PoseMode mode) noexcept;
std::optional<PoseMode> parse_pose_mode(std::string_view text) noexcept;

/// Maps a raw head output to the unnormalized quaternion it stands for.
/// Ground-plane outputs (a, b) become (a, 0, 0, b).
Quaternion raw_to_quaternion(std::span<const double> raw);

/// |dot| is clamped to this in the arccos derivative.
inline constexpr double kPoseGradDotLimit = 1.0 - 1e-7;
/// Raw outputs shorter than this count as the maximum distance, with no gradient.
inline constexpr double kPoseMinNorm = 1e-8;

struct PoseLoss {
  /// Sum of per-example distances.
  double loss = 0.0;
  /// Same layout as the raw predictions.
  std::vector<double> grad;
  std::vector<double> distances;
};

/// Sum over the batch of dist(normalize(pred_i), truth_i). `pred_raw` holds
/// `dim` values per example (2 or 4).
PoseLoss pose_loss(std::span<const double> pred_raw, std::size_t dim,
                   std::span<const Quaternion> truth);
PoseLoss pose_loss(std::span<const double> pred_raw, std::size_t dim,
                   std::span<const Azimuth> truth);

}  // namespace confoundnet
