#include "confoundnet/pose.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "confoundnet/error.hpp"

namespace confoundnet {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double canonical_angle(double radians) {
  if (!std::isfinite(radians)) throw DataError("azimuth must be finite");
  double t = std::fmod(radians, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  // fmod of a tiny negative value can round back up to exactly 2pi.
  if (t >= kTwoPi) t = 0.0;
  return t;
}

}  // namespace

double Quaternion::norm() const noexcept { return std::sqrt(dot(*this)); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DegenerateRotationError("quaternion has zero or non-finite norm");
  }
  return {w / n, x / n, y / n, z / n};
}

Azimuth::Azimuth(double radians) {
  const double t = canonical_angle(radians);
  // Exact: t and 2pi are within a factor of two of each other.
  signed_ = t > std::numbers::pi ? t - kTwoPi : t;
}

double Azimuth::radians() const noexcept {
  if (signed_ >= 0.0) return signed_;
  const double t = signed_ + kTwoPi;
  return t >= kTwoPi ? 0.0 : t;
}

Azimuth Azimuth::from_degrees(double degrees) {
  if (!std::isfinite(degrees)) throw DataError("azimuth must be finite");
  return Azimuth(std::fmod(degrees, 360.0) * std::numbers::pi / 180.0);
}

Quaternion quat_from_azimuth(Azimuth theta) {
  const double half = 0.5 * theta.radians();
  return {std::cos(half), 0.0, 0.0, std::sin(half)};
}

double quat_dist(const Quaternion& q1, const Quaternion& q2) {
  const Quaternion a = q1.normalized();
  const Quaternion b = q2.normalized();
  const double s = a.dot(b) >= 0.0 ? 1.0 : -1.0;
  const double dw = a.w - s * b.w, dx = a.x - s * b.x, dy = a.y - s * b.y, dz = a.z - s * b.z;
  const double pw = a.w + s * b.w, px = a.x + s * b.x, py = a.y + s * b.y, pz = a.z + s * b.z;
  const double chord = std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz);
  const double sum = std::sqrt(pw * pw + px * px + py * py + pz * pz);
  return std::clamp(2.0 * std::atan2(chord, sum), 0.0, 0.5 * std::numbers::pi);
}

double azimuth_dist(Azimuth t1, Azimuth t2) {
  // Both angles are in [0, 2pi) so the difference already is.
  const double delta = std::abs(t1.radians() - t2.radians());
  const double half = 0.5 * delta;
  return std::min(half, std::numbers::pi - half);
}

Azimuth negate_azimuth(Azimuth theta) {
  // 0 and pi are their own negations; both are kept as stored.
  if (theta.signed_ != 0.0 && theta.signed_ != std::numbers::pi) theta.signed_ = -theta.signed_;
  return theta;
}

std::size_t pose_dim(PoseMode mode) noexcept {
  switch (mode) {
    case PoseMode::none:
      return 0;
    case PoseMode::azimuth:
      return 2;
    case PoseMode::quaternion:
      return 4;
  }
  return 0;
}

std::string_view to_string(PoseMode mode) noexcept {
  switch (mode) {
    case PoseMode::none:
      return "none";
    case PoseMode::azimuth:
      return "azimuth";
    case PoseMode::quaternion:
      return "quaternion";
  }
  return "none";
}

std::optional<PoseMode> parse_pose_mode(std::string_view text) noexcept {
  if (text == "none") return PoseMode::none;
  if (text == "azimuth") return PoseMode::azimuth;
  if (text == "quaternion") return PoseMode::quaternion;
  return std::nullopt;
}

Quaternion raw_to_quaternion(std::span<const double> raw) {
  if (raw.size() == 2) return {raw[0], 0.0, 0.0, raw[1]};
  if (raw.size() == 4) return {raw[0], raw[1], raw[2], raw[3]};
  throw DimensionError("pose output must have 2 or 4 components, got " +
                       std::to_string(raw.size()));
}

PoseLoss pose_loss(std::span<const double> pred_raw, std::size_t dim,
                   std::span<const Quaternion> truth) {
  if (dim != 2 && dim != 4) {
    throw DimensionError("pose output dimension must be 2 or 4, got " + std::to_string(dim));
  }
  if (pred_raw.size() != dim * truth.size()) {
    throw BatchError("pose loss got " + std::to_string(pred_raw.size() / dim) +
                     " predictions for " + std::to_string(truth.size()) + " truth poses");
  }
  PoseLoss result;
  result.grad.assign(pred_raw.size(), 0.0);
  result.distances.resize(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::span<const double> raw = pred_raw.subspan(i * dim, dim);
    const Quaternion target = truth[i].normalized();
    const Quaternion pred = raw_to_quaternion(raw);
    const double n = pred.norm();
    if (!std::isfinite(n)) throw NumericError("non-finite pose prediction");
    if (n < kPoseMinNorm) {
      result.distances[i] = 0.5 * std::numbers::pi;
      result.loss += result.distances[i];
      continue;
    }
    const Quaternion unit{pred.w / n, pred.x / n, pred.y / n, pred.z / n};
    const double d = quat_dist(unit, target);
    result.distances[i] = d;
    result.loss += d;

    // d = arccos(|u|), u = unit . target; du/dp = (target - u unit) / |p|.
    const double u = unit.dot(target);
    const double abs_u = std::min(std::abs(u), kPoseGradDotLimit);
    const double sign = u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0);
    const double scale = -sign / std::sqrt(1.0 - abs_u * abs_u) / n;
    double* g = result.grad.data() + i * dim;
    if (dim == 2) {
      g[0] = scale * (target.w - u * unit.w);
      g[1] = scale * (target.z - u * unit.z);
    } else {
      g[0] = scale * (target.w - u * unit.w);
      g[1] = scale * (target.x - u * unit.x);
      g[2] = scale * (target.y - u * unit.y);
      g[3] = scale * (target.z - u * unit.z);
    }
  }
  return result;
}

PoseLoss pose_loss(std::span<const double> pred_raw, std::size_t dim,
                   std::span<const Azimuth> truth) {
  std::vector<Quaternion> quats;
  quats.reserve(truth.size());
  for (Azimuth a : truth) quats.push_back(quat_from_azimuth(a));
  return pose_loss(pred_raw, dim, quats);
}

}  // namespace confoundnet
