#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>

#include "vinit/common.hpp"

namespace vinit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

// Below this angle (rad) trigonometric coefficients switch to their
// 4th-order Taylor expansions.
inline constexpr double kSmallAngle = 1e-8;

inline Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

// Unit quaternion with a fixed sign convention (w >= 0) so that equal
// rotations compare bit-equal and the log map stays on [0, pi].
class Rotation {
 public:
  Rotation() : q_(1.0, 0.0, 0.0, 0.0) {}

  explicit Rotation(const Eigen::Quaterniond& q) : q_(q.normalized()) {
    canonicalize();
  }

  Rotation(double w, double x, double y, double z)
      : Rotation(Eigen::Quaterniond(w, x, y, z)) {}

  static Rotation identity() { return Rotation(); }

  static Rotation from_matrix(const Mat3& m) {
    return Rotation(Eigen::Quaterniond(m));
  }

  // Exponential map, Rodrigues with a Taylor branch near zero.
  static Rotation exp(const Vec3& w) {
    const double theta2 = w.squaredNorm();
    const double theta = std::sqrt(theta2);
    double cw, sw;  // cos(theta/2), sin(theta/2)/theta
    if (theta < kSmallAngle) {
      cw = 1.0 - theta2 / 8.0 + theta2 * theta2 / 384.0;
      sw = 0.5 - theta2 / 48.0 + theta2 * theta2 / 3840.0;
    } else {
      cw = std::cos(0.5 * theta);
      sw = std::sin(0.5 * theta) / theta;
    }
    return Rotation(Eigen::Quaterniond(cw, sw * w.x(), sw * w.y(), sw * w.z()));
  }

  // Log map; inverse of exp on ||w|| < pi. Continuous near identity.
  Vec3 log() const {
    const Vec3 v(q_.x(), q_.y(), q_.z());
    const double s = v.norm();
    const double w = q_.w();  // >= 0 by canonicalization
    if (s < kSmallAngle) {
      // angle/s = 2/w * (1 - s^2/(3 w^2))
      return (2.0 / w) * (1.0 - s * s / (3.0 * w * w)) * v;
    }
    const double angle = 2.0 * std::atan2(s, w);
    return (angle / s) * v;
  }

  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

  Rotation inverse() const {
    return Rotation(Eigen::Quaterniond(q_.w(), -q_.x(), -q_.y(), -q_.z()));
  }

  Rotation operator*(const Rotation& rhs) const { return Rotation(q_ * rhs.q_); }
  Vec3 operator*(const Vec3& p) const { return q_ * p; }

  // Spherical interpolation, t in [0, 1].
  Rotation slerp(double t, const Rotation& other) const {
    return Rotation(q_.slerp(t, other.q_));
  }

 private:
  void canonicalize() {
    const double* c = q_.coeffs().data();  // x y z w
    bool flip = c[3] < 0.0;
    if (c[3] == 0.0) {
      if (c[0] != 0.0) flip = c[0] < 0.0;
      else if (c[1] != 0.0) flip = c[1] < 0.0;
      else flip = c[2] < 0.0;
    }
    if (flip) q_.coeffs() = -q_.coeffs();
  }

  Eigen::Quaterniond q_;
};

inline Rotation so3_exp(const Vec3& w) { return Rotation::exp(w); }
inline Vec3 so3_log(const Rotation& r) { return r.log(); }

// Geodesic distance ||Log(R1^T R2)|| in [0, pi].
inline double geodesic_angle(const Rotation& r1, const Rotation& r2) {
  return (r1.inverse() * r2).log().norm();
}

// Right Jacobian of SO(3): d Exp(w + dw) = Exp(w) Exp(Jr(w) dw).
inline Mat3 so3_right_jacobian(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const double theta = std::sqrt(theta2);
  double c1, c2;  // (1-cos)/t^2, (t-sin)/t^3
  if (theta < 1e-5) {
    c1 = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0;
    c2 = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
  } else {
    c1 = (1.0 - std::cos(theta)) / theta2;
    c2 = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Mat3 W = hat(w);
  return Mat3::Identity() - c1 * W + c2 * W * W;
}

inline Mat3 so3_right_jacobian_inv(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const double theta = std::sqrt(theta2);
  double c;
  if (theta < 1e-5) {
    c = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0;
  } else {
    c = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  const Mat3 W = hat(w);
  return Mat3::Identity() + 0.5 * W + c * W * W;
}

// Left Jacobian relates to the right one by Jl(w) = Jr(-w) = Jr(w)^T.
inline Mat3 so3_left_jacobian_inv(const Vec3& w) {
  return so3_right_jacobian_inv(w).transpose();
}

struct RigidTransform {
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const Rotation& r, const Vec3& t) : rotation(r), translation(t) {}

  static RigidTransform identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform operator*(const RigidTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }

  RigidTransform inverse() const {
    const Rotation rinv = rotation.inverse();
    return {rinv, -(rinv * translation)};
  }
};

}  // namespace vinit
