#pragma once

#include <Eigen/SVD>
#include <vector>

#include "vinit/so3.hpp"

namespace vinit {

struct TrajectoryPair {
  std::vector<RigidTransform> estimated;
  std::vector<RigidTransform> ground_truth;

  void validate() const {
    if (estimated.size() != ground_truth.size() || estimated.size() < 2) {
      throw Error(ErrorCode::InvalidInput,
                  "trajectories must have equal lengths >= 2");
    }
  }
};

// Absolute trajectory error: position RMSE after closed-form rigid
// alignment (orthogonal Procrustes, scale fixed to 1).
inline double ate_rmse(const TrajectoryPair& pair) {
  pair.validate();
  const int n = static_cast<int>(pair.estimated.size());

  Vec3 mu_est = Vec3::Zero(), mu_gt = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    mu_est += pair.estimated[i].translation;
    mu_gt += pair.ground_truth[i].translation;
  }
  mu_est /= n;
  mu_gt /= n;

  Mat3 cov = Mat3::Zero();
  for (int i = 0; i < n; ++i) {
    cov.noalias() += (pair.ground_truth[i].translation - mu_gt) *
                     (pair.estimated[i].translation - mu_est).transpose();
  }
  const Eigen::JacobiSVD<Mat3> svd(cov,
                                   Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = Vec3::Ones();
  s[2] = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0
                                                                         : 1.0;
  const Mat3 R = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  const Vec3 t = mu_gt - R * mu_est;

  double sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    sum_sq += (pair.ground_truth[i].translation -
               (R * pair.estimated[i].translation + t))
                  .squaredNorm();
  }
  return std::sqrt(sum_sq / n);
}

// Relative rotation error: RMSE (degrees) of the geodesic angles between
// consecutive-keyframe relative rotations of estimate and ground truth.
inline double rre_rmse(const TrajectoryPair& pair) {
  pair.validate();
  const int n = static_cast<int>(pair.estimated.size());
  double sum_sq = 0.0;
  for (int i = 0; i + 1 < n; ++i) {
    const Rotation d_est =
        pair.estimated[i].rotation.inverse() * pair.estimated[i + 1].rotation;
    const Rotation d_gt = pair.ground_truth[i].rotation.inverse() *
                          pair.ground_truth[i + 1].rotation;
    const double e = geodesic_angle(d_est, d_gt);
    sum_sq += e * e;
  }
  return std::sqrt(sum_sq / (n - 1)) * 180.0 / M_PI;
}

// Angular-velocity regime of a window, from the mean rate in deg/s.
enum class AngularVelocityBucket { BelowRange, Low, Medium, High };

inline const char* to_string(AngularVelocityBucket b) {
  switch (b) {
    case AngularVelocityBucket::BelowRange: return "below-range";
    case AngularVelocityBucket::Low: return "low";
    case AngularVelocityBucket::Medium: return "medium";
    case AngularVelocityBucket::High: return "high";
  }
  return "unknown";
}

inline AngularVelocityBucket angular_velocity_bucket(double mean_rate_deg) {
  if (mean_rate_deg < 0.0) {
    throw Error(ErrorCode::InvalidInput, "mean rate must be >= 0");
  }
  if (mean_rate_deg < 5.0) return AngularVelocityBucket::BelowRange;
  if (mean_rate_deg < 15.0) return AngularVelocityBucket::Low;
  if (mean_rate_deg < 30.0) return AngularVelocityBucket::Medium;
  return AngularVelocityBucket::High;
}

}  // namespace vinit
