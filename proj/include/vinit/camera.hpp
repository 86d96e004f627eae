#pragma once

#include <vector>

#include "vinit/so3.hpp"

namespace vinit {

struct Landmark {
  Vec3 position = Vec3::Zero();  // world frame, meters
};

// Rectified pinhole stereo rig; the right camera shares the left camera's
// orientation and is displaced by `baseline` along camera +x.
struct PinholeStereoRig {
  double fx = 458.0;
  double fy = 457.0;
  double cx = 367.0;
  double cy = 248.0;
  double baseline = 0.11;  // meters
  int width = 752;
  int height = 480;
};

enum class ObservationKind { Mono, Stereo };

// Pixel observation of one landmark from one keyframe. Stereo observations
// carry (u_L, v_L, u_R); mono ones only (u_L, v_L). The covariance follows
// the keypoint pyramid level: sigma^2 s^(2 level) I.
struct Observation {
  int landmark_id = 0;
  int keyframe_id = 0;
  ObservationKind kind = ObservationKind::Stereo;
  Vec3 pixel = Vec3::Zero();  // (u_L, v_L, u_R); u_R unused for mono
  int pyramid_level = 0;

  double sigma2(double pixel_sigma = 1.0, double scale_factor = 1.2) const {
    const double s = std::pow(scale_factor, pyramid_level);
    return pixel_sigma * pixel_sigma * s * s;
  }
};

inline constexpr double kMinDepth = 1e-6;      // meters
inline constexpr double kMinDisparity = 0.25;  // pixels

// Monocular pinhole projection of a world point through pose_cw
// (world-to-camera).
inline Vec2 project_mono(const Vec3& x_world, const RigidTransform& pose_cw,
                         const PinholeStereoRig& rig) {
  const Vec3 xc = pose_cw * x_world;
  if (!(xc.z() > kMinDepth)) {
    throw Error(ErrorCode::BehindCamera, "point behind camera");
  }
  return Vec2(rig.fx * xc.x() / xc.z() + rig.cx,
              rig.fy * xc.y() / xc.z() + rig.cy);
}

// Rectified stereo projection (u_L, v_L, u_R) with u_R = u_L - fx b / z.
// The first two components share project_mono's code path bit-exactly.
inline Vec3 project_stereo(const Vec3& x_world, const RigidTransform& pose_cw,
                           const PinholeStereoRig& rig) {
  const Vec2 uv = project_mono(x_world, pose_cw, rig);
  const Vec3 xc = pose_cw * x_world;
  return Vec3(uv.x(), uv.y(), uv.x() - rig.fx * rig.baseline / xc.z());
}

// d(pixel)/d(X_c) of the pinhole projection at a camera-frame point; the
// first two rows are the mono Jacobian, the third the right-camera column
// of the rectified stereo projection.
inline Eigen::Matrix<double, 3, 3> stereo_projection_jacobian(
    const Vec3& xc, const PinholeStereoRig& rig) {
  const double inv_z = 1.0 / xc.z();
  Eigen::Matrix<double, 3, 3> j;
  j << rig.fx * inv_z, 0.0, -rig.fx * xc.x() * inv_z * inv_z,
       0.0, rig.fy * inv_z, -rig.fy * xc.y() * inv_z * inv_z,
       rig.fx * inv_z, 0.0, -rig.fx * (xc.x() - rig.baseline) * inv_z * inv_z;
  return j;
}

inline Eigen::Matrix<double, 2, 3> mono_projection_jacobian(
    const Vec3& xc, const PinholeStereoRig& rig) {
  return stereo_projection_jacobian(xc, rig).topRows<2>();
}

// Depth from disparity, back-projected into the world frame. Inverse of
// project_stereo for pose_cw being the left camera pose.
inline Landmark triangulate(const Observation& obs,
                            const RigidTransform& pose_cw,
                            const PinholeStereoRig& rig) {
  if (obs.kind != ObservationKind::Stereo) {
    throw Error(ErrorCode::InvalidInput, "triangulation needs a stereo observation");
  }
  const double disparity = obs.pixel[0] - obs.pixel[2];
  if (!(disparity > kMinDisparity)) {
    throw Error(ErrorCode::DegenerateDepth, "disparity too small");
  }
  const double z = rig.fx * rig.baseline / disparity;
  const Vec3 xc(z * (obs.pixel[0] - rig.cx) / rig.fx,
                z * (obs.pixel[1] - rig.cy) / rig.fy, z);
  return {pose_cw.inverse() * xc};
}

}  // namespace vinit
