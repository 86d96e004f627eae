#pragma once

#include <random>
#include <vector>

#include "vinit/camera.hpp"
#include "vinit/imu.hpp"
#include "vinit/inertial_map.hpp"
#include "vinit/nec.hpp"
#include "vinit/so3.hpp"

namespace vinit {

enum class TrajectoryKind {
  Stationary,
  ConstantVelocity,
  Circular,
  SinusoidalRotation,
};

inline const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::Stationary: return "stationary";
    case TrajectoryKind::ConstantVelocity: return "constant-velocity";
    case TrajectoryKind::Circular: return "circular";
    case TrajectoryKind::SinusoidalRotation: return "sinusoidal-rotation";
  }
  return "unknown";
}

// Analytic scene + trajectory specification. With a fixed seed the
// generated sequence is bit-reproducible.
struct SyntheticSpec {
  TrajectoryKind kind = TrajectoryKind::Circular;
  double duration = 6.0;        // seconds
  double imu_rate = 200.0;      // Hz
  double keyframe_spacing = 0.5;  // seconds

  int landmark_count = 600;
  double landmark_radius_min = 4.0;  // meters from trajectory centroid
  double landmark_radius_max = 12.0;

  ImuBias bias;          // injected into the measurements
  ImuNoiseSpec noise;    // densities used for covariance weighting
  double imu_noise_scale = 0.0;  // 0 = noise-free measurements
  double bearing_sigma = 0.0;    // rad, tangent-plane
  double pixel_sigma = 0.0;      // px
  uint64_t seed = 0;

  double gravity_magnitude = 9.81;

  // Per-kind motion parameters.
  Vec3 linear_velocity = Vec3(0.4, 0.1, 0.05);       // constant-velocity
  double circle_radius = 3.0;                        // circular
  double circle_rate = 0.4;                          // rad/s
  Vec3 rot_amplitude = Vec3(0.25, 0.2, 0.3);         // sinusoidal, rad
  Vec3 rot_frequency = Vec3(1.1, 0.8, 1.4);          // rad/s
  Vec3 trans_amplitude = Vec3(0.6, 0.4, 0.3);        // sinusoidal, m
  Vec3 trans_frequency = Vec3(0.9, 1.2, 0.7);        // rad/s

  void validate() const {
    if (!(duration > 0.0)) throw Error(ErrorCode::InvalidInput, "duration <= 0");
    if (!(imu_rate > 0.0)) throw Error(ErrorCode::InvalidInput, "imu_rate <= 0");
    if (!(keyframe_spacing > 0.0)) {
      throw Error(ErrorCode::InvalidInput, "keyframe_spacing <= 0");
    }
  }
};

// Ground-truth trajectory evaluation at one instant.
struct TrajectorySample {
  Rotation r_wb;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 accel_world = Vec3::Zero();
  Vec3 omega_body = Vec3::Zero();
};

inline TrajectorySample eval_trajectory(const SyntheticSpec& spec, double t) {
  TrajectorySample s;
  switch (spec.kind) {
    case TrajectoryKind::Stationary:
      break;
    case TrajectoryKind::ConstantVelocity:
      s.position = spec.linear_velocity * t;
      s.velocity = spec.linear_velocity;
      break;
    case TrajectoryKind::Circular: {
      const double r = spec.circle_radius;
      const double w = spec.circle_rate;
      s.position = Vec3(r * std::cos(w * t), r * std::sin(w * t), 0.0);
      s.velocity = Vec3(-r * w * std::sin(w * t), r * w * std::cos(w * t), 0.0);
      s.accel_world =
          Vec3(-r * w * w * std::cos(w * t), -r * w * w * std::sin(w * t), 0.0);
      s.r_wb = Rotation::exp(Vec3(0.0, 0.0, w * t));
      s.omega_body = s.r_wb.inverse() * Vec3(0.0, 0.0, w);
      break;
    }
    case TrajectoryKind::SinusoidalRotation: {
      Vec3 theta, dtheta;
      const Vec3 phase(0.0, 0.3, 0.7);
      for (int i = 0; i < 3; ++i) {
        const double arg = spec.rot_frequency[i] * t + phase[i];
        theta[i] = spec.rot_amplitude[i] * std::sin(arg);
        dtheta[i] = spec.rot_amplitude[i] * spec.rot_frequency[i] * std::cos(arg);
      }
      s.r_wb = Rotation::exp(theta);
      s.omega_body = so3_right_jacobian(theta) * dtheta;
      const Vec3 tphase(0.2, 0.9, 0.5);
      for (int i = 0; i < 3; ++i) {
        const double arg = spec.trans_frequency[i] * t + tphase[i];
        const double w = spec.trans_frequency[i];
        s.position[i] = spec.trans_amplitude[i] * std::sin(arg);
        s.velocity[i] = spec.trans_amplitude[i] * w * std::cos(arg);
        s.accel_world[i] = -spec.trans_amplitude[i] * w * w * std::sin(arg);
      }
      break;
    }
  }
  return s;
}

struct SyntheticSequence {
  SyntheticSpec spec;
  std::vector<ImuSample> imu;
  std::vector<KeyframeState> keyframes;  // ground truth
  GravityModel gravity;                  // ground truth
  ImuBias bias;                          // injected (equals spec.bias)
  std::vector<Landmark> landmarks;
  std::vector<Observation> observations;
  std::vector<StereoPairSet> pair_sets;                   // per interval
  std::vector<std::vector<BearingPair>> covisible_pairs;  // per interval
  PinholeStereoRig rig;
  Extrinsics extrinsics;
};

namespace detail {

inline bool in_frustum(const Vec3& xc, const PinholeStereoRig& rig,
                       double margin = 8.0) {
  if (!(xc.z() > 0.3)) return false;
  const double u = rig.fx * xc.x() / xc.z() + rig.cx;
  const double v = rig.fy * xc.y() / xc.z() + rig.cy;
  return u >= margin && u <= rig.width - margin && v >= margin &&
         v <= rig.height - margin;
}

// Perturbs a unit bearing by a Gaussian rotation in its tangent plane,
// preserving unit norm exactly.
inline Vec3 perturb_bearing(const Vec3& f, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return f;
  std::normal_distribution<double> n(0.0, sigma);
  Vec3 a = f.cross(Vec3::UnitX());
  if (a.norm() < 1e-3) a = f.cross(Vec3::UnitY());
  a.normalize();
  const Vec3 b = f.cross(a);
  return Rotation::exp(n(rng) * a + n(rng) * b) * f;
}

}  // namespace detail

// Landmarks, pixel observations, and temporal bearing pairs synthesized
// for a given keyframe trajectory. Shared by the synthetic generator and
// the EuRoC oracle configuration (which has no real image products).
struct VisualProducts {
  std::vector<Landmark> landmarks;
  std::vector<Observation> observations;
  std::vector<StereoPairSet> pair_sets;
  std::vector<std::vector<BearingPair>> covisible_pairs;
};

struct VisualSynthesisSpec {
  int landmark_count = 600;
  double radius_min = 4.0;
  double radius_max = 12.0;
  double bearing_sigma = 0.0;  // rad
  double pixel_sigma = 0.0;    // px
};

inline VisualProducts synthesize_visual_products(
    const std::vector<KeyframeState>& keyframes, const PinholeStereoRig& rig,
    const Extrinsics& extr, const VisualSynthesisSpec& spec,
    std::mt19937_64& rng) {
  if (keyframes.empty()) {
    throw Error(ErrorCode::InvalidInput, "no keyframes");
  }
  VisualProducts out;
  std::normal_distribution<double> randn(0.0, 1.0);

  // Landmark shell around the trajectory centroid.
  Vec3 centroid = Vec3::Zero();
  for (const KeyframeState& kf : keyframes) centroid += kf.pose_wb.translation;
  centroid /= static_cast<double>(keyframes.size());
  std::uniform_real_distribution<double> radius(spec.radius_min,
                                                spec.radius_max);
  for (int i = 0; i < spec.landmark_count; ++i) {
    Vec3 dir(randn(rng), randn(rng), randn(rng));
    while (dir.norm() < 1e-6) dir = Vec3(randn(rng), randn(rng), randn(rng));
    out.landmarks.push_back({centroid + radius(rng) * dir.normalized()});
  }

  const int n_lm = static_cast<int>(out.landmarks.size());
  std::vector<RigidTransform> left_cw(keyframes.size());
  std::vector<RigidTransform> right_cw(keyframes.size());
  std::vector<std::vector<bool>> vis_left(keyframes.size());
  std::vector<std::vector<bool>> vis_right(keyframes.size());
  for (size_t k = 0; k < keyframes.size(); ++k) {
    left_cw[k] = (keyframes[k].pose_wb * extr.left).inverse();
    right_cw[k] = (keyframes[k].pose_wb * extr.right).inverse();
    vis_left[k].resize(n_lm);
    vis_right[k].resize(n_lm);
    for (int i = 0; i < n_lm; ++i) {
      vis_left[k][i] =
          detail::in_frustum(left_cw[k] * out.landmarks[i].position, rig);
      vis_right[k][i] =
          detail::in_frustum(right_cw[k] * out.landmarks[i].position, rig);
    }
  }

  // Pixel observations (stereo where both cameras see the point).
  for (size_t k = 0; k < keyframes.size(); ++k) {
    for (int i = 0; i < n_lm; ++i) {
      if (!vis_left[k][i]) continue;
      Observation obs;
      obs.landmark_id = i;
      obs.keyframe_id = static_cast<int>(k);
      if (vis_right[k][i]) {
        obs.kind = ObservationKind::Stereo;
        obs.pixel = project_stereo(out.landmarks[i].position, left_cw[k], rig);
        if (spec.pixel_sigma > 0.0) {
          obs.pixel += spec.pixel_sigma * Vec3(randn(rng), randn(rng), randn(rng));
        }
      } else {
        obs.kind = ObservationKind::Mono;
        const Vec2 px = project_mono(out.landmarks[i].position, left_cw[k], rig);
        obs.pixel.head<2>() = px;
        if (spec.pixel_sigma > 0.0) {
          obs.pixel.head<2>() += spec.pixel_sigma * Vec2(randn(rng), randn(rng));
        }
      }
      out.observations.push_back(obs);
    }
  }
  if (out.observations.empty()) {
    throw Error(ErrorCode::DegenerateScene, "no landmark visible in any keyframe");
  }

  // Temporal bearing pairs per consecutive keyframe interval and the
  // left-camera pairs covisible in both cameras (used by the gate).
  auto bearing = [&](const RigidTransform& cw, int lm) {
    return Vec3((cw * out.landmarks[lm].position).normalized());
  };
  for (size_t k = 0; k + 1 < keyframes.size(); ++k) {
    StereoPairSet set;
    set.keyframe_k = static_cast<int>(k);
    set.keyframe_k1 = static_cast<int>(k + 1);
    std::vector<BearingPair> covis;
    for (int i = 0; i < n_lm; ++i) {
      const bool left_pair = vis_left[k][i] && vis_left[k + 1][i];
      const bool right_pair = vis_right[k][i] && vis_right[k + 1][i];
      if (left_pair) {
        BearingPair p;
        p.f = detail::perturb_bearing(bearing(left_cw[k], i),
                                      spec.bearing_sigma, rng);
        p.f_prime = detail::perturb_bearing(bearing(left_cw[k + 1], i),
                                            spec.bearing_sigma, rng);
        set.left.push_back(p);
        if (right_pair) covis.push_back(p);
      }
      if (right_pair) {
        BearingPair p;
        p.f = detail::perturb_bearing(bearing(right_cw[k], i),
                                      spec.bearing_sigma, rng);
        p.f_prime = detail::perturb_bearing(bearing(right_cw[k + 1], i),
                                            spec.bearing_sigma, rng);
        set.right.push_back(p);
      }
    }
    out.pair_sets.push_back(std::move(set));
    out.covisible_pairs.push_back(std::move(covis));
  }
  return out;
}

// Builds the full oracle sequence: analytic trajectory sampled at IMU rate,
// measurements synthesized with injected bias and optional noise, landmarks
// projected into both cameras for observations and temporal bearing pairs.
inline SyntheticSequence generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticSequence seq;
  seq.spec = spec;
  seq.bias = spec.bias;
  seq.gravity.magnitude = spec.gravity_magnitude;
  seq.gravity.r_wg = Rotation::exp(Vec3(M_PI, 0.0, 0.0));  // g_w = (0,0,-G)
  const Vec3 g_w = seq.gravity.g_world();

  // Rectified fronto-parallel rig; the right camera sits `baseline` along
  // camera (and body) x.
  seq.extrinsics.left = RigidTransform(Rotation::identity(), Vec3::Zero());
  seq.extrinsics.right =
      RigidTransform(Rotation::identity(), Vec3(seq.rig.baseline, 0.0, 0.0));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> randn(0.0, 1.0);

  // IMU stream.
  const double dt = 1.0 / spec.imu_rate;
  const int n_samples = static_cast<int>(std::round(spec.duration * spec.imu_rate));
  const double gyro_sd = spec.imu_noise_scale * spec.noise.gyro_noise_density /
                         std::sqrt(dt);
  const double accel_sd = spec.imu_noise_scale *
                          spec.noise.accel_noise_density / std::sqrt(dt);
  seq.imu.reserve(n_samples + 1);
  for (int i = 0; i <= n_samples; ++i) {
    const double t = i * dt;
    const TrajectorySample ts = eval_trajectory(spec, t);
    ImuSample s;
    s.timestamp = t;
    s.angular_velocity = ts.omega_body + spec.bias.gyro;
    s.acceleration =
        ts.r_wb.inverse() * (ts.accel_world - g_w) + spec.bias.accel;
    if (spec.imu_noise_scale > 0.0) {
      s.angular_velocity += gyro_sd * Vec3(randn(rng), randn(rng), randn(rng));
      s.acceleration += accel_sd * Vec3(randn(rng), randn(rng), randn(rng));
    }
    seq.imu.push_back(s);
  }

  // Keyframes.
  const int n_kf =
      static_cast<int>(std::floor(spec.duration / spec.keyframe_spacing)) + 1;
  for (int k = 0; k < n_kf; ++k) {
    const double t = k * spec.keyframe_spacing;
    if (t > seq.imu.back().timestamp + 1e-12) break;
    const TrajectorySample ts = eval_trajectory(spec, t);
    KeyframeState kf;
    kf.timestamp = t;
    kf.pose_wb = RigidTransform(ts.r_wb, ts.position);
    kf.velocity = ts.velocity;
    seq.keyframes.push_back(kf);
  }

  VisualSynthesisSpec vis;
  vis.landmark_count = spec.landmark_count;
  vis.radius_min = spec.landmark_radius_min;
  vis.radius_max = spec.landmark_radius_max;
  vis.bearing_sigma = spec.bearing_sigma;
  vis.pixel_sigma = spec.pixel_sigma;
  VisualProducts products =
      synthesize_visual_products(seq.keyframes, seq.rig, seq.extrinsics, vis, rng);
  seq.landmarks = std::move(products.landmarks);
  seq.observations = std::move(products.observations);
  seq.pair_sets = std::move(products.pair_sets);
  seq.covisible_pairs = std::move(products.covisible_pairs);
  return seq;
}

}  // namespace vinit
