#pragma once

#include <vector>

#include "vinit/so3.hpp"

namespace vinit {

struct ImuSample {
  double timestamp = 0.0;              // seconds
  Vec3 angular_velocity = Vec3::Zero();  // rad/s, body frame
  Vec3 acceleration = Vec3::Zero();      // m/s^2, body frame (specific force)
};

struct ImuBias {
  Vec3 gyro = Vec3::Zero();   // rad/s
  Vec3 accel = Vec3::Zero();  // m/s^2

  Vec6 stacked() const {
    Vec6 b;
    b << gyro, accel;
    return b;
  }

  // Sanity bounds; anything larger indicates a unit or estimation fault.
  void validate(double max_gyro = 1.0, double max_accel = 10.0) const {
    if (!gyro.allFinite() || !accel.allFinite() || gyro.norm() >= max_gyro ||
        accel.norm() >= max_accel) {
      throw Error(ErrorCode::InvalidInput, "IMU bias outside sanity bounds");
    }
  }
};

// Continuous-time white-noise densities and bias random walks.
struct ImuNoiseSpec {
  double gyro_noise_density = 1.7e-4;    // rad/s/sqrt(Hz)
  double accel_noise_density = 2.0e-3;   // m/s^2/sqrt(Hz)
  double gyro_bias_walk = 1.9e-5;        // rad/s^2/sqrt(Hz)
  double accel_bias_walk = 3.0e-3;       // m/s^3/sqrt(Hz)

  void validate() const {
    if (!(gyro_noise_density > 0.0) || !(accel_noise_density > 0.0) ||
        !(gyro_bias_walk > 0.0) || !(accel_bias_walk > 0.0)) {
      throw Error(ErrorCode::InvalidInput, "noise densities must be positive");
    }
  }
};

// Preintegrated IMU increments between two keyframes, expressed in the
// first keyframe's body frame, together with the bias Jacobians and the
// 9x9 covariance over (position, velocity, rotation) errors. All deltas
// are linearized at `lin_bias`.
struct Preintegration {
  double delta_t = 0.0;
  Vec3 delta_p = Vec3::Zero();  // translation preintegral (alpha)
  Vec3 delta_v = Vec3::Zero();  // velocity preintegral (beta)
  Rotation delta_r;             // rotation preintegral (gamma)

  Mat3 dr_dbg = Mat3::Zero();
  Mat3 dp_dbg = Mat3::Zero();
  Mat3 dp_dba = Mat3::Zero();
  Mat3 dv_dbg = Mat3::Zero();
  Mat3 dv_dba = Mat3::Zero();

  Mat9 cov = Mat9::Zero();  // over (dp, dv, dtheta), dtheta a right perturbation
  ImuBias lin_bias;
};

// Rotation delta re-linearized at lin_bias + dbg via the stored Jacobian:
// gamma_hat = gamma * Exp(dr_dbg * dbg).
inline Rotation correct_gamma(const Preintegration& pre, const Vec3& dbg) {
  return pre.delta_r * Rotation::exp(pre.dr_dbg * dbg);
}

// First-order corrected position/velocity deltas at bias (lin_bias + db).
inline Vec3 corrected_delta_p(const Preintegration& pre, const Vec3& dbg,
                              const Vec3& dba) {
  return pre.delta_p + pre.dp_dbg * dbg + pre.dp_dba * dba;
}

inline Vec3 corrected_delta_v(const Preintegration& pre, const Vec3& dbg,
                              const Vec3& dba) {
  return pre.delta_v + pre.dv_dbg * dbg + pre.dv_dba * dba;
}

// Midpoint-rule preintegration of bias-corrected measurements over one
// keyframe interval. Noise enters the covariance discretized by the sample
// spacing (variance density / dt per averaged sample).
inline Preintegration preintegrate(const std::vector<ImuSample>& samples,
                                   const ImuBias& bias,
                                   const ImuNoiseSpec& noise) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::InsufficientData,
                "preintegration needs at least 2 samples");
  }
  noise.validate();
  bias.validate();

  Preintegration pre;
  pre.lin_bias = bias;

  Mat9 P = Mat9::Zero();
  Mat3 dr_dbg = Mat3::Zero();
  Mat3 dp_dbg = Mat3::Zero(), dp_dba = Mat3::Zero();
  Mat3 dv_dbg = Mat3::Zero(), dv_dba = Mat3::Zero();

  for (size_t i = 0; i + 1 < samples.size(); ++i) {
    const ImuSample& s0 = samples[i];
    const ImuSample& s1 = samples[i + 1];
    const double dt = s1.timestamp - s0.timestamp;
    if (!(dt > 0.0)) {
      throw Error(ErrorCode::InvalidInput,
                  "sample timestamps must be strictly increasing");
    }

    const Vec3 w_mid =
        0.5 * (s0.angular_velocity + s1.angular_velocity) - bias.gyro;
    const Vec3 a0 = s0.acceleration - bias.accel;
    const Vec3 a1 = s1.acceleration - bias.accel;

    const Rotation r0 = pre.delta_r;
    const Rotation incr = Rotation::exp(w_mid * dt);
    const Rotation r1 = r0 * incr;

    const Mat3 R0 = r0.matrix();
    const Mat3 R1 = r1.matrix();
    const Vec3 acc_mid = 0.5 * (R0 * a0 + R1 * a1);

    // State propagation.
    pre.delta_p += pre.delta_v * dt + 0.5 * acc_mid * dt * dt;
    pre.delta_v += acc_mid * dt;
    pre.delta_r = r1;

    // Bias Jacobians. dtheta_{k+1} = A^T dtheta_k - Jr dt dbg with
    // A = Exp(w_mid dt); accelerations pick up rotation sensitivity.
    const Mat3 At = incr.matrix().transpose();
    const Mat3 Jr = so3_right_jacobian(w_mid * dt);
    const Mat3 dr_dbg_next = At * dr_dbg - Jr * dt;

    const Mat3 da_dtheta0 = -0.5 * R0 * hat(a0);
    const Mat3 da_dtheta1 = -0.5 * R1 * hat(a1);
    const Mat3 da_dbg = da_dtheta0 * dr_dbg + da_dtheta1 * dr_dbg_next;
    const Mat3 da_dba = -0.5 * (R0 + R1);

    dp_dbg += dv_dbg * dt + 0.5 * da_dbg * dt * dt;
    dp_dba += dv_dba * dt + 0.5 * da_dba * dt * dt;
    dv_dbg += da_dbg * dt;
    dv_dba += da_dba * dt;
    dr_dbg = dr_dbg_next;

    // Covariance propagation over (dp, dv, dtheta) with the midpoint noise
    // model: both endpoint gyro/accel noises enter, gyro noise leaking into
    // the accelerations through the propagated attitude increment.
    const Mat3 X = da_dtheta0 + da_dtheta1 * At;  // d acc_mid / d dtheta_k
    Mat9 F = Mat9::Identity();
    F.block<3, 3>(0, 3) = Mat3::Identity() * dt;
    F.block<3, 3>(0, 6) = 0.5 * dt * dt * X;
    F.block<3, 3>(3, 6) = dt * X;
    F.block<3, 3>(6, 6) = At;

    // Noise input u = (ng0, na0, ng1, na1), each with covariance sigma^2/dt.
    const Mat3 JrDt = Jr * dt;
    const Mat3 dacc_dng = 0.5 * da_dtheta1 * JrDt;  // via dtheta_{k+1}
    Eigen::Matrix<double, 9, 12> G = Eigen::Matrix<double, 9, 12>::Zero();
    G.block<3, 3>(6, 0) = 0.5 * JrDt;
    G.block<3, 3>(6, 6) = 0.5 * JrDt;
    G.block<3, 3>(3, 0) = dacc_dng * dt;
    G.block<3, 3>(3, 6) = dacc_dng * dt;
    G.block<3, 3>(3, 3) = 0.5 * R0 * dt;
    G.block<3, 3>(3, 9) = 0.5 * R1 * dt;
    G.block<3, 3>(0, 0) = 0.5 * dt * G.block<3, 3>(3, 0);
    G.block<3, 3>(0, 6) = 0.5 * dt * G.block<3, 3>(3, 6);
    G.block<3, 3>(0, 3) = 0.5 * dt * G.block<3, 3>(3, 3);
    G.block<3, 3>(0, 9) = 0.5 * dt * G.block<3, 3>(3, 9);

    const double qg = noise.gyro_noise_density * noise.gyro_noise_density / dt;
    const double qa =
        noise.accel_noise_density * noise.accel_noise_density / dt;
    Eigen::Matrix<double, 12, 1> qdiag;
    qdiag << qg, qg, qg, qa, qa, qa, qg, qg, qg, qa, qa, qa;

    P = F * P * F.transpose() + G * qdiag.asDiagonal() * G.transpose();
    pre.delta_t += dt;
  }

  pre.dr_dbg = dr_dbg;
  pre.dp_dbg = dp_dbg;
  pre.dp_dba = dp_dba;
  pre.dv_dbg = dv_dbg;
  pre.dv_dba = dv_dba;
  pre.cov = 0.5 * (P + P.transpose());
  return pre;
}

// Chains two consecutive preintegrations (deltas and Jacobians; the
// covariance is composed to first order without cross terms, which is all
// the composition property tests require).
inline Preintegration compose(const Preintegration& a, const Preintegration& b) {
  Preintegration c;
  c.lin_bias = a.lin_bias;
  c.delta_t = a.delta_t + b.delta_t;
  const Mat3 Ra = a.delta_r.matrix();
  c.delta_p = a.delta_p + a.delta_v * b.delta_t + Ra * b.delta_p;
  c.delta_v = a.delta_v + Ra * b.delta_v;
  c.delta_r = a.delta_r * b.delta_r;

  const Mat3 Rbt = b.delta_r.matrix().transpose();
  c.dr_dbg = Rbt * a.dr_dbg + b.dr_dbg;
  c.dv_dbg = a.dv_dbg + Ra * b.dv_dbg - Ra * hat(b.delta_v) * a.dr_dbg;
  c.dv_dba = a.dv_dba + Ra * b.dv_dba;
  c.dp_dbg = a.dp_dbg + a.dv_dbg * b.delta_t + Ra * b.dp_dbg -
             Ra * hat(b.delta_p) * a.dr_dbg;
  c.dp_dba = a.dp_dba + a.dv_dba * b.delta_t + Ra * b.dp_dba;
  return c;
}

// Splits an IMU stream at keyframe timestamps into per-interval slices.
// Boundary samples are linearly interpolated at the exact keyframe instants
// so each slice spans [t_k, t_k+1] with no gap or overlap.
inline std::vector<std::vector<ImuSample>> split_by_keyframes(
    const std::vector<ImuSample>& samples,
    const std::vector<double>& keyframe_timestamps) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::InsufficientData, "need at least 2 samples");
  }
  if (keyframe_timestamps.size() < 2) {
    throw Error(ErrorCode::InsufficientData, "need at least 2 keyframes");
  }
  for (size_t i = 0; i + 1 < keyframe_timestamps.size(); ++i) {
    if (!(keyframe_timestamps[i] < keyframe_timestamps[i + 1])) {
      throw Error(ErrorCode::InvalidInput, "keyframe timestamps must be sorted");
    }
  }
  if (keyframe_timestamps.front() < samples.front().timestamp ||
      keyframe_timestamps.back() > samples.back().timestamp) {
    throw Error(ErrorCode::OutOfRange,
                "keyframe timestamps outside the sample time range");
  }

  auto interpolate = [&](size_t i, double t) {
    const ImuSample& s0 = samples[i];
    const ImuSample& s1 = samples[i + 1];
    const double u = (t - s0.timestamp) / (s1.timestamp - s0.timestamp);
    ImuSample s;
    s.timestamp = t;
    s.angular_velocity =
        (1.0 - u) * s0.angular_velocity + u * s1.angular_velocity;
    s.acceleration = (1.0 - u) * s0.acceleration + u * s1.acceleration;
    return s;
  };

  std::vector<std::vector<ImuSample>> slices;
  slices.reserve(keyframe_timestamps.size() - 1);
  size_t i = 0;
  for (size_t k = 0; k + 1 < keyframe_timestamps.size(); ++k) {
    const double t0 = keyframe_timestamps[k];
    const double t1 = keyframe_timestamps[k + 1];
    std::vector<ImuSample> slice;

    while (i + 1 < samples.size() && samples[i + 1].timestamp <= t0) ++i;
    if (samples[i].timestamp == t0) {
      slice.push_back(samples[i]);
    } else {
      slice.push_back(interpolate(i, t0));
    }
    size_t j = i;
    while (j + 1 < samples.size() && samples[j + 1].timestamp < t1) {
      ++j;
      slice.push_back(samples[j]);
    }
    if (j + 1 < samples.size() && samples[j + 1].timestamp == t1) {
      slice.push_back(samples[j + 1]);
    } else {
      slice.push_back(interpolate(j, t1));
    }
    slices.push_back(std::move(slice));
  }
  return slices;
}

}  // namespace vinit
