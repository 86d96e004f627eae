#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <vector>

#include "vinit/imu.hpp"
#include "vinit/lm.hpp"
#include "vinit/so3.hpp"

namespace vinit {

struct KeyframeState {
  double timestamp = 0.0;
  RigidTransform pose_wb;      // body-in-world
  Vec3 velocity = Vec3::Zero();  // world frame, m/s
};

// Gravity as a rotation applied to the canonical vector (0, 0, G). Only
// the two tilt degrees of freedom are observable; yaw about gravity is
// fixed by the parameterization.
struct GravityModel {
  Rotation r_wg;
  double magnitude = 9.81;  // m/s^2

  Vec3 g_world() const { return r_wg * Vec3(0.0, 0.0, magnitude); }
};

// Estimation vector of the inertial-only MAP problem: one velocity per
// keyframe, the gravity rotation, and both IMU biases.
struct InertialMapState {
  std::vector<Vec3> velocities;
  GravityModel gravity;
  ImuBias bias;
};

struct PriorSpec {
  ImuBias mean;
  Mat6 covariance = default_covariance();

  static Mat6 default_covariance() {
    Mat6 c = Mat6::Zero();
    c.diagonal().head<3>().setConstant(1e-2 * 1e-2);  // gyro, (rad/s)^2
    c.diagonal().tail<3>().setConstant(1e-1 * 1e-1);  // accel, (m/s^2)^2
    return c;
  }

  void validate() const {
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw Error(ErrorCode::InvalidInput, "prior covariance must be symmetric");
    }
    const Eigen::LLT<Mat6> llt(covariance);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::InvalidInput, "prior covariance must be PD");
    }
  }
};

namespace detail {

// Symmetric inverse square root with an eigenvalue floor; whitens
// residuals so costs are plain squared norms.
template <int N>
Eigen::Matrix<double, N, N> sqrt_information(
    const Eigen::Matrix<double, N, N>& cov, double eigen_floor = 1e-15) {
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(cov);
  Eigen::Matrix<double, N, 1> inv_sqrt = es.eigenvalues();
  for (int i = 0; i < N; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(std::max(inv_sqrt[i], eigen_floor));
  }
  return es.eigenvectors() * inv_sqrt.asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

// Unwhitened inertial residual r_L = (d_alpha, d_beta, d_gamma) of one
// keyframe interval, with the preintegrated deltas corrected to
// state.bias through the stored Jacobians. Keyframe poses enter as fixed
// quantities.
inline Vec9 inertial_residual(const InertialMapState& state,
                              const Preintegration& pre,
                              const KeyframeState& kf_k,
                              const KeyframeState& kf_k1, int pair_index) {
  const double dt = kf_k1.timestamp - kf_k.timestamp;
  if (std::abs(dt - pre.delta_t) > 1e-6) {
    throw Error(ErrorCode::InvalidInput,
                "preintegration does not span the keyframe interval");
  }
  const Vec3 dbg = state.bias.gyro - pre.lin_bias.gyro;
  const Vec3 dba = state.bias.accel - pre.lin_bias.accel;
  const Vec3 g_w = state.gravity.g_world();

  const Mat3 R0t = kf_k.pose_wb.rotation.matrix().transpose();
  const Vec3& t0 = kf_k.pose_wb.translation;
  const Vec3& t1 = kf_k1.pose_wb.translation;
  const Vec3& v0 = state.velocities.at(pair_index);
  const Vec3& v1 = state.velocities.at(pair_index + 1);

  Vec9 r;
  r.segment<3>(0) = R0t * (t1 - t0 - 0.5 * g_w * dt * dt - v0 * dt) -
                    corrected_delta_p(pre, dbg, dba);
  r.segment<3>(3) = R0t * (v1 - g_w * dt - v0) - corrected_delta_v(pre, dbg, dba);
  r.segment<3>(6) = (correct_gamma(pre, dbg).inverse() *
                     (kf_k.pose_wb.rotation.inverse() * kf_k1.pose_wb.rotation))
                        .log();
  return r;
}

// Analytic Jacobians of the (unwhitened) inertial residual with respect to
// the local parameterization: additive velocities and biases, gravity as
// the 2-DoF right tangent of R_wg.
struct InertialResidualJacobians {
  Eigen::Matrix<double, 9, 3> v0 = Eigen::Matrix<double, 9, 3>::Zero();
  Eigen::Matrix<double, 9, 3> v1 = Eigen::Matrix<double, 9, 3>::Zero();
  Eigen::Matrix<double, 9, 2> gravity = Eigen::Matrix<double, 9, 2>::Zero();
  Eigen::Matrix<double, 9, 3> bg = Eigen::Matrix<double, 9, 3>::Zero();
  Eigen::Matrix<double, 9, 3> ba = Eigen::Matrix<double, 9, 3>::Zero();
};

inline InertialResidualJacobians inertial_residual_jacobians(
    const InertialMapState& state, const Preintegration& pre,
    const KeyframeState& kf_k, const KeyframeState& kf_k1, int pair_index) {
  InertialResidualJacobians J;
  const double dt = pre.delta_t;
  const Mat3 R0t = kf_k.pose_wb.rotation.matrix().transpose();
  const Mat3 Rwg = state.gravity.r_wg.matrix();
  const Vec3 dbg = state.bias.gyro - pre.lin_bias.gyro;

  // d g_w / d tangent: right perturbation of R_wg about world x/y only.
  const Eigen::Matrix<double, 3, 2> dg =
      (-Rwg * hat(Vec3(0.0, 0.0, state.gravity.magnitude))).leftCols<2>();

  J.v0.block<3, 3>(0, 0) = -R0t * dt;
  J.v0.block<3, 3>(3, 0) = -R0t;
  J.v1.block<3, 3>(3, 0) = R0t;
  J.gravity.block<3, 2>(0, 0) = -0.5 * dt * dt * R0t * dg;
  J.gravity.block<3, 2>(3, 0) = -dt * R0t * dg;
  J.bg.block<3, 3>(0, 0) = -pre.dp_dbg;
  J.bg.block<3, 3>(3, 0) = -pre.dv_dbg;
  J.ba.block<3, 3>(0, 0) = -pre.dp_dba;
  J.ba.block<3, 3>(3, 0) = -pre.dv_dba;

  const Vec3 e_gamma =
      inertial_residual(state, pre, kf_k, kf_k1, pair_index).segment<3>(6);
  J.bg.block<3, 3>(6, 0) = -so3_left_jacobian_inv(e_gamma) *
                           so3_right_jacobian(pre.dr_dbg * dbg) * pre.dr_dbg;
  return J;
}

struct InertialMapResult {
  InertialMapState state;
  SolveStats stats;
};

struct InertialMapConfig {
  LmConfig lm;
  double gravity_magnitude = 9.81;
  double cov_eigen_floor = 1e-15;
};

// Inertial-only MAP: minimizes |r_p|^2_Sp + sum |r_L|^2_SL over velocities,
// gravity rotation (2-DoF tangent) and both biases, keyframe poses held
// fixed. Velocities start from central differences of the keyframe
// positions, the gravity direction from the preintegrated velocity deltas.
inline InertialMapResult solve_inertial_map(
    const std::vector<KeyframeState>& keyframes,
    const std::vector<Preintegration>& preints, const Vec3& bias_gyro_init,
    const PriorSpec& prior = {}, const InertialMapConfig& cfg = {}) {
  const int n = static_cast<int>(keyframes.size());
  if (n < 3) {
    throw Error(ErrorCode::InsufficientData, "MAP estimation needs >= 3 keyframes");
  }
  if (preints.size() + 1 != keyframes.size()) {
    throw Error(ErrorCode::InvalidInput,
                "need one preintegration per consecutive keyframe pair");
  }
  prior.validate();

  InertialMapState state;
  state.bias.gyro = bias_gyro_init;
  state.bias.accel = Vec3::Zero();
  state.gravity.magnitude = cfg.gravity_magnitude;

  // Velocity initialization by position differences.
  state.velocities.resize(n);
  for (int k = 0; k < n; ++k) {
    const int a = std::max(0, k - 1);
    const int b = std::min(n - 1, k + 1);
    state.velocities[k] =
        (keyframes[b].pose_wb.translation - keyframes[a].pose_wb.translation) /
        (keyframes[b].timestamp - keyframes[a].timestamp);
  }

  // Gravity direction from the rotated velocity preintegrals: each
  // R_wb delta_v approximates (a_w - g) dt, and accelerations average out
  // over the window.
  Vec3 dir = Vec3::Zero();
  for (int k = 0; k + 1 < n; ++k) {
    dir += keyframes[k].pose_wb.rotation * preints[k].delta_v;
  }
  if (dir.norm() < 1e-9) dir = -Vec3::UnitZ();
  const Vec3 g_init = -dir.normalized();
  state.gravity.r_wg = Rotation(
      Eigen::Quaterniond::FromTwoVectors(Vec3(0.0, 0.0, 1.0), g_init));

  const Mat6 prior_sqrt_info = detail::sqrt_information<6>(prior.covariance);
  std::vector<Mat9> sqrt_info(preints.size());
  for (size_t k = 0; k < preints.size(); ++k) {
    sqrt_info[k] = detail::sqrt_information<9>(preints[k].cov, cfg.cov_eigen_floor);
  }

  const int dim = 3 * n + 8;
  const int ig = 3 * n;      // gravity tangent offset
  const int ibg = 3 * n + 2;  // gyro bias offset
  const int iba = 3 * n + 5;  // accel bias offset

  auto total_cost = [&](const InertialMapState& s) {
    double cost = 0.0;
    for (size_t k = 0; k < preints.size(); ++k) {
      const Vec9 r = inertial_residual(s, preints[k], keyframes[k],
                                       keyframes[k + 1], static_cast<int>(k));
      cost += (sqrt_info[k] * r).squaredNorm();
    }
    Vec6 rp = s.bias.stacked() - prior.mean.stacked();
    cost += (prior_sqrt_info * rp).squaredNorm();
    return cost;
  };

  auto apply_step = [&](const InertialMapState& s, const VecX& dx) {
    InertialMapState out = s;
    for (int k = 0; k < n; ++k) out.velocities[k] += dx.segment<3>(3 * k);
    out.gravity.r_wg =
        s.gravity.r_wg * Rotation::exp(Vec3(dx[ig], dx[ig + 1], 0.0));
    out.bias.gyro += dx.segment<3>(ibg);
    out.bias.accel += dx.segment<3>(iba);
    return out;
  };

  InertialMapResult result;
  double cost = total_cost(state);
  result.stats.initial_cost = cost;
  double mu = cfg.lm.initial_damping;

  int iter = 0;
  for (; iter < cfg.lm.max_iterations; ++iter) {
    MatX H = MatX::Zero(dim, dim);
    VecX b = VecX::Zero(dim);

    for (size_t k = 0; k < preints.size(); ++k) {
      const Preintegration& pre = preints[k];
      const Vec9 r = inertial_residual(state, pre, keyframes[k],
                                       keyframes[k + 1], static_cast<int>(k));
      const InertialResidualJacobians jac = inertial_residual_jacobians(
          state, pre, keyframes[k], keyframes[k + 1], static_cast<int>(k));

      Eigen::Matrix<double, 9, 14> J;
      // Columns: v0(0..2), v1(3..5), dg(6..7), bg(8..10), ba(11..13).
      J << jac.v0, jac.v1, jac.gravity, jac.bg, jac.ba;

      const Eigen::Matrix<double, 9, 14> Jw = sqrt_info[k] * J;
      const Vec9 rw = sqrt_info[k] * r;

      int idx[14];
      for (int c = 0; c < 3; ++c) idx[c] = 3 * static_cast<int>(k) + c;
      for (int c = 0; c < 3; ++c) idx[3 + c] = 3 * (static_cast<int>(k) + 1) + c;
      idx[6] = ig;
      idx[7] = ig + 1;
      for (int c = 0; c < 3; ++c) idx[8 + c] = ibg + c;
      for (int c = 0; c < 3; ++c) idx[11 + c] = iba + c;

      for (int a = 0; a < 14; ++a) {
        b[idx[a]] += Jw.col(a).dot(rw);
        for (int c = 0; c < 14; ++c) {
          H(idx[a], idx[c]) += Jw.col(a).dot(Jw.col(c));
        }
      }
    }

    // Bias prior.
    const Vec6 rp = prior_sqrt_info * (state.bias.stacked() - prior.mean.stacked());
    H.block<6, 6>(ibg, ibg) += prior_sqrt_info.transpose() * prior_sqrt_info;
    b.segment<6>(ibg) += prior_sqrt_info.transpose() * rp;

    bool stop = false;
    bool accepted = false;
    while (true) {
      VecX damp = H.diagonal().cwiseMax(1e-12);
      MatX A = H;
      A.diagonal() += mu * damp;
      const VecX dx = A.ldlt().solve(-b);
      if (!dx.allFinite()) {
        mu *= cfg.lm.damping_increase;
        if (mu > 1e32) { stop = true; break; }
        continue;
      }
      if (dx.norm() < cfg.lm.step_tolerance) {
        result.stats.converged = true;
        stop = true;
        break;
      }
      const InertialMapState trial = apply_step(state, dx);
      const double new_cost = total_cost(trial);
      if (new_cost < cost) {
        const double decrease = cost - new_cost;
        state = trial;
        cost = new_cost;
        mu /= cfg.lm.damping_decrease;
        ++result.stats.accepted_steps;
        accepted = true;
        if (decrease < cfg.lm.cost_tolerance) {
          result.stats.converged = true;
          stop = true;
        }
        break;
      }
      mu *= cfg.lm.damping_increase;
      if (mu > 1e32) { stop = true; break; }
    }
    if (stop || !accepted) break;
  }

  result.stats.iterations = iter;
  result.stats.final_cost = cost;
  result.state = state;
  return result;
}

}  // namespace vinit
