#pragma once

#include <limits>
#include <vector>

#include "vinit/camera.hpp"
#include "vinit/imu.hpp"
#include "vinit/inertial_map.hpp"
#include "vinit/nec.hpp"
#include "vinit/pose_refine.hpp"

namespace vinit {

// Success gate over the average NEC residual of the window.
struct NecCheckReport {
  double e_bar = 0.0;
  std::vector<double> per_pair;  // e_bar_{k,k+1}
  double threshold = 1e-4;
  bool passed = false;
};

// Average NEC residual: per consecutive keyframe pair, the mean |n_i^T t|
// over bearing pairs covisible in both cameras, with n_i built from the
// bias-corrected preintegrated rotation conjugated by the left extrinsics.
// `translations` are the per-pair relative camera translations (unit
// normalized by the caller); a zero vector contributes zero residual.
inline NecCheckReport compute_nec_check(
    const std::vector<std::vector<BearingPair>>& covisible_pairs,
    const std::vector<Preintegration>& preints, const Vec3& bias_gyro,
    const Extrinsics& extr, const std::vector<Vec3>& translations,
    double threshold = 1e-4) {
  if (covisible_pairs.size() != preints.size() ||
      covisible_pairs.size() != translations.size()) {
    throw Error(ErrorCode::InvalidInput, "per-pair input sizes mismatch");
  }
  if (covisible_pairs.empty()) {
    throw Error(ErrorCode::InsufficientData, "no keyframe pairs");
  }

  const Mat3 R_cb = extr.left.rotation.inverse().matrix();
  const Mat3 R_bc = extr.left.rotation.matrix();

  NecCheckReport report;
  report.threshold = threshold;
  for (size_t k = 0; k < covisible_pairs.size(); ++k) {
    const auto& pairs = covisible_pairs[k];
    if (pairs.empty()) {
      throw Error(ErrorCode::InsufficientData,
                  "empty covisible pair list for a keyframe pair");
    }
    const Mat3 Rrel =
        R_cb *
        correct_gamma(preints[k], bias_gyro - preints[k].lin_bias.gyro)
            .matrix() *
        R_bc;
    double sum = 0.0;
    for (const BearingPair& p : pairs) {
      const Vec3 n = p.f.cross(Rrel * p.f_prime);
      sum += std::abs(n.dot(translations[k]));
    }
    report.per_pair.push_back(sum / static_cast<double>(pairs.size()));
    report.e_bar += report.per_pair.back();
  }
  report.e_bar /= static_cast<double>(report.per_pair.size());
  report.passed = report.e_bar < threshold;
  return report;
}

struct VibaOptions {
  HuberDeltas huber;
  double inertial_weight = 1.0;  // 0 reduces to visual-only BA
  LmConfig lm;
  double cov_eigen_floor = 1e-15;
};

struct VibaResult {
  std::vector<KeyframeState> keyframes;
  std::vector<Landmark> landmarks;
  GravityModel gravity;
  ImuBias bias;
  SolveStats stats;
};

// Joint visual-inertial bundle adjustment over keyframe poses, velocities,
// landmarks, gravity direction, and both biases. Landmarks are eliminated
// with a Schur complement each iteration. Gauge: the first keyframe pose is
// fixed and the gravity rotation is parameterized with 2 DoF.
inline VibaResult joint_vi_ba(
    const std::vector<KeyframeState>& keyframes_init,
    const std::vector<Landmark>& landmarks_init,
    const std::vector<Preintegration>& preints,
    const std::vector<Observation>& observations,
    const GravityModel& gravity_init, const ImuBias& bias_init,
    const PriorSpec& prior, const PinholeStereoRig& rig,
    const Extrinsics& extr, const VibaOptions& opt = {}) {
  const int n = static_cast<int>(keyframes_init.size());
  const int n_lm = static_cast<int>(landmarks_init.size());
  if (n < 2 || preints.size() + 1 != keyframes_init.size()) {
    throw Error(ErrorCode::InvalidInput, "keyframes/preintegrations mismatch");
  }
  prior.validate();

  VibaResult result;
  result.keyframes = keyframes_init;
  result.landmarks = landmarks_init;
  result.gravity = gravity_init;
  result.bias = bias_init;

  // State layout: per keyframe k>0 pose (3 rot + 3 trans), then all
  // velocities, gravity tangent, biases.
  const int pose_dim = 6 * (n - 1);
  const int iv = pose_dim;
  const int ig = iv + 3 * n;
  const int ibg = ig + 2;
  const int iba = ibg + 3;
  const int dim = iba + 3;

  const double w_inertial = std::sqrt(std::max(0.0, opt.inertial_weight));
  const Mat6 prior_sqrt_info = detail::sqrt_information<6>(prior.covariance);
  std::vector<Mat9> sqrt_info(preints.size());
  for (size_t k = 0; k < preints.size(); ++k) {
    sqrt_info[k] =
        detail::sqrt_information<9>(preints[k].cov, opt.cov_eigen_floor);
  }

  struct State {
    std::vector<KeyframeState> kf;
    std::vector<Landmark> lm;
    GravityModel gravity;
    ImuBias bias;
  };
  State state{result.keyframes, result.landmarks, result.gravity, result.bias};

  auto map_state = [&](const State& s) {
    InertialMapState ms;
    ms.gravity = s.gravity;
    ms.bias = s.bias;
    for (const auto& kf : s.kf) ms.velocities.push_back(kf.velocity);
    return ms;
  };

  auto reprojection_residual = [&](const State& s, const Observation& obs,
                                   VecX& r) -> bool {
    const RigidTransform cw = (s.kf[obs.keyframe_id].pose_wb * extr.left).inverse();
    const Vec3 xc = cw * s.lm[obs.landmark_id].position;
    if (!(xc.z() > kMinDepth)) return false;
    const double sigma = std::sqrt(obs.sigma2());
    const double inv_z = 1.0 / xc.z();
    const double u = rig.fx * xc.x() * inv_z + rig.cx;
    const double v = rig.fy * xc.y() * inv_z + rig.cy;
    if (obs.kind == ObservationKind::Stereo) {
      r.resize(3);
      r << (u - obs.pixel[0]) / sigma, (v - obs.pixel[1]) / sigma,
          (u - rig.fx * rig.baseline * inv_z - obs.pixel[2]) / sigma;
    } else {
      r.resize(2);
      r << (u - obs.pixel[0]) / sigma, (v - obs.pixel[1]) / sigma;
    }
    return true;
  };

  auto total_cost = [&](const State& s) {
    double cost = 0.0;
    VecX r;
    for (const Observation& obs : observations) {
      if (!reprojection_residual(s, obs, r)) {
        return std::numeric_limits<double>::infinity();
      }
      const double delta = obs.kind == ObservationKind::Stereo
                               ? opt.huber.stereo
                               : opt.huber.mono;
      cost += detail::huber_cost(r.squaredNorm(), delta);
    }
    if (opt.inertial_weight > 0.0) {
      const InertialMapState ms = map_state(s);
      for (size_t k = 0; k < preints.size(); ++k) {
        const Vec9 rl = inertial_residual(ms, preints[k], s.kf[k], s.kf[k + 1],
                                          static_cast<int>(k));
        cost += opt.inertial_weight * (sqrt_info[k] * rl).squaredNorm();
      }
      const Vec6 rp = prior_sqrt_info * (s.bias.stacked() - prior.mean.stacked());
      cost += opt.inertial_weight * rp.squaredNorm();
    }
    return cost;
  };

  auto apply_step = [&](const State& s, const VecX& dx,
                        const std::vector<Vec3>& dlm) {
    State out = s;
    for (int k = 1; k < n; ++k) {
      const int off = 6 * (k - 1);
      out.kf[k].pose_wb.rotation =
          s.kf[k].pose_wb.rotation * Rotation::exp(dx.segment<3>(off));
      out.kf[k].pose_wb.translation += dx.segment<3>(off + 3);
    }
    for (int k = 0; k < n; ++k) out.kf[k].velocity += dx.segment<3>(iv + 3 * k);
    out.gravity.r_wg =
        s.gravity.r_wg * Rotation::exp(Vec3(dx[ig], dx[ig + 1], 0.0));
    out.bias.gyro += dx.segment<3>(ibg);
    out.bias.accel += dx.segment<3>(iba);
    for (int j = 0; j < n_lm; ++j) out.lm[j].position += dlm[j];
    return out;
  };

  double cost = total_cost(state);
  result.stats.initial_cost = cost;
  double mu = opt.lm.initial_damping;

  int iter = 0;
  for (; iter < opt.lm.max_iterations; ++iter) {
    MatX Hpp = MatX::Zero(dim, dim);
    VecX bp = VecX::Zero(dim);
    std::vector<Mat3> Hll(n_lm, Mat3::Zero());
    std::vector<Vec3> bl(n_lm, Vec3::Zero());
    std::vector<MatX> Hpl(n_lm);  // dim x 3, dense per landmark
    std::vector<bool> lm_seen(n_lm, false);

    VecX r;
    for (const Observation& obs : observations) {
      const int k = obs.keyframe_id;
      const int j = obs.landmark_id;
      if (!reprojection_residual(state, obs, r)) continue;

      const RigidTransform& pose_wb = state.kf[k].pose_wb;
      const Mat3 R_bct = extr.left.rotation.inverse().matrix();
      const Vec3 xb = pose_wb.rotation.inverse() *
                      (state.lm[j].position - pose_wb.translation);
      const Vec3 xc = R_bct * (xb - extr.left.translation);
      const double sigma = std::sqrt(obs.sigma2());

      const Eigen::Matrix<double, 3, 3> dpix = stereo_projection_jacobian(xc, rig);
      const int rows = obs.kind == ObservationKind::Stereo ? 3 : 2;

      const Mat3 R_cw = R_bct * pose_wb.rotation.inverse().matrix();
      const double delta = obs.kind == ObservationKind::Stereo
                               ? opt.huber.stereo
                               : opt.huber.mono;
      const double sw = std::sqrt(detail::huber_weight(r.squaredNorm(), delta));

      const MatX dpi = dpix.topRows(rows) * (sw / sigma);
      const VecX rw = sw * r;

      const MatX J_lm = dpi * R_cw;
      if (!lm_seen[j]) {
        lm_seen[j] = true;
        Hpl[j] = MatX::Zero(dim, 3);
      }
      Hll[j] += J_lm.transpose() * J_lm;
      bl[j] += J_lm.transpose() * rw;

      if (k > 0) {
        Eigen::Matrix<double, 3, 6> dxc;
        dxc.leftCols<3>() = R_bct * hat(xb);
        dxc.rightCols<3>() = -R_cw;
        const MatX J_pose = dpi * dxc;
        const int off = 6 * (k - 1);
        Hpp.block<6, 6>(off, off) += J_pose.transpose() * J_pose;
        bp.segment<6>(off) += J_pose.transpose() * rw;
        Hpl[j].middleRows<6>(off) += J_pose.transpose() * J_lm;
      }
    }

    // Inertial terms.
    if (opt.inertial_weight > 0.0) {
      const InertialMapState ms = map_state(state);
      for (size_t k = 0; k < preints.size(); ++k) {
        const Preintegration& pre = preints[k];
        const Vec9 rl = inertial_residual(ms, pre, state.kf[k], state.kf[k + 1],
                                          static_cast<int>(k));
        const InertialResidualJacobians jac = inertial_residual_jacobians(
            ms, pre, state.kf[k], state.kf[k + 1], static_cast<int>(k));

        // Pose Jacobians (right-tangent rotations, additive translations).
        const Mat3 R0t = state.kf[k].pose_wb.rotation.matrix().transpose();
        const Mat3 R1 = state.kf[k + 1].pose_wb.rotation.matrix();
        const Vec3 dbg = state.bias.gyro - pre.lin_bias.gyro;
        const Vec3 dba = state.bias.accel - pre.lin_bias.accel;
        const Vec3 e_gamma = rl.segment<3>(6);
        const Mat3 Jr_inv = so3_right_jacobian_inv(e_gamma);

        Eigen::Matrix<double, 9, 6> Jp0 = Eigen::Matrix<double, 9, 6>::Zero();
        Eigen::Matrix<double, 9, 6> Jp1 = Eigen::Matrix<double, 9, 6>::Zero();
        Jp0.block<3, 3>(0, 0) =
            hat(rl.segment<3>(0) + corrected_delta_p(pre, dbg, dba));
        Jp0.block<3, 3>(3, 0) =
            hat(rl.segment<3>(3) + corrected_delta_v(pre, dbg, dba));
        Jp0.block<3, 3>(6, 0) = -Jr_inv * (R1.transpose() * R0t.transpose());
        Jp0.block<3, 3>(0, 3) = -R0t;
        Jp1.block<3, 3>(0, 3) = R0t;
        Jp1.block<3, 3>(6, 0) = Jr_inv;

        // Common-block Jacobian: velocities, gravity, biases.
        Eigen::Matrix<double, 9, 14> Jc;
        Jc << jac.v0, jac.v1, jac.gravity, jac.bg, jac.ba;

        const Eigen::Matrix<double, 9, 6> Jp0w = w_inertial * (sqrt_info[k] * Jp0);
        const Eigen::Matrix<double, 9, 6> Jp1w = w_inertial * (sqrt_info[k] * Jp1);
        const Eigen::Matrix<double, 9, 14> Jcw = w_inertial * (sqrt_info[k] * Jc);
        const Vec9 rw = w_inertial * (sqrt_info[k] * rl);

        // Scatter into the global normal equations.
        Eigen::Matrix<double, 9, 26> J;
        int idx[26];
        int c = 0;
        auto add_block = [&](const auto& block, int base) {
          for (int a = 0; a < block.cols(); ++a) {
            J.col(c) = block.col(a);
            idx[c] = base + a;
            ++c;
          }
        };
        if (k > 0) add_block(Jp0w, 6 * (static_cast<int>(k) - 1));
        add_block(Jp1w, 6 * static_cast<int>(k));
        add_block(Jcw.leftCols<3>(), iv + 3 * static_cast<int>(k));
        add_block(Jcw.middleCols<3>(3), iv + 3 * (static_cast<int>(k) + 1));
        add_block(Jcw.middleCols<2>(6), ig);
        add_block(Jcw.middleCols<3>(8), ibg);
        add_block(Jcw.middleCols<3>(11), iba);

        for (int a = 0; a < c; ++a) {
          bp[idx[a]] += J.col(a).dot(rw);
          for (int d = 0; d < c; ++d) {
            Hpp(idx[a], idx[d]) += J.col(a).dot(J.col(d));
          }
        }
      }

      const Vec6 rp =
          prior_sqrt_info * (state.bias.stacked() - prior.mean.stacked());
      Hpp.block<6, 6>(ibg, ibg) += opt.inertial_weight *
                                   prior_sqrt_info.transpose() * prior_sqrt_info;
      bp.segment<6>(ibg) += opt.inertial_weight * prior_sqrt_info.transpose() * rp;
    }

    bool stop = false;
    bool accepted = false;
    while (true) {
      // Damped Schur elimination of the landmarks.
      MatX S = Hpp;
      S.diagonal() += mu * Hpp.diagonal().cwiseMax(1e-12);
      VecX rhs = bp;
      std::vector<Mat3> Hll_inv(n_lm);
      for (int j = 0; j < n_lm; ++j) {
        if (!lm_seen[j]) continue;
        Mat3 A = Hll[j];
        A.diagonal() += mu * Hll[j].diagonal().cwiseMax(1e-12);
        Hll_inv[j] = A.inverse();
        S.noalias() -= Hpl[j] * Hll_inv[j] * Hpl[j].transpose();
        rhs.noalias() -= Hpl[j] * (Hll_inv[j] * bl[j]);
      }
      const VecX dx = S.ldlt().solve(-rhs);
      if (!dx.allFinite()) {
        throw Error(ErrorCode::GaugeError,
                    "normal equations singular (rank-deficient system)");
      }
      std::vector<Vec3> dlm(n_lm, Vec3::Zero());
      for (int j = 0; j < n_lm; ++j) {
        if (!lm_seen[j]) continue;
        dlm[j] = -Hll_inv[j] * (bl[j] + Hpl[j].transpose() * dx);
      }

      double step_norm_sq = dx.squaredNorm();
      for (const Vec3& d : dlm) step_norm_sq += d.squaredNorm();
      if (std::sqrt(step_norm_sq) < opt.lm.step_tolerance) {
        result.stats.converged = true;
        stop = true;
        break;
      }

      const State trial = apply_step(state, dx, dlm);
      const double new_cost = total_cost(trial);
      if (new_cost < cost) {
        const double decrease = cost - new_cost;
        state = trial;
        cost = new_cost;
        mu /= opt.lm.damping_decrease;
        ++result.stats.accepted_steps;
        accepted = true;
        if (decrease < opt.lm.cost_tolerance) {
          result.stats.converged = true;
          stop = true;
        }
        break;
      }
      mu *= opt.lm.damping_increase;
      if (mu > 1e32) { stop = true; break; }
    }
    if (stop || !accepted) break;
  }

  result.stats.iterations = iter;
  result.stats.final_cost = cost;
  result.keyframes = state.kf;
  result.landmarks = state.lm;
  result.gravity = state.gravity;
  result.bias = state.bias;
  return result;
}

}  // namespace vinit
