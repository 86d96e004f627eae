#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "vinit/camera.hpp"
#include "vinit/imu.hpp"
#include "vinit/lm.hpp"
#include "vinit/nec.hpp"

namespace vinit {

// Chains keyframe body rotations from the first one by composing the
// bias-corrected preintegrated rotation increments.
inline std::vector<Rotation> propagate_body_rotations(
    const Rotation& r_wb0, const std::vector<Preintegration>& preints,
    const Vec3& bias_gyro) {
  std::vector<Rotation> rotations;
  rotations.reserve(preints.size() + 1);
  rotations.push_back(r_wb0);
  for (const Preintegration& pre : preints) {
    rotations.push_back(rotations.back() *
                        correct_gamma(pre, bias_gyro - pre.lin_bias.gyro));
  }
  return rotations;
}

// Camera rotations R_wc = R_wb R_bc after gyroscope integration with the
// estimated bias removed.
inline std::vector<Rotation> propagate_rotations(
    const Rotation& r_wb0, const std::vector<Preintegration>& preints,
    const Vec3& bias_gyro, const Extrinsics& extr) {
  std::vector<Rotation> rotations =
      propagate_body_rotations(r_wb0, preints, bias_gyro);
  for (Rotation& r : rotations) r = r * extr.left.rotation;
  return rotations;
}

// Huber thresholds on the whitened residual norm (chi-square 95%).
struct HuberDeltas {
  double mono = std::sqrt(5.991);
  double stereo = std::sqrt(7.815);
};

namespace detail {

// Robust weight for a squared whitened residual norm.
inline double huber_weight(double squared_norm, double delta) {
  const double norm = std::sqrt(squared_norm);
  return norm <= delta ? 1.0 : delta / norm;
}

inline double huber_cost(double squared_norm, double delta) {
  if (squared_norm <= delta * delta) return squared_norm;
  return 2.0 * delta * std::sqrt(squared_norm) - delta * delta;
}

}  // namespace detail

struct TranslationBaResult {
  std::vector<Vec3> translations;  // camera-frame t_cw per keyframe
  SolveStats stats;
  std::vector<int> held_fixed;  // keyframes with < 3 observations
};

// 3-DoF bundle adjustment: minimizes the robust reprojection cost over
// camera translations t_cw with rotations and landmarks held constant. The
// first keyframe keeps its initial translation (gauge); keyframes with
// fewer than 3 observations are flagged and not moved.
inline TranslationBaResult translation_only_ba(
    const std::vector<Rotation>& rotations_cw,
    const std::vector<Vec3>& translations_cw_init,
    const std::vector<Landmark>& landmarks,
    const std::vector<Observation>& observations, const PinholeStereoRig& rig,
    const HuberDeltas& huber = {}, const LmConfig& cfg = {}) {
  const int n = static_cast<int>(rotations_cw.size());
  if (n == 0 || translations_cw_init.size() != rotations_cw.size()) {
    throw Error(ErrorCode::InvalidInput, "rotations/translations mismatch");
  }

  TranslationBaResult result;
  result.translations = translations_cw_init;

  std::vector<int> obs_count(n, 0);
  for (const Observation& obs : observations) {
    if (obs.keyframe_id < 0 || obs.keyframe_id >= n) {
      throw Error(ErrorCode::InvalidInput, "observation references bad keyframe");
    }
    ++obs_count[obs.keyframe_id];
  }
  std::vector<bool> fixed(n, false);
  fixed[0] = true;  // gauge
  for (int k = 0; k < n; ++k) {
    if (k > 0 && obs_count[k] < 3) {
      fixed[k] = true;
      result.held_fixed.push_back(k);
    }
  }

  std::vector<int> index(n, -1);
  int dim = 0;
  for (int k = 0; k < n; ++k) {
    if (!fixed[k]) index[k] = dim, dim += 3;
  }
  if (dim == 0) {
    result.stats.converged = true;
    return result;
  }

  auto residual = [&](const Observation& obs, const std::vector<Vec3>& t,
                      VecX& r) -> bool {
    const Vec3 xc = rotations_cw[obs.keyframe_id] *
                        landmarks[obs.landmark_id].position +
                    t[obs.keyframe_id];
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

  auto total_cost = [&](const std::vector<Vec3>& t) {
    double cost = 0.0;
    VecX r;
    for (const Observation& obs : observations) {
      if (!residual(obs, t, r)) return std::numeric_limits<double>::infinity();
      const double delta =
          obs.kind == ObservationKind::Stereo ? huber.stereo : huber.mono;
      cost += detail::huber_cost(r.squaredNorm(), delta);
    }
    return cost;
  };

  double cost = total_cost(result.translations);
  result.stats.initial_cost = cost;
  double mu = cfg.initial_damping;

  int iter = 0;
  for (; iter < cfg.max_iterations; ++iter) {
    MatX H = MatX::Zero(dim, dim);
    VecX b = VecX::Zero(dim);
    VecX r;
    for (const Observation& obs : observations) {
      const int k = obs.keyframe_id;
      if (fixed[k]) continue;
      if (!residual(obs, result.translations, r)) continue;
      const Vec3 xc = rotations_cw[k] * landmarks[obs.landmark_id].position +
                      result.translations[k];
      const double sigma = std::sqrt(obs.sigma2());

      // d(pixel)/d(t_cw) = d(pixel)/d(X_c); X_c is affine in t_cw.
      const Eigen::Matrix<double, 3, 3> Jfull =
          stereo_projection_jacobian(xc, rig);
      const int rows = obs.kind == ObservationKind::Stereo ? 3 : 2;
      MatX J = Jfull.topRows(rows) / sigma;

      const double delta =
          obs.kind == ObservationKind::Stereo ? huber.stereo : huber.mono;
      const double w = detail::huber_weight(r.squaredNorm(), delta);
      const double sw = std::sqrt(w);
      J *= sw;
      const VecX rw = sw * r;

      H.block<3, 3>(index[k], index[k]) += J.transpose() * J;
      b.segment<3>(index[k]) += J.transpose() * rw;
    }

    bool stop = false;
    bool accepted = false;
    while (true) {
      MatX A = H;
      A.diagonal() += mu * H.diagonal().cwiseMax(1e-12);
      const VecX dx = A.ldlt().solve(-b);
      if (!dx.allFinite()) {
        mu *= cfg.damping_increase;
        if (mu > 1e32) { stop = true; break; }
        continue;
      }
      if (dx.norm() < cfg.step_tolerance) {
        result.stats.converged = true;
        stop = true;
        break;
      }
      std::vector<Vec3> trial = result.translations;
      for (int k = 0; k < n; ++k) {
        if (!fixed[k]) trial[k] += dx.segment<3>(index[k]);
      }
      const double new_cost = total_cost(trial);
      if (new_cost < cost) {
        const double decrease = cost - new_cost;
        result.translations = trial;
        cost = new_cost;
        mu /= cfg.damping_decrease;
        ++result.stats.accepted_steps;
        accepted = true;
        if (decrease < cfg.cost_tolerance) {
          result.stats.converged = true;
          stop = true;
        }
        break;
      }
      mu *= cfg.damping_increase;
      if (mu > 1e32) { stop = true; break; }
    }
    if (stop || !accepted) break;
  }

  result.stats.iterations = iter;
  result.stats.final_cost = cost;
  return result;
}

}  // namespace vinit
