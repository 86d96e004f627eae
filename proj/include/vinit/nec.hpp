#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "vinit/imu.hpp"
#include "vinit/lm.hpp"
#include "vinit/so3.hpp"

namespace vinit {

// Unit bearing correspondence between two time instants of one camera.
struct BearingPair {
  Vec3 f = Vec3::UnitZ();        // bearing at time k
  Vec3 f_prime = Vec3::UnitZ();  // bearing at time k+1
};

// Temporal correspondences of one consecutive keyframe pair, per camera.
struct StereoPairSet {
  std::vector<BearingPair> left;
  std::vector<BearingPair> right;
  int keyframe_k = 0;
  int keyframe_k1 = 1;
};

// Camera-in-body poses for the rectified stereo rig.
struct Extrinsics {
  RigidTransform left;   // T_b_cL
  RigidTransform right;  // T_b_cR
};

// Epipolar-plane normal n = f x (R f'). Not normalized: the magnitude
// carries the sine of the ray angle.
inline Vec3 epipolar_normal(const Vec3& f, const Vec3& f_prime,
                            const Rotation& r_rel) {
  return f.cross(r_rel * f_prime);
}

// Residual |n^T t| of the normal epipolar constraint.
inline double nec_residual(const Vec3& n, const Vec3& t_rel) {
  return std::abs(n.dot(t_rel));
}

// M = sum n_i n_i^T over the pair list at the given relative rotation.
// Real, symmetric, PSD; rank 2 at the true rotation on noise-free data.
inline Mat3 nec_matrix(const std::vector<BearingPair>& pairs,
                       const Rotation& r_rel) {
  if (pairs.empty()) {
    throw Error(ErrorCode::InsufficientData, "nec_matrix needs >= 1 pair");
  }
  const Mat3 R = r_rel.matrix();
  Mat3 m = Mat3::Zero();
  for (const BearingPair& p : pairs) {
    const Vec3 n = p.f.cross(R * p.f_prime);
    m.noalias() += n * n.transpose();
  }
  return m;
}

struct EigenPair {
  double value = 0.0;
  Vec3 vector = Vec3::UnitX();
};

namespace detail {

// Sorted eigenvalues of a symmetric 3x3 matrix by the trigonometric
// closed form of the characteristic cubic.
inline Vec3 sym3_eigenvalues(const Mat3& m) {
  const double p1 = m(0, 1) * m(0, 1) + m(0, 2) * m(0, 2) + m(1, 2) * m(1, 2);
  if (p1 == 0.0) {
    Vec3 d(m(0, 0), m(1, 1), m(2, 2));
    std::sort(d.data(), d.data() + 3);
    return d;
  }
  const double q = m.trace() / 3.0;
  const double p2 = (m(0, 0) - q) * (m(0, 0) - q) +
                    (m(1, 1) - q) * (m(1, 1) - q) +
                    (m(2, 2) - q) * (m(2, 2) - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  const Mat3 B = (m - q * Mat3::Identity()) / p;
  double r = B.determinant() / 2.0;
  r = std::clamp(r, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double lmax = q + 2.0 * p * std::cos(phi);
  const double lmin = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
  return Vec3(lmin, 3.0 * q - lmax - lmin, lmax);
}

// Eigenvector of the smallest eigenvalue. By Cayley-Hamilton the columns
// of (M - l1 I)(M - l2 I) span the l0 eigenspace; fall back to
// (M - l2 I) columns when l0 is (near-)repeated, and to e1 for isotropy.
inline Vec3 sym3_min_eigenvector(const Mat3& m, const Vec3& evals) {
  const double scale = std::max(1.0, std::abs(evals[2]));
  const Mat3 C =
      (m - evals[1] * Mat3::Identity()) * (m - evals[2] * Mat3::Identity());
  int best = 0;
  double best_norm = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double n = C.col(j).norm();
    if (n > best_norm) {
      best_norm = n;
      best = j;
    }
  }
  if (best_norm > 1e-12 * scale * scale) return C.col(best).normalized();

  const Mat3 C2 = m - evals[2] * Mat3::Identity();
  best_norm = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double n = C2.col(j).norm();
    if (n > best_norm) {
      best_norm = n;
      best = j;
    }
  }
  if (best_norm > 1e-12 * scale) return C2.col(best).normalized();
  return Vec3::UnitX();
}

}  // namespace detail

// Smallest eigenvalue (and unit eigenvector) of a symmetric 3x3 matrix via
// the closed-form cubic. The returned value is the Rayleigh quotient of the
// closed-form eigenvector, which polishes the cubic's rounding error and
// keeps the result non-negative for PSD input.
inline EigenPair smallest_eigen_sym3(const Mat3& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw Error(ErrorCode::InvalidInput, "matrix is not symmetric");
  }
  const Mat3 ms = 0.5 * (m + m.transpose());
  const Vec3 evals = detail::sym3_eigenvalues(ms);
  const Vec3 v = detail::sym3_min_eigenvector(ms, evals);
  return {v.dot(ms * v), v};
}

inline double lambda_min_sym3(const Mat3& m) {
  return smallest_eigen_sym3(m).value;
}

// Pairs with |f . f'| above this cosine are dropped: near-parallel rays
// give near-zero normals dominated by noise.
inline const double kMaxRayCosine = std::cos(0.1 * M_PI / 180.0);

inline std::vector<BearingPair> prune_pairs(
    const std::vector<BearingPair>& pairs) {
  std::vector<BearingPair> kept;
  kept.reserve(pairs.size());
  for (const BearingPair& p : pairs) {
    if (std::abs(p.f.dot(p.f_prime)) <= kMaxRayCosine) kept.push_back(p);
  }
  return kept;
}

// Gradient of lambda_min(M(R Exp(d))) at d = 0 by the eigenvector sandwich
// dl = v^T dM v with the closed-form eigenvector.
inline Vec3 nec_rotation_gradient(const std::vector<BearingPair>& pairs,
                                  const Rotation& r_rel) {
  const Mat3 R = r_rel.matrix();
  Mat3 M = Mat3::Zero();
  std::vector<Vec3> normals(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    normals[i] = pairs[i].f.cross(R * pairs[i].f_prime);
    M.noalias() += normals[i] * normals[i].transpose();
  }
  const Vec3 v = smallest_eigen_sym3(M).vector;
  Vec3 g = Vec3::Zero();
  for (size_t i = 0; i < pairs.size(); ++i) {
    // d n_i / d d_j = f x (R (e_j x f'))
    const Mat3 dn = hat(pairs[i].f) * R * hat(pairs[i].f_prime).transpose();
    g += 2.0 * v.dot(normals[i]) * (dn.transpose() * v);
  }
  return g;
}

struct RotationEstimate {
  Rotation rotation;
  double lambda_min = 0.0;
  SolveStats stats;
};

// Relative rotation by minimizing lambda_min(M(R)) over the rotation's
// 3-dim tangent with Levenberg-Marquardt.
inline RotationEstimate estimate_rotation_nec(
    const std::vector<BearingPair>& pairs_in, const Rotation& r_init,
    const LmConfig& cfg = {}) {
  const std::vector<BearingPair> pairs = prune_pairs(pairs_in);
  if (pairs.size() < 2) {
    throw Error(ErrorCode::InsufficientData,
                "rotation estimation needs >= 2 non-degenerate pairs");
  }

  const Rotation r0 = r_init;
  // The two smallest eigenvalues crossing makes lambda_min nonsmooth;
  // nudge such evaluation points off the crossing.
  auto nudged = [&](const Vec3& d) {
    const Vec3 evals =
        detail::sym3_eigenvalues(nec_matrix(pairs, r0 * Rotation::exp(d)));
    return evals[1] - evals[0] < 1e-8 ? Vec3(d + Vec3::Constant(1e-10)) : d;
  };
  auto value = [&](const Vec3& d) {
    return lambda_min_sym3(nec_matrix(pairs, r0 * Rotation::exp(d)));
  };
  // Chart chain rule: R(d + e) = R(d) Exp(Jr(d) e).
  auto gradient = [&](const Vec3& d_in) {
    const Vec3 d = nudged(d_in);
    return Vec3(so3_right_jacobian(d).transpose() *
                nec_rotation_gradient(pairs, r0 * Rotation::exp(d)));
  };

  const auto res = minimize_scalar_lm<3>(Vec3::Zero(), value, gradient, cfg);
  RotationEstimate out;
  out.rotation = r0 * Rotation::exp(res.x);
  out.lambda_min = res.stats.final_cost;
  out.stats = res.stats;
  return out;
}

// Stereo NEC gyroscope-bias objective
//   sum over keyframe pairs of  lmin(M_left(b)) + lmin(M_right(b)),
// where the relative camera rotation is R_cb gamma_hat(b) R_bc and
// gamma_hat re-linearizes the preintegrated rotation at bias b. Exposed as
// a class so the gradient can be checked against finite differences.
class GyroBiasObjective {
 public:
  GyroBiasObjective(const std::vector<StereoPairSet>& sets,
                    const std::vector<Preintegration>& preints,
                    const Extrinsics& extr) {
    if (sets.size() != preints.size()) {
      throw Error(ErrorCode::InvalidInput,
                  "pair sets and preintegrations must align one-to-one");
    }
    const Mat3 R_bcL = extr.left.rotation.matrix();
    const Mat3 R_bcR = extr.right.rotation.matrix();
    for (size_t k = 0; k < sets.size(); ++k) {
      add_side(sets[k].left, preints[k], R_bcL);
      add_side(sets[k].right, preints[k], R_bcR);
    }
  }

  int term_count() const { return static_cast<int>(terms_.size()); }
  int skipped_sides() const { return skipped_; }

  double value(const Vec3& b) const {
    double cost = 0.0;
    for (const Term& t : terms_) {
      cost += smallest_eigen_sym3(term_matrix(t, b)).value;
    }
    return cost;
  }

  // True when any term sits near a crossing of its two smallest
  // eigenvalues, where the gradient of lambda_min is undefined.
  bool near_degenerate(const Vec3& b, double gap = 1e-8) const {
    for (const Term& t : terms_) {
      const Vec3 evals = detail::sym3_eigenvalues(term_matrix(t, b));
      if (evals[1] - evals[0] < gap) return true;
    }
    return false;
  }

  Vec3 gradient(const Vec3& b) const {
    Vec3 g = Vec3::Zero();
    for (const Term& t : terms_) {
      const Vec3 dbg = b - t.pre.lin_bias.gyro;
      const Vec3 jdb = t.pre.dr_dbg * dbg;
      const Mat3 gamma_hat = (t.pre.delta_r * Rotation::exp(jdb)).matrix();
      const Mat3 Rrel = t.R_cb * gamma_hat * t.R_bc;

      Mat3 M = Mat3::Zero();
      std::vector<Vec3> normals(t.pairs.size());
      for (size_t i = 0; i < t.pairs.size(); ++i) {
        normals[i] = t.pairs[i].f.cross(Rrel * t.pairs[i].f_prime);
        M.noalias() += normals[i] * normals[i].transpose();
      }
      const Vec3 v = smallest_eigen_sym3(M).vector;

      // d gamma_hat / d b_j = gamma_hat hat(w_j), w_j = Jr(J db) J e_j,
      // so d(Rrel f') / d b_j = R_cb gamma_hat hat(w_j) R_bc f'.
      const Mat3 W = so3_right_jacobian(jdb) * t.pre.dr_dbg;
      const Mat3 A = t.R_cb * gamma_hat;
      for (int j = 0; j < 3; ++j) {
        const Mat3 D = A * hat(W.col(j)) * t.R_bc;
        double gj = 0.0;
        for (size_t i = 0; i < t.pairs.size(); ++i) {
          const Vec3 dn = t.pairs[i].f.cross(D * t.pairs[i].f_prime);
          gj += 2.0 * v.dot(normals[i]) * v.dot(dn);
        }
        g[j] += gj;
      }
    }
    return g;
  }

 private:
  struct Term {
    std::vector<BearingPair> pairs;
    Preintegration pre;
    Mat3 R_cb;
    Mat3 R_bc;
  };

  static Mat3 term_matrix(const Term& t, const Vec3& b) {
    const Vec3 dbg = b - t.pre.lin_bias.gyro;
    const Mat3 Rrel = t.R_cb * correct_gamma(t.pre, dbg).matrix() * t.R_bc;
    Mat3 M = Mat3::Zero();
    for (const BearingPair& p : t.pairs) {
      const Vec3 n = p.f.cross(Rrel * p.f_prime);
      M.noalias() += n * n.transpose();
    }
    return M;
  }

  void add_side(const std::vector<BearingPair>& side, const Preintegration& pre,
                const Mat3& R_bc) {
    std::vector<BearingPair> kept = prune_pairs(side);
    if (kept.size() < 2) {
      if (!side.empty()) ++skipped_;
      return;
    }
    Term t;
    t.pairs = std::move(kept);
    t.pre = pre;
    t.R_bc = R_bc;
    t.R_cb = R_bc.transpose();
    terms_.push_back(std::move(t));
  }

  std::vector<Term> terms_;
  int skipped_ = 0;
};

struct BiasEstimate {
  Vec3 bias = Vec3::Zero();
  double objective = 0.0;
  SolveStats stats;
  int skipped_sides = 0;  // camera sides with < 2 usable pairs
};

// Box constraint guarding against divergence on degenerate windows.
inline constexpr double kMaxGyroBias = 0.5;  // rad/s, per axis

// Stereo NEC gyroscope-bias estimator (left + right eigenvalue terms
// summed over all consecutive keyframe pairs).
inline BiasEstimate estimate_gyro_bias_stereo(
    const std::vector<StereoPairSet>& sets,
    const std::vector<Preintegration>& preints, const Extrinsics& extr,
    const Vec3& bias_init = Vec3::Zero(), const LmConfig& cfg = {}) {
  const GyroBiasObjective objective(sets, preints, extr);
  if (objective.term_count() == 0) {
    throw Error(ErrorCode::InsufficientData,
                "no keyframe pair has >= 2 usable bearing pairs");
  }

  auto project = [](const Vec3& b) {
    return Vec3(b.cwiseMax(-kMaxGyroBias).cwiseMin(kMaxGyroBias));
  };
  auto value = [&](const Vec3& b) { return objective.value(project(b)); };
  auto gradient = [&](const Vec3& b_in) {
    Vec3 b = project(b_in);
    if (objective.near_degenerate(b)) b += Vec3::Constant(1e-10);
    return objective.gradient(b);
  };

  const auto res = minimize_scalar_lm<3>(bias_init, value, gradient, cfg);
  BiasEstimate out;
  out.bias = project(res.x);
  out.objective = res.stats.final_cost;
  out.stats = res.stats;
  out.skipped_sides = objective.skipped_sides();
  return out;
}

// Monocular variant (left camera only). Shares the stereo code path, so
// the stereo objective with an emptied right camera produces identical
// iterates.
inline BiasEstimate estimate_gyro_bias_mono(
    const std::vector<std::vector<BearingPair>>& pair_lists,
    const std::vector<Preintegration>& preints, const Extrinsics& extr,
    const Vec3& bias_init = Vec3::Zero(), const LmConfig& cfg = {}) {
  std::vector<StereoPairSet> sets(pair_lists.size());
  for (size_t k = 0; k < pair_lists.size(); ++k) {
    sets[k].left = pair_lists[k];
    sets[k].keyframe_k = static_cast<int>(k);
    sets[k].keyframe_k1 = static_cast<int>(k) + 1;
  }
  return estimate_gyro_bias_stereo(sets, preints, extr, bias_init, cfg);
}

}  // namespace vinit
