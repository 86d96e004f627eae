#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <functional>

#include "vinit/so3.hpp"

namespace vinit {

// Shared Levenberg-Marquardt schedule. Damping grows by `damping_increase`
// on a rejected step and shrinks by `damping_decrease` on an accepted one.
struct LmConfig {
  double initial_damping = 1e-4;
  double damping_increase = 10.0;
  double damping_decrease = 3.0;
  int max_iterations = 50;
  double step_tolerance = 1e-10;
  double cost_tolerance = 1e-14;
};

struct SolveStats {
  bool converged = false;
  int iterations = 0;
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

// Damped-Newton minimizer for a smooth scalar objective over R^n. The
// caller supplies the value and the analytic gradient; the Hessian is
// estimated by central differences of the gradient. Suited to the small
// (n = 3) eigenvalue objectives where a Gauss-Newton factorization is not
// available.
template <int N>
struct ScalarLmResult {
  Eigen::Matrix<double, N, 1> x;
  SolveStats stats;
};

template <int N>
ScalarLmResult<N> minimize_scalar_lm(
    const Eigen::Matrix<double, N, 1>& x0,
    const std::function<double(const Eigen::Matrix<double, N, 1>&)>& value,
    const std::function<Eigen::Matrix<double, N, 1>(
        const Eigen::Matrix<double, N, 1>&)>& gradient,
    const LmConfig& cfg = {}) {
  using VecN = Eigen::Matrix<double, N, 1>;
  using MatN = Eigen::Matrix<double, N, N>;

  ScalarLmResult<N> result;
  VecN x = x0;
  double cost = value(x);
  result.stats.initial_cost = cost;

  double mu = cfg.initial_damping;
  int iter = 0;
  for (; iter < cfg.max_iterations; ++iter) {
    const VecN g = gradient(x);

    MatN H;
    for (int j = 0; j < N; ++j) {
      const double eps = 1e-6 * std::max(1.0, std::abs(x[j]));
      VecN xp = x, xm = x;
      xp[j] += eps;
      xm[j] -= eps;
      H.col(j) = (gradient(xp) - gradient(xm)) / (2.0 * eps);
    }
    H = 0.5 * (H + H.transpose()).eval();

    bool stop = false;
    bool accepted = false;
    while (true) {
      const MatN A = H + mu * MatN::Identity();
      const VecN step = A.ldlt().solve(-g);
      if (!step.allFinite()) {
        mu *= cfg.damping_increase;
        if (mu > 1e32) { stop = true; break; }
        continue;
      }
      if (step.norm() < cfg.step_tolerance) {
        result.stats.converged = true;
        stop = true;
        break;
      }
      const double new_cost = value(x + step);
      if (new_cost < cost) {
        const double decrease = cost - new_cost;
        x += step;
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
  result.x = x;
  return result;
}

}  // namespace vinit
