#pragma once

#include "crowdroad/types.hpp"

#include <cmath>
#include <limits>

namespace crowdroad {

struct MinimizeOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;   // infinity norm
  double function_tolerance = 1e-10;  // relative change between iterations
  double max_step = 2.0;              // largest step length per iteration
};

struct MinimizeResult {
  VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Box-projected BFGS with Armijo backtracking.
///
/// `objective(x, grad)` returns f(x) and fills `grad` when it is non-null.
/// A non-finite return marks an infeasible point and triggers backtracking.
template <typename Objective>
MinimizeResult bfgs_minimize(Objective&& objective, VectorXd x0, const VectorXd& lower, const VectorXd& upper,
                             const MinimizeOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  auto project = [&](VectorXd v) { return v.cwiseMax(lower).cwiseMin(upper).eval(); };

  MinimizeResult res;
  res.x = project(std::move(x0));
  res.gradient = VectorXd::Zero(n);
  res.value = objective(res.x, &res.gradient);
  ++res.evaluations;
  if (!std::isfinite(res.value)) return res;

  MatrixXd inv_hessian = MatrixXd::Identity(n, n);
  int small_changes = 0;
  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    // Components pinned at a bound with the gradient pushing outward do not count.
    VectorXd free_grad = res.gradient;
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((res.x(i) <= lower(i) && res.gradient(i) > 0) || (res.x(i) >= upper(i) && res.gradient(i) < 0))
        free_grad(i) = 0;
    }
    if (free_grad.lpNorm<Eigen::Infinity>() <= opts.gradient_tolerance) {
      res.converged = true;
      break;
    }

    VectorXd dir = -(inv_hessian * res.gradient);
    if (dir.dot(res.gradient) >= 0) {
      inv_hessian.setIdentity();
      dir = -res.gradient;
    }
    const double len = dir.norm();
    if (len > opts.max_step) dir *= opts.max_step / len;

    double step = 1.0;
    VectorXd trial;
    double f_trial = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      trial = project(res.x + step * dir);
      f_trial = objective(trial, nullptr);
      ++res.evaluations;
      if (std::isfinite(f_trial) && f_trial <= res.value + 1e-4 * res.gradient.dot(trial - res.x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No descent along the quasi-Newton direction: retry once from steepest descent.
      if (!inv_hessian.isIdentity()) {
        inv_hessian.setIdentity();
        continue;
      }
      res.converged = free_grad.lpNorm<Eigen::Infinity>() <= 1e3 * opts.gradient_tolerance;
      break;
    }

    // The objective may reuse work from the value call at the same point.
    VectorXd g_new(n);
    objective(trial, &g_new);
    ++res.evaluations;
    const VectorXd s = trial - res.x;
    const VectorXd y = g_new - res.gradient;
    const double change = std::abs(res.value - f_trial);
    res.x = trial;
    res.value = f_trial;
    res.gradient = g_new;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (inv_hessian.isIdentity()) inv_hessian *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const MatrixXd eye = MatrixXd::Identity(n, n);
      inv_hessian = (eye - rho * s * y.transpose()) * inv_hessian * (eye - rho * y * s.transpose()) +
                    rho * s * s.transpose();
    }

    if (change <= opts.function_tolerance * std::max(1.0, std::abs(res.value))) {
      if (++small_changes >= 2) {
        res.converged = true;
        ++res.iterations;
        break;
      }
    } else {
      small_changes = 0;
    }
  }
  return res;
}

}  // namespace crowdroad
