#pragma once

// Shared fixtures for the unit and acceptance tests: random linear systems,
// a dense batch least-squares estimator and the numerical property checks.

#include "crowdroad/estimation.hpp"
#include "crowdroad/rng.hpp"
#include "crowdroad/simulation.hpp"

#include <cstdint>
#include <string>

namespace crowdroad::testing {

/// x ~ N(mean, cov) via a clamped eigendecomposition (cov may be singular).
VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, Rng& rng, StandardNormal& normal);

struct LinearSystem {
  DiscreteAugmentedModel<double> model;
  FilterInit<double> init;
};

/// Random n-state, r-output system with spectral radius `radius` and
/// positive definite Q, R and P0.
LinearSystem random_system(Rng& rng, int n, int r, double radius = 0.95);

struct Simulated {
  MatrixXd states;        // T x n
  MatrixXd measurements;  // T x r
};

/// Draws a trajectory of the model it is given (correctly specified noise).
Simulated simulate(const LinearSystem& sys, Eigen::Index steps, Rng& rng);

/// x(k|k) from the dense information-form least-squares problem over
/// z = [x0; eta_0 .. eta_{k-1}] using measurements y_0 .. y_k.
VectorXd batch_estimate(const LinearSystem& sys, const MatrixXd& measurements, Eigen::Index k);

struct CheckResult {
  bool pass = true;
  int cases = 0;
  double worst = 0;  // largest violation measure seen
  std::string detail;
};

/// Gram matrix min eigenvalue >= -1e-8 sf^2 on random input sets.
CheckResult check_kernel_psd(std::uint64_t seed, int sets = 100, int size = 50);

/// Posterior variance <= sf^2 + 1e-10 and non-increasing when a training point is added.
CheckResult check_posterior_variance(std::uint64_t seed, int cases = 100);

/// Analytic log-ML gradient vs central differences in log-hyperparameter space.
CheckResult check_lml_gradient(std::uint64_t seed, int points = 20, double tolerance = 1e-4);

/// Posterior-mean slope vs central differences with h = 1e-5 l.
CheckResult check_slope(std::uint64_t seed, int queries = 50, double tolerance = 1e-4);

/// Symmetry and PSD of predicted and filtered covariances over random filter steps.
CheckResult check_filter_covariance(std::uint64_t seed, int steps = 10000);

/// Two runs of every scheme from the same seed bundle serialize identically.
CheckResult check_pipeline_determinism(std::uint64_t seed, int vehicles = 3);

/// Metrics, traces and cloud state of a run as one string.
std::string serialize(const CollaborativeResult& r);

}  // namespace crowdroad::testing
