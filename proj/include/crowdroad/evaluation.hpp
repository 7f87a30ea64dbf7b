#pragma once

// Metrics, scheme comparisons, and the stacked-observation MMSE oracle that
// certifies the error reduction from appending a road-selector row.

#include "crowdroad/types.hpp"

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace crowdroad {

/// Stacked linear map from z = [x0; eta_0 .. eta_{k-1}] to the outputs
/// y_0 .. y_k: block i of `stack` is C L_i with
/// L_0 = [I 0 ... 0], L_i = [A^i A^{i-1} ... I 0 ...].
template <typename Scalar = double>
struct ObservabilityStack {
  int horizon = 0;
  std::vector<Matrix<Scalar>> selectors;  // L_0 .. L_k, each n x n(k+1)
  Matrix<Scalar> stack;                   // r(k+1) x n(k+1)
};

template <typename Scalar>
ObservabilityStack<Scalar> build_observability_stack(const Matrix<Scalar>& transition,
                                                     const Matrix<Scalar>& sensors, int horizon) {
  if (horizon < 0) throw InvalidArgument("horizon must be >= 0");
  const Eigen::Index n = transition.rows();
  const Eigen::Index r = sensors.rows();
  if (transition.cols() != n || sensors.cols() != n) throw InvalidArgument("observability stack: dimension mismatch");
  const Eigen::Index cols = n * (horizon + 1);
  ObservabilityStack<Scalar> out;
  out.horizon = horizon;
  out.stack = Matrix<Scalar>::Zero(r * (horizon + 1), cols);
  Matrix<Scalar> l = Matrix<Scalar>::Zero(n, cols);
  l.leftCols(n).setIdentity();
  for (int i = 0; i <= horizon; ++i) {
    if (i > 0) {
      // x_i = A x_{i-1} + eta_{i-1}
      Matrix<Scalar> next = transition * l;
      next.block(0, n * i, n, n) += Matrix<Scalar>::Identity(n, n);
      l = std::move(next);
    }
    out.stack.middleRows(r * i, r) = sensors * l;
    out.selectors.push_back(l);
  }
  return out;
}

/// tr(L_{k'} Sigma L_{k'}^T), Sigma = (sigma_eta^-2 I + sigma_v^-2 O^T O)^{-1}.
/// Throws NumericalError if the information matrix condition number exceeds 1e12.
template <typename Scalar>
Scalar mmse_oracle(const Matrix<Scalar>& transition, const Matrix<Scalar>& sensors, int horizon,
                   Scalar process_std, Scalar measurement_std, int query_step) {
  if (!(process_std > 0) || !(measurement_std > 0)) throw InvalidArgument("mmse_oracle: noise stds must be > 0");
  if (query_step < 0 || query_step > horizon) throw InvalidArgument("mmse_oracle: query step outside [0, horizon]");
  const auto obs = build_observability_stack(transition, sensors, horizon);
  const Eigen::Index m = obs.stack.cols();
  Matrix<Scalar> info = obs.stack.transpose() * obs.stack / (measurement_std * measurement_std);
  info.diagonal().array() += Scalar(1) / (process_std * process_std);
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(info);
  const auto& ev = es.eigenvalues();
  if (!(ev.minCoeff() > 0) || ev.maxCoeff() / ev.minCoeff() > Scalar(1e12))
    throw NumericalError("mmse_oracle: information matrix ill-conditioned");
  const Matrix<Scalar> sigma = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  (void)m;
  const auto& l = obs.selectors[static_cast<std::size_t>(query_step)];
  return (l * sigma * l.transpose()).trace();
}

template <typename A, typename B>
double rmse(const Eigen::MatrixBase<A>& estimate, const Eigen::MatrixBase<B>& truth) {
  if (estimate.size() != truth.size() || estimate.size() == 0)
    throw InvalidArgument("rmse: sequences must have equal non-zero length");
  return std::sqrt((estimate.template cast<double>() - truth.template cast<double>()).squaredNorm() /
                   double(estimate.size()));
}

struct VehicleMetrics {
  int vehicle = 0;  // 1-based
  double rmse_filtered = 0;
  double rmse_smoothed = 0;
  double cloud_rmse = std::numeric_limits<double>::quiet_NaN();
  double mean_posterior_std = std::numeric_limits<double>::quiet_NaN();
};

struct RunMetrics {
  std::string scheme;
  std::uint64_t seed = 0;
  std::vector<VehicleMetrics> vehicles;
};

/// CSV columns: scheme, vehicle_index, rmse_filtered_m, rmse_smoothed_m,
/// cloud_rmse_m, mean_posterior_std_m; `with_seed` prepends a seed column.
void write_metrics_csv(std::ostream& os, const std::vector<RunMetrics>& runs, bool with_seed = false);

/// One random instance for the sensor-appending comparison: a transition
/// matrix whose last state is the road signal, and r unit sensor rows that
/// never select it.
struct SensorComparisonSystem {
  MatrixXd transition;
  MatrixXd sensors;  // r x n, 0/1 rows
  double process_std = 1;
  double measurement_std = 1;
};

SensorComparisonSystem random_sensor_comparison_system(std::uint64_t seed, int index);

/// Appends the road-selector row [0 ... 0 1].
MatrixXd with_road_row(const MatrixXd& sensors);

struct SensorComparisonRow {
  int system = 0;
  int query_step = 0;
  double mmse_r = 0;
  double mmse_r1 = 0;
  double margin = 0;  // (mmse_r - mmse_r1) / mmse_r
};

struct SensorComparisonReport {
  std::vector<SensorComparisonRow> rows;
  int systems = 0;
  int skipped = 0;     // ill-conditioned instances
  int violations = 0;  // rows with margin < tolerance
  double min_margin = std::numeric_limits<double>::infinity();
};

/// Evaluates MMSE with r and r + 1 sensors at every k' in [0, horizon] on
/// `n_systems` random instances.
SensorComparisonReport compare_sensor_sets(int n_systems, int horizon, std::uint64_t seed,
                                           double tolerance = 1e-12);
void write_sensor_comparison_csv(std::ostream& os, const SensorComparisonReport& report);

struct Scenario;
/// Metrics for each of kf-only, kf-chain, nigp-psm, gp-psm, averaged-kf.
std::vector<RunMetrics> run_baselines(const Scenario& scenario);

}  // namespace crowdroad
