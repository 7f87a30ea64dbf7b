#pragma once

// Onboard estimator: Kalman filter with an optional pseudo-measurement row
// on the road state, fixed-interval (RTS) smoothing and fixed-lag smoothing.

#include "crowdroad/types.hpp"
#include "crowdroad/vehicle_model.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace crowdroad {

template <typename Scalar = double>
struct PseudoQuery {
  std::size_t step = 0;
  Scalar position{};  // estimated position s_hat(k), m
};

/// Extra measurement of the road state: value and noise variance supplied
/// per step by the caller (cloud GP, previous vehicle's trace, ...).
template <typename Scalar = double>
struct PseudoMeasurementChannel {
  std::function<Scalar(const PseudoQuery<Scalar>&)> value;
  std::function<Scalar(const PseudoQuery<Scalar>&)> variance;
  Scalar variance_floor = Scalar(1e-10);

  Scalar noise_variance(const PseudoQuery<Scalar>& q) const {
    const Scalar v = variance(q);
    return std::isfinite(double(v)) ? std::max(variance_floor, v) : v;
  }
};

/// Row [0 ... 0 1] selecting the road state.
template <typename Scalar>
Matrix<Scalar> road_selector(Eigen::Index state_dim) {
  Matrix<Scalar> l = Matrix<Scalar>::Zero(1, state_dim);
  l(0, state_dim - 1) = 1;
  return l;
}

template <typename Scalar = double>
struct FilterStep {
  std::size_t k = 0;
  Vector<Scalar> predicted_state;       // x(k|k-1)
  Matrix<Scalar> predicted_covariance;  // P(k|k-1)
  Vector<Scalar> state;                 // x(k|k)
  Matrix<Scalar> covariance;            // P(k|k)
  Matrix<Scalar> gain;                  // Gamma(k)
};

/// Prior for the first measured state, x(0|-1) and P(0|-1).
template <typename Scalar = double>
struct FilterInit {
  Vector<Scalar> state;
  Matrix<Scalar> covariance;
};

/// x0 = 0, P0 = diag(physical_var, ..., road stationary variance).
template <typename Scalar>
FilterInit<Scalar> default_filter_init(const DiscreteAugmentedModel<Scalar>& model,
                                       Scalar road_stationary_variance, Scalar physical_variance = Scalar(1)) {
  const Eigen::Index n = model.state_dim();
  FilterInit<Scalar> init{Vector<Scalar>::Zero(n), Matrix<Scalar>::Zero(n, n)};
  init.covariance.diagonal().setConstant(physical_variance);
  init.covariance(n - 1, n - 1) = road_stationary_variance;
  return init;
}

/// Runs the predict/correct recursion over all rows of `measurements`
/// (row k = onboard y(k)). Step 0 is a correction of the prior in `init`.
/// With a channel, the output matrix gains the road-selector row and R a
/// time-varying diagonal entry evaluated at positions(k).
template <typename Scalar>
std::vector<FilterStep<Scalar>> kf_run(const DiscreteAugmentedModel<Scalar>& model,
                                       const Matrix<Scalar>& measurements,
                                       const std::optional<PseudoMeasurementChannel<Scalar>>& channel,
                                       const Vector<Scalar>& positions, const FilterInit<Scalar>& init) {
  const Eigen::Index n = model.state_dim();
  const Eigen::Index r = model.output_dim();
  const Eigen::Index steps = measurements.rows();
  if (measurements.cols() != r) throw InvalidArgument("kf_run: measurement width does not match output matrix");
  if (channel && positions.size() != steps) throw InvalidArgument("kf_run: positions length mismatch");
  if (init.state.size() != n || init.covariance.rows() != n || init.covariance.cols() != n)
    throw InvalidArgument("kf_run: initial state dimension mismatch");
  if (Eigen::LLT<Matrix<Scalar>>(init.covariance).info() != Eigen::Success)
    throw InvalidArgument("kf_run: initial covariance must be positive definite");
  if (channel && (!channel->value || !channel->variance))
    throw InvalidArgument("kf_run: pseudo-measurement channel has no providers");

  const Eigen::Index rows = channel ? r + 1 : r;
  Matrix<Scalar> c(rows, n);
  c.topRows(r) = model.output;
  if (channel) c.bottomRows(1) = road_selector<Scalar>(n);
  Matrix<Scalar> noise = Matrix<Scalar>::Zero(rows, rows);
  noise.topLeftCorner(r, r) = model.measurement_noise;
  Vector<Scalar> y(rows);
  const Matrix<Scalar> identity = Matrix<Scalar>::Identity(n, n);

  std::vector<FilterStep<Scalar>> out;
  out.reserve(static_cast<std::size_t>(steps));
  Vector<Scalar> x = init.state;
  Matrix<Scalar> p = init.covariance;
  for (Eigen::Index k = 0; k < steps; ++k) {
    FilterStep<Scalar> s;
    s.k = static_cast<std::size_t>(k);
    if (k > 0) {
      x = model.transition * x;
      p = model.transition * p * model.transition.transpose() + model.process_noise;
      symmetrize(p);
    }
    s.predicted_state = x;
    s.predicted_covariance = p;

    y.head(r) = measurements.row(k).transpose();
    if (channel) {
      const PseudoQuery<Scalar> q{static_cast<std::size_t>(k), positions(k)};
      y(r) = channel->value(q);
      noise(r, r) = channel->noise_variance(q);
    }
    if (!all_finite(y) || !all_finite(noise))
      throw NumericalError("kf_run: non-finite measurement at step " + std::to_string(k));

    const Matrix<Scalar> innovation_cov = c * p * c.transpose() + noise;
    Eigen::LLT<Matrix<Scalar>> llt(innovation_cov);
    if (llt.info() != Eigen::Success)
      throw NumericalError("kf_run: innovation covariance not invertible at step " + std::to_string(k) +
                           " (check measurement/pseudo-measurement noise floor)");
    s.gain = llt.solve(c * p).transpose();
    x += s.gain * (y - c * x);
    // Joseph form keeps P symmetric positive semi-definite in floating point.
    const Matrix<Scalar> ikc = identity - s.gain * c;
    p = ikc * p * ikc.transpose() + s.gain * noise * s.gain.transpose();
    symmetrize(p);
    s.state = x;
    s.covariance = p;
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Scalar = double>
struct SmoothedSequence {
  std::vector<Vector<Scalar>> states;
  std::vector<Matrix<Scalar>> covariances;
};

namespace detail {

/// H(k) = P(k|k) A^T P(k+1|k)^{-1} for k = 0 .. T-2.
template <typename Scalar>
std::vector<Matrix<Scalar>> smoother_gains(const DiscreteAugmentedModel<Scalar>& model,
                                           const std::vector<FilterStep<Scalar>>& steps) {
  std::vector<Matrix<Scalar>> gains;
  if (steps.size() < 2) return gains;
  gains.reserve(steps.size() - 1);
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    Eigen::LLT<Matrix<Scalar>> llt(steps[k + 1].predicted_covariance);
    if (llt.info() != Eigen::Success)
      throw NumericalError("smoother: singular predicted covariance at step " + std::to_string(k + 1));
    gains.push_back(llt.solve(model.transition * steps[k].covariance).transpose());
  }
  return gains;
}

template <typename Scalar>
void backward_step(const FilterStep<Scalar>& cur, const FilterStep<Scalar>& next, const Matrix<Scalar>& h,
                   Vector<Scalar>& x_next, Matrix<Scalar>& p_next) {
  Vector<Scalar> x = cur.state + h * (x_next - next.predicted_state);
  Matrix<Scalar> p = cur.covariance + h * (p_next - next.predicted_covariance) * h.transpose();
  symmetrize(p);
  x_next = std::move(x);
  p_next = std::move(p);
}

}  // namespace detail

/// Fixed-interval (Rauch-Tung-Striebel) smoother over the whole run.
template <typename Scalar>
SmoothedSequence<Scalar> rts_smooth(const DiscreteAugmentedModel<Scalar>& model,
                                    const std::vector<FilterStep<Scalar>>& steps) {
  if (steps.empty()) throw InvalidArgument("rts_smooth: no filter steps");
  const auto gains = detail::smoother_gains(model, steps);
  const std::size_t t = steps.size();
  SmoothedSequence<Scalar> out;
  out.states.resize(t);
  out.covariances.resize(t);
  Vector<Scalar> x = steps.back().state;
  Matrix<Scalar> p = steps.back().covariance;
  out.states[t - 1] = x;
  out.covariances[t - 1] = p;
  for (std::size_t k = t - 1; k-- > 0;) {
    detail::backward_step(steps[k], steps[k + 1], gains[k], x, p);
    out.states[k] = x;
    out.covariances[k] = p;
  }
  return out;
}

/// Estimate at k conditioned on measurements up to min(k + lag, T - 1),
/// computed by a backward pass over the window.
template <typename Scalar>
SmoothedSequence<Scalar> fixed_lag_smooth(const DiscreteAugmentedModel<Scalar>& model,
                                          const std::vector<FilterStep<Scalar>>& steps, std::size_t lag) {
  if (steps.empty()) throw InvalidArgument("fixed_lag_smooth: no filter steps");
  if (lag > steps.size()) throw InvalidArgument("fixed_lag_smooth: lag exceeds run length");
  const std::size_t t = steps.size();
  SmoothedSequence<Scalar> out;
  out.states.resize(t);
  out.covariances.resize(t);
  if (lag == 0) {
    for (std::size_t k = 0; k < t; ++k) {
      out.states[k] = steps[k].state;
      out.covariances[k] = steps[k].covariance;
    }
    return out;
  }
  const auto gains = detail::smoother_gains(model, steps);
  for (std::size_t k = 0; k < t; ++k) {
    const std::size_t end = std::min(k + lag, t - 1);
    Vector<Scalar> x = steps[end].state;
    Matrix<Scalar> p = steps[end].covariance;
    for (std::size_t j = end; j > k; --j) detail::backward_step(steps[j - 1], steps[j], gains[j - 1], x, p);
    out.states[k] = std::move(x);
    out.covariances[k] = std::move(p);
  }
  return out;
}

/// Per-step record of one vehicle's road estimate.
template <typename Scalar = double>
struct EstimateTrace {
  Vector<Scalar> positions;        // s_hat(k)
  Vector<Scalar> filtered;         // w(k|k)
  Vector<Scalar> filtered_variance;
  Vector<Scalar> smoothed;         // w(k|k+L) or w(k|T_f)
  Vector<Scalar> smoothed_variance;
  Matrix<Scalar> states;           // T x (n+1) filtered states

  Eigen::Index size() const { return positions.size(); }
};

template <typename Scalar>
EstimateTrace<Scalar> make_trace(const std::vector<FilterStep<Scalar>>& steps,
                                 const SmoothedSequence<Scalar>& smoothed, const Vector<Scalar>& positions) {
  const auto t = static_cast<Eigen::Index>(steps.size());
  if (positions.size() != t || static_cast<Eigen::Index>(smoothed.states.size()) != t)
    throw InvalidArgument("make_trace: length mismatch");
  EstimateTrace<Scalar> tr;
  tr.positions = positions;
  tr.filtered.resize(t);
  tr.filtered_variance.resize(t);
  tr.smoothed.resize(t);
  tr.smoothed_variance.resize(t);
  if (t == 0) return tr;
  const Eigen::Index n = steps.front().state.size();
  const Eigen::Index w = n - 1;
  tr.states.resize(t, n);
  for (Eigen::Index k = 0; k < t; ++k) {
    const auto& s = steps[static_cast<std::size_t>(k)];
    tr.states.row(k) = s.state.transpose();
    tr.filtered(k) = s.state(w);
    tr.filtered_variance(k) = s.covariance(w, w);
    tr.smoothed(k) = smoothed.states[static_cast<std::size_t>(k)](w);
    tr.smoothed_variance(k) = smoothed.covariances[static_cast<std::size_t>(k)](w, w);
  }
  return tr;
}

/// Columns: k, s_hat_m, w_filt_m, w_filt_var, w_smooth_m, w_smooth_var.
void write_trace_csv(std::ostream& os, const EstimateTrace<double>& trace);

}  // namespace crowdroad
