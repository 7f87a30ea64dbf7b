#pragma once

// Zero-mean Gaussian-process regression over a scalar position input with an
// exponentiated-quadratic kernel, plus the noisy-input variant that inflates
// each training point's noise by (posterior-mean slope * sigma_s)^2.

#include "crowdroad/optimizer.hpp"
#include "crowdroad/rng.hpp"
#include "crowdroad/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace crowdroad {

enum class GPMode { Standard, NoisyInput };

inline std::string_view to_string(GPMode m) { return m == GPMode::Standard ? "standard" : "noisy-input"; }

inline GPMode parse_gp_mode(std::string_view s) {
  if (s == "standard" || s == "gp") return GPMode::Standard;
  if (s == "noisy-input" || s == "nigp") return GPMode::NoisyInput;
  throw InvalidArgument("unknown regression mode '" + std::string(s) + "'");
}

template <typename Scalar = double>
struct GPHyperParams {
  Scalar signal_std{1};       // sigma_f, m
  Scalar lengthscale{1};      // l, m
  Scalar noise_std{0.1};      // sigma_w, m
  Scalar input_noise_std{0};  // sigma_s, m (noisy-input mode only)

  void validate(GPMode mode) const {
    auto finite_pos = [](Scalar v) { return std::isfinite(double(v)) && v > 0; };
    if (!finite_pos(signal_std) || !finite_pos(lengthscale) || !finite_pos(noise_std))
      throw InvalidArgument("GP hyperparameters must be finite and > 0");
    if (mode == GPMode::NoisyInput ? !finite_pos(input_noise_std) : !(input_noise_std >= 0))
      throw InvalidArgument("GP input noise std must be > 0 in noisy-input mode");
  }
};

/// sigma_f^2 exp(-(s - s')^2 / (2 l^2)).
template <typename Scalar>
Scalar kernel(Scalar s, Scalar s2, const GPHyperParams<Scalar>& hp) {
  using std::exp;
  const Scalar d = (s - s2) / hp.lengthscale;
  return hp.signal_std * hp.signal_std * exp(Scalar(-0.5) * d * d);
}

/// Squared scaled distances ((a_i - b_j) / l)^2.
template <typename Scalar>
Matrix<Scalar> scaled_sq_distance(const Vector<Scalar>& a, const Vector<Scalar>& b, Scalar lengthscale) {
  const Vector<Scalar> as = a / lengthscale, bs = b / lengthscale;
  return (as.rowwise().replicate(b.size()) - bs.transpose().colwise().replicate(a.size())).array().square().matrix();
}

template <typename Scalar>
Matrix<Scalar> kernel_matrix(const Vector<Scalar>& a, const Vector<Scalar>& b, const GPHyperParams<Scalar>& hp) {
  const Scalar sf2 = hp.signal_std * hp.signal_std;
  return (sf2 * (Scalar(-0.5) * scaled_sq_distance(a, b, hp.lengthscale).array()).exp()).matrix();
}

struct GPDiagnostics {
  double log_marginal_likelihood = 0;
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  int nigp_iterations = 0;
  bool converged = true;
};

/// Per-point noise variance: sigma_w^2 + slope_j^2 sigma_s^2 + extra_j.
template <typename Scalar>
Vector<Scalar> noise_diagonal(GPMode mode, const GPHyperParams<Scalar>& hp, Eigen::Index n,
                              const Vector<Scalar>& slopes, const Vector<Scalar>& extra) {
  Vector<Scalar> d = Vector<Scalar>::Constant(n, hp.noise_std * hp.noise_std);
  if (mode == GPMode::NoisyInput && slopes.size() == n)
    d.array() += slopes.array().square() * (hp.input_noise_std * hp.input_noise_std);
  if (extra.size() == n) d += extra;
  return d;
}

namespace detail {

/// Cholesky of `k`, adding jitter 1e-10 sf2 escalating x10 up to 1e-4 sf2 on
/// failure. With `fixed` the given jitter is used without searching.
template <typename Scalar>
std::optional<std::pair<Eigen::LLT<Matrix<Scalar>>, Scalar>> factorize(Matrix<Scalar> k, Scalar sf2,
                                                                       std::optional<Scalar> fixed = {}) {
  if (fixed) {
    k.diagonal().array() += *fixed;
    Eigen::LLT<Matrix<Scalar>> llt(k);
    if (llt.info() != Eigen::Success) return std::nullopt;
    return std::make_pair(std::move(llt), *fixed);
  }
  Eigen::LLT<Matrix<Scalar>> llt(k);
  if (llt.info() == Eigen::Success) return std::make_pair(std::move(llt), Scalar(0));
  for (Scalar j = Scalar(1e-10) * sf2; j <= Scalar(1.0000001e-4) * sf2; j *= Scalar(10)) {
    Matrix<Scalar> kj = k;
    kj.diagonal().array() += j;
    llt.compute(kj);
    if (llt.info() == Eigen::Success) return std::make_pair(std::move(llt), j);
  }
  return std::nullopt;
}

}  // namespace detail

/// Conditioned GP: hyperparameters, training data and cached factorization.
/// Immutable once built; safe for concurrent prediction.
template <typename Scalar = double>
class GPModel {
 public:
  GPModel() = default;

  /// Builds the posterior for fixed hyperparameters. Throws NumericalError
  /// if the Gram matrix cannot be factorized even with maximal jitter.
  static GPModel condition(GPMode mode, const GPHyperParams<Scalar>& hp, Vector<Scalar> inputs,
                           Vector<Scalar> targets, Vector<Scalar> slopes = {}, Vector<Scalar> extra_noise = {},
                           std::optional<Scalar> jitter = {}) {
    hp.validate(mode);
    if (inputs.size() != targets.size()) throw InvalidArgument("GP: inputs/targets length mismatch");
    if (!all_finite(inputs) || !all_finite(targets)) throw InvalidArgument("GP: non-finite training data");
    const Eigen::Index n = inputs.size();
    if (mode == GPMode::NoisyInput && slopes.size() != n) slopes = Vector<Scalar>::Zero(n);
    if (mode == GPMode::Standard) slopes.resize(0);
    if (extra_noise.size() != 0 && extra_noise.size() != n) throw InvalidArgument("GP: extra noise length mismatch");

    GPModel m;
    m.mode_ = mode;
    m.hp_ = hp;
    m.inputs_ = std::move(inputs);
    m.targets_ = std::move(targets);
    m.slopes_ = std::move(slopes);
    m.extra_noise_ = std::move(extra_noise);
    if (n > 0) {
      Matrix<Scalar> k = kernel_matrix(m.inputs_, m.inputs_, hp);
      k.diagonal() += noise_diagonal(mode, hp, n, m.slopes_, m.extra_noise_);
      auto f = detail::factorize<Scalar>(std::move(k), hp.signal_std * hp.signal_std, jitter);
      if (!f) throw NumericalError("GP: Cholesky failed after maximal jitter");
      m.llt_ = std::move(f->first);
      m.jitter_ = f->second;
      m.weights_ = m.llt_.solve(m.targets_);
      m.log_ml_ = -Scalar(0.5) * m.targets_.dot(m.weights_) -
                  m.llt_.matrixLLT().diagonal().array().log().sum() -
                  Scalar(0.5) * Scalar(n) * std::log(Scalar(2) * Scalar(M_PI));
    }
    return m;
  }

  GPMode mode() const { return mode_; }
  const GPHyperParams<Scalar>& hyperparams() const { return hp_; }
  const Vector<Scalar>& inputs() const { return inputs_; }
  const Vector<Scalar>& targets() const { return targets_; }
  const Vector<Scalar>& slopes() const { return slopes_; }
  const Vector<Scalar>& extra_noise() const { return extra_noise_; }
  /// (K + Sigma)^{-1} W
  const Vector<Scalar>& weights() const { return weights_; }
  const Eigen::LLT<Matrix<Scalar>>& factorization() const { return llt_; }
  Scalar jitter() const { return jitter_; }
  Scalar log_marginal_likelihood() const { return log_ml_; }
  Eigen::Index size() const { return inputs_.size(); }

  GPDiagnostics diagnostics;

 private:
  GPMode mode_ = GPMode::Standard;
  GPHyperParams<Scalar> hp_;
  Vector<Scalar> inputs_, targets_, slopes_, extra_noise_, weights_;
  Eigen::LLT<Matrix<Scalar>> llt_;
  Scalar jitter_{0};
  Scalar log_ml_{0};
};

template <typename Scalar = double>
struct GPPrediction {
  Vector<Scalar> mean;
  Vector<Scalar> variance;   // latent f, clamped at 0
  std::size_t clamped = 0;   // number of variances clamped
};

template <typename Scalar>
GPPrediction<Scalar> predict(const GPModel<Scalar>& model, const Vector<Scalar>& query) {
  const Scalar sf2 = model.hyperparams().signal_std * model.hyperparams().signal_std;
  GPPrediction<Scalar> out;
  if (model.size() == 0) {
    out.mean = Vector<Scalar>::Zero(query.size());
    out.variance = Vector<Scalar>::Constant(query.size(), sf2);
    return out;
  }
  const Matrix<Scalar> kq = kernel_matrix(model.inputs(), query, model.hyperparams());
  out.mean = kq.transpose() * model.weights();
  const Matrix<Scalar> v = model.factorization().matrixL().solve(kq);
  out.variance = (sf2 - v.colwise().squaredNorm().array()).matrix().transpose();
  for (Eigen::Index i = 0; i < out.variance.size(); ++i) {
    if (out.variance(i) < 0) {
      out.variance(i) = 0;
      ++out.clamped;
    }
  }
  return out;
}

/// d/ds of the posterior mean: sum_j alpha_j k(s, s_j) (s_j - s) / l^2.
template <typename Scalar>
Vector<Scalar> posterior_mean_slope(const GPModel<Scalar>& model, const Vector<Scalar>& positions) {
  Vector<Scalar> out = Vector<Scalar>::Zero(positions.size());
  const auto& hp = model.hyperparams();
  const Scalar inv_l2 = Scalar(1) / (hp.lengthscale * hp.lengthscale);
  for (Eigen::Index q = 0; q < positions.size(); ++q) {
    Scalar acc = 0;
    for (Eigen::Index j = 0; j < model.size(); ++j) {
      const Scalar d = model.inputs()(j) - positions(q);
      acc += model.weights()(j) * kernel(positions(q), model.inputs()(j), hp) * d * inv_l2;
    }
    out(q) = acc;
  }
  return out;
}

/// Log marginal likelihood and its gradient with respect to the log
/// hyperparameters [log sf, log l, log sw (, log ss)].
struct LogMarginalLikelihood {
  double value = -std::numeric_limits<double>::infinity();
  VectorXd gradient;
};

namespace detail {

/// In-place inverse of a lower-triangular block by recursive halving.
template <typename Scalar>
void invert_lower(Eigen::Ref<Matrix<Scalar>> l) {
  const Eigen::Index n = l.rows();
  if (n <= 96) {
    Matrix<Scalar> id = Matrix<Scalar>::Identity(n, n);
    l.template triangularView<Eigen::Lower>().solveInPlace(id);
    l = id;
    return;
  }
  const Eigen::Index h = n / 2;
  invert_lower<Scalar>(l.topLeftCorner(h, h));
  invert_lower<Scalar>(l.bottomRightCorner(n - h, n - h));
  const Matrix<Scalar> b = l.bottomLeftCorner(n - h, h) * l.topLeftCorner(h, h).template triangularView<Eigen::Lower>();
  l.bottomLeftCorner(n - h, h).noalias() =
      -(l.bottomRightCorner(n - h, n - h).template triangularView<Eigen::Lower>() * b);
}

/// K^{-1} from its Cholesky factor.
template <typename Scalar>
Matrix<Scalar> llt_inverse(const Eigen::LLT<Matrix<Scalar>>& llt) {
  Matrix<Scalar> m = llt.matrixL();
  invert_lower<Scalar>(m);
  m.template triangularView<Eigen::StrictlyUpper>().setZero();
  return m.transpose().template triangularView<Eigen::Upper>() * m;
}

/// Evaluates the log marginal likelihood, keeping the factorization of the
/// last point so a following gradient request at the same point only pays
/// for K^{-1}.
template <typename Scalar>
class LmlEvaluator {
 public:
  LmlEvaluator(GPMode mode, const Vector<Scalar>& inputs, const Vector<Scalar>& targets,
               const Vector<Scalar>& slopes, const Vector<Scalar>& extra)
      : mode_(mode), inputs_(inputs), targets_(targets), slopes_(slopes), extra_(extra) {}

  LogMarginalLikelihood operator()(const GPHyperParams<Scalar>& hp, bool with_gradient) {
    LogMarginalLikelihood out;
    if (!cached_ || !same(hp)) {
      cached_ = false;
      hp_ = hp;
      const Eigen::Index n = inputs_.size();
      const Scalar sf2 = hp.signal_std * hp.signal_std;
      d2_ = scaled_sq_distance(inputs_, inputs_, hp.lengthscale);
      kf_ = (sf2 * (Scalar(-0.5) * d2_.array()).exp()).matrix();
      Matrix<Scalar> k = kf_;
      k.diagonal() += noise_diagonal(mode_, hp, n, slopes_, extra_);
      auto f = factorize<Scalar>(std::move(k), sf2);
      if (!f) return out;
      llt_ = std::move(f->first);
      alpha_ = llt_.solve(targets_);
      value_ = double(-Scalar(0.5) * targets_.dot(alpha_) - llt_.matrixLLT().diagonal().array().log().sum() -
                      Scalar(0.5) * Scalar(n) * std::log(Scalar(2) * Scalar(M_PI)));
      cached_ = true;
    }
    out.value = value_;
    if (with_gradient) out.gradient = gradient();
    return out;
  }

 private:
  bool same(const GPHyperParams<Scalar>& hp) const {
    return hp.signal_std == hp_.signal_std && hp.lengthscale == hp_.lengthscale && hp.noise_std == hp_.noise_std &&
           hp.input_noise_std == hp_.input_noise_std;
  }

  // grad_i = 1/2 tr((alpha alpha^T - K^{-1}) dK/dtheta_i)
  VectorXd gradient() const {
    const Eigen::Index n = inputs_.size();
    Matrix<Scalar> w = alpha_ * alpha_.transpose() - llt_inverse(llt_);
    const Scalar g_sf = (w.array() * kf_.array()).sum();
    const Scalar g_l = (w.array() * kf_.array() * d2_.array()).sum();
    const Vector<Scalar> wd = w.diagonal();
    VectorXd g(mode_ == GPMode::NoisyInput ? 4 : 3);
    g(0) = double(g_sf);
    g(1) = double(Scalar(0.5) * g_l);
    g(2) = double(hp_.noise_std * hp_.noise_std * wd.sum());
    if (g.size() == 4)
      g(3) = slopes_.size() == n ? double(hp_.input_noise_std * hp_.input_noise_std * wd.dot(slopes_.cwiseAbs2())) : 0.0;
    return g;
  }

  GPMode mode_;
  const Vector<Scalar>& inputs_;
  const Vector<Scalar>& targets_;
  const Vector<Scalar>& slopes_;
  const Vector<Scalar>& extra_;
  bool cached_ = false;
  GPHyperParams<Scalar> hp_;
  Matrix<Scalar> d2_, kf_;
  Eigen::LLT<Matrix<Scalar>> llt_;
  Vector<Scalar> alpha_;
  double value_ = 0;
};

}  // namespace detail

template <typename Scalar>
LogMarginalLikelihood log_marginal_likelihood(GPMode mode, const GPHyperParams<Scalar>& hp,
                                              const Vector<Scalar>& inputs, const Vector<Scalar>& targets,
                                              const Vector<Scalar>& slopes, const Vector<Scalar>& extra,
                                              bool with_gradient) {
  detail::LmlEvaluator<Scalar> eval(mode, inputs, targets, slopes, extra);
  return eval(hp, with_gradient);
}

struct GPFitOptions {
  int restarts = 5;
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;
  double function_tolerance = 1e-10;
  int nigp_iterations = 2;
  std::uint64_t seed = 0;
};

/// Data-driven starting point: sf = std(W), l = range / 10, sw = sf / 10.
template <typename Scalar>
GPHyperParams<Scalar> default_hyperparams(const Vector<Scalar>& inputs, const Vector<Scalar>& targets,
                                          Scalar input_noise_std = Scalar(0.1)) {
  GPHyperParams<Scalar> hp;
  Scalar sd = 0;
  if (targets.size() > 1) sd = std::sqrt((targets.array() - targets.mean()).square().mean());
  hp.signal_std = sd > 0 ? sd : Scalar(1);
  const Scalar range = inputs.size() > 1 ? inputs.maxCoeff() - inputs.minCoeff() : Scalar(0);
  hp.lengthscale = range > 0 ? range / Scalar(10) : Scalar(1);
  hp.noise_std = hp.signal_std / Scalar(10);
  hp.input_noise_std = input_noise_std;
  return hp;
}

namespace detail {

template <typename Scalar>
VectorXd pack(const GPHyperParams<Scalar>& hp, GPMode mode) {
  VectorXd t(mode == GPMode::NoisyInput ? 4 : 3);
  t(0) = std::log(double(hp.signal_std));
  t(1) = std::log(double(hp.lengthscale));
  t(2) = std::log(double(hp.noise_std));
  if (t.size() == 4) t(3) = std::log(double(hp.input_noise_std));
  return t;
}

template <typename Scalar>
GPHyperParams<Scalar> unpack(const VectorXd& t, GPHyperParams<Scalar> base) {
  base.signal_std = Scalar(std::exp(t(0)));
  base.lengthscale = Scalar(std::exp(t(1)));
  base.noise_std = Scalar(std::exp(t(2)));
  if (t.size() == 4) base.input_noise_std = Scalar(std::exp(t(3)));
  return base;
}

struct FitOutcome {
  VectorXd theta;
  double value;
  int iterations, evaluations;
  bool converged;
};

/// Maximizes the log marginal likelihood from `starts` initial points.
template <typename Scalar>
FitOutcome optimize(GPMode mode, const GPHyperParams<Scalar>& init, const Vector<Scalar>& inputs,
                    const Vector<Scalar>& targets, const Vector<Scalar>& slopes, const Vector<Scalar>& extra,
                    int starts, const GPFitOptions& opts, Rng& rng) {
  const VectorXd theta0 = pack(init, mode);
  const Eigen::Index p = theta0.size();
  VectorXd lower(p), upper(p);
  lower.head(3) << std::log(1e-8), std::log(1e-4), std::log(1e-8);
  upper.head(3) << std::log(1e4), std::log(1e6), std::log(1e4);
  if (p == 4) {
    lower(3) = std::log(1e-6);
    upper(3) = std::log(1e4);
  }
  LmlEvaluator<Scalar> eval(mode, inputs, targets, slopes, extra);
  auto objective = [&](const VectorXd& theta, VectorXd* grad) {
    const auto hp = unpack(theta, init);
    const auto lml = eval(hp, grad != nullptr);
    if (grad) *grad = -lml.gradient;
    return -lml.value;
  };
  MinimizeOptions mo;
  mo.max_iterations = opts.max_iterations;
  mo.gradient_tolerance = opts.gradient_tolerance;
  mo.function_tolerance = opts.function_tolerance;

  StandardNormal normal;
  FitOutcome best{theta0, std::numeric_limits<double>::infinity(), 0, 0, false};
  int total_it = 0, total_ev = 0;
  for (int s = 0; s < std::max(1, starts); ++s) {
    VectorXd start = theta0;
    if (s > 0)
      for (Eigen::Index i = 0; i < p; ++i) start(i) += normal(rng);
    auto r = bfgs_minimize(objective, start, lower, upper, mo);
    total_it += r.iterations;
    total_ev += r.evaluations;
    if (std::isfinite(r.value) && r.value < best.value) best = {r.x, r.value, 0, 0, r.converged};
  }
  best.iterations = total_it;
  best.evaluations = total_ev;
  return best;
}

}  // namespace detail

/// Maximum-likelihood fit. Noisy-input mode first fits a standard GP, then
/// alternates (posterior-mean slopes at the training inputs -> refit with the
/// slope-corrected noise) `opts.nigp_iterations` times.
template <typename Scalar>
GPModel<Scalar> fit(const Vector<Scalar>& inputs, const Vector<Scalar>& targets, GPMode mode,
                    const GPHyperParams<Scalar>& init, const GPFitOptions& opts = {},
                    const Vector<Scalar>& extra_noise = {}) {
  if (inputs.size() < 2) throw InvalidArgument("GP fit needs at least 2 training points");
  if (inputs.size() != targets.size()) throw InvalidArgument("GP fit: inputs/targets length mismatch");
  if (!all_finite(inputs) || !all_finite(targets)) throw InvalidArgument("GP fit: non-finite training data");
  GPHyperParams<Scalar> start = init;
  if (mode == GPMode::NoisyInput && !(start.input_noise_std > 0)) start.input_noise_std = Scalar(0.1);
  start.validate(mode);

  Rng rng = make_rng(opts.seed, {0x67702d666974ULL});
  const Vector<Scalar> no_slopes;
  auto stage = detail::optimize(GPMode::Standard, start, inputs, targets, no_slopes, extra_noise, opts.restarts,
                                opts, rng);
  if (!std::isfinite(stage.value)) throw NumericalError("GP fit: no feasible hyperparameters found");
  GPDiagnostics diag;
  diag.iterations = stage.iterations;
  diag.evaluations = stage.evaluations;
  diag.restarts = std::max(1, opts.restarts);
  diag.converged = stage.converged;

  GPHyperParams<Scalar> hp = detail::unpack(stage.theta, start);
  if (mode == GPMode::Standard) {
    hp.input_noise_std = 0;
    auto m = GPModel<Scalar>::condition(mode, hp, inputs, targets, {}, extra_noise);
    diag.log_marginal_likelihood = double(m.log_marginal_likelihood());
    m.diagnostics = diag;
    return m;
  }

  auto current = GPModel<Scalar>::condition(GPMode::Standard, hp, inputs, targets, {}, extra_noise);
  Vector<Scalar> slopes = Vector<Scalar>::Zero(inputs.size());
  for (int it = 0; it < opts.nigp_iterations; ++it) {
    slopes = posterior_mean_slope(current, inputs);
    auto r = detail::optimize(GPMode::NoisyInput, hp, inputs, targets, slopes, extra_noise, 1, opts, rng);
    diag.iterations += r.iterations;
    diag.evaluations += r.evaluations;
    diag.converged = diag.converged && r.converged;
    ++diag.nigp_iterations;
    if (!std::isfinite(r.value)) throw NumericalError("GP fit: noisy-input refit failed");
    hp = detail::unpack(r.theta, hp);
    current = GPModel<Scalar>::condition(GPMode::NoisyInput, hp, inputs, targets, slopes, extra_noise);
  }
  if (opts.nigp_iterations <= 0)
    current = GPModel<Scalar>::condition(GPMode::NoisyInput, hp, inputs, targets, slopes, extra_noise);
  diag.log_marginal_likelihood = double(current.log_marginal_likelihood());
  current.diagnostics = diag;
  return current;
}

/// JSON document "gpmodel/1" (double precision only).
std::string to_json(const GPModel<double>& model);
GPModel<double> gp_model_from_json(std::string_view text);

}  // namespace crowdroad
