#pragma once

// Quarter-car suspension dynamics with a first-order road model appended as
// an extra state, and the continuous-to-discrete conversion used by the
// onboard estimators.

#include "crowdroad/types.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace crowdroad {

template <typename Scalar = double>
struct QuarterCarParams {
  Scalar sprung_mass{};         // kg
  Scalar unsprung_mass{};       // kg
  Scalar spring_stiffness{};    // N/m
  Scalar tire_stiffness{};      // N/m
  Scalar suspension_damping{};  // N s/m
  Scalar tire_damping{0};       // N s/m

  /// Throws InvalidArgument naming the first offending field.
  /// A zero suspension spring is accepted as the decoupled limit.
  void validate() const {
    auto require = [](bool ok, std::string_view field, std::string_view rule) {
      if (!ok) throw InvalidArgument(std::string(field) + " " + std::string(rule));
    };
    require(std::isfinite(double(sprung_mass)) && sprung_mass > 0, "sprung_mass", "must be > 0");
    require(std::isfinite(double(unsprung_mass)) && unsprung_mass > 0, "unsprung_mass", "must be > 0");
    require(std::isfinite(double(spring_stiffness)) && spring_stiffness >= 0, "spring_stiffness",
            "must be >= 0");
    require(std::isfinite(double(tire_stiffness)) && tire_stiffness > 0, "tire_stiffness", "must be > 0");
    require(std::isfinite(double(suspension_damping)) && suspension_damping >= 0, "suspension_damping",
            "must be >= 0");
    require(std::isfinite(double(tire_damping)) && tire_damping >= 0, "tire_damping", "must be >= 0");
  }
};

/// First-order road model dw/dt = a w + b e, e unit-intensity white noise.
template <typename Scalar = double>
struct RoadModelParams {
  Scalar pole{};  // a, 1/s
  Scalar gain{};  // b

  struct Roughness {
    Scalar roughness{};      // G_r
    Scalar nominal_speed{};  // V, m/s
    Scalar cutoff{};         // w0, rad/s
  };
  std::optional<Roughness> roughness;

  /// a = -w0, b = sqrt(2 pi G_r V).
  static RoadModelParams from_roughness(Scalar g_r, Scalar speed, Scalar cutoff) {
    using std::sqrt;
    RoadModelParams p;
    p.pole = -cutoff;
    p.gain = sqrt(Scalar(2) * Scalar(M_PI) * g_r * speed);
    p.roughness = Roughness{g_r, speed, cutoff};
    p.validate();
    return p;
  }

  void validate() const {
    using std::abs;
    if (!(pole < 0)) throw InvalidArgument("road pole must be < 0");
    if (!(gain >= 0) || !std::isfinite(double(gain))) throw InvalidArgument("road gain must be finite and >= 0");
    if (roughness) {
      const auto& r = *roughness;
      if (!(r.roughness >= 0 && r.nominal_speed > 0 && r.cutoff > 0))
        throw InvalidArgument("road roughness parameters must be non-negative with positive speed and cutoff");
      const Scalar a = -r.cutoff;
      const Scalar b = std::sqrt(Scalar(2) * Scalar(M_PI) * r.roughness * r.nominal_speed);
      auto rel = [](Scalar x, Scalar y) { return abs(x - y) / std::max<Scalar>(abs(y), Scalar(1e-300)); };
      if (rel(pole, a) > Scalar(1e-12) || (b != 0 && rel(gain, b) > Scalar(1e-12)) || (b == 0 && gain != 0))
        throw InvalidArgument("road (pole, gain) inconsistent with roughness parameters");
    }
  }
};

/// Continuous-time quarter car: dx/dt = A x + B_w w, y = C x.
template <typename Scalar = double>
struct ContinuousModel {
  Matrix<Scalar> state;       // 4 x 4
  Vector<Scalar> road_input;  // 4, road elevation w
  Vector<Scalar> road_rate_input;  // 4, dw/dt (non-zero only with tire damping)
  Matrix<Scalar> output;      // 2 x 4
};

/// State [x1 x2 x3 x4] = sprung displacement, sprung velocity, unsprung
/// displacement, unsprung velocity. Outputs y1 = x1, y2 = x1 - x3.
template <typename Scalar>
ContinuousModel<Scalar> build_continuous_model(const QuarterCarParams<Scalar>& p) {
  p.validate();
  const Scalar ms = p.sprung_mass, mu = p.unsprung_mass;
  const Scalar ks = p.spring_stiffness, kt = p.tire_stiffness;
  const Scalar c = p.suspension_damping, ct = p.tire_damping;

  ContinuousModel<Scalar> m;
  m.state = Matrix<Scalar>::Zero(4, 4);
  m.state(0, 1) = 1;
  m.state.row(1) << -ks / ms, -c / ms, ks / ms, c / ms;
  m.state(2, 3) = 1;
  m.state.row(3) << ks / mu, c / mu, -(ks + kt) / mu, -(c + ct) / mu;

  m.road_input = Vector<Scalar>::Zero(4);
  m.road_input(3) = kt / mu;
  m.road_rate_input = Vector<Scalar>::Zero(4);
  m.road_rate_input(3) = ct / mu;

  m.output = Matrix<Scalar>::Zero(2, 4);
  m.output.row(0) << 1, 0, 0, 0;
  m.output.row(1) << 1, 0, -1, 0;
  return m;
}

enum class Discretization { ExactZOH, ForwardEuler };

inline Discretization parse_discretization(std::string_view s) {
  if (s == "zoh" || s == "exact-zoh") return Discretization::ExactZOH;
  if (s == "euler" || s == "forward-euler") return Discretization::ForwardEuler;
  throw InvalidArgument("unknown discretization method '" + std::string(s) + "'");
}

template <typename Scalar>
struct DiscretePair {
  Matrix<Scalar> transition;
  Matrix<Scalar> noise_covariance;
};

/// Discretizes dx/dt = A x + G e with unit-intensity white e over one period.
/// Exact ZOH uses Van Loan's block exponential; Euler uses I + A T, G G^T T.
template <typename Scalar>
DiscretePair<Scalar> discretize(const Matrix<Scalar>& a, const Matrix<Scalar>& g, Scalar sample_time,
                                Discretization method = Discretization::ExactZOH) {
  if (!(sample_time > 0) || !std::isfinite(double(sample_time)))
    throw InvalidArgument("sample time must be > 0");
  if (!all_finite(a) || !all_finite(g)) throw NumericalError("non-finite entries in continuous model");
  const Eigen::Index n = a.rows();
  if (a.cols() != n || g.rows() != n) throw InvalidArgument("discretize: dimension mismatch");

  DiscretePair<Scalar> out;
  const Matrix<Scalar> ggt = g * g.transpose();
  if (method == Discretization::ForwardEuler) {
    out.transition = Matrix<Scalar>::Identity(n, n) + a * sample_time;
    out.noise_covariance = ggt * sample_time;
  } else {
    Matrix<Scalar> block = Matrix<Scalar>::Zero(2 * n, 2 * n);
    block.topLeftCorner(n, n) = -a * sample_time;
    block.topRightCorner(n, n) = ggt * sample_time;
    block.bottomRightCorner(n, n) = a.transpose() * sample_time;
    const Matrix<Scalar> e = block.exp();
    out.transition = e.bottomRightCorner(n, n).transpose();
    out.noise_covariance = out.transition * e.topRightCorner(n, n);
  }
  symmetrize(out.noise_covariance);
  if (!all_finite(out.transition) || !all_finite(out.noise_covariance))
    throw NumericalError("discretization produced non-finite entries");
  return out;
}

/// Discrete augmented system x(k+1) = A x(k) + eta, y = C x + v with the
/// road elevation as the last state.
template <typename Scalar = double>
struct DiscreteAugmentedModel {
  Matrix<Scalar> transition;        // (n+1) x (n+1)
  Matrix<Scalar> input;             // (n+1) x m, m = 0 for a passive suspension
  Matrix<Scalar> output;            // r x (n+1)
  Matrix<Scalar> process_noise;     // Q
  Matrix<Scalar> measurement_noise; // R
  Scalar sample_time{};

  Eigen::Index state_dim() const { return transition.rows(); }
  Eigen::Index road_index() const { return transition.rows() - 1; }
  Eigen::Index output_dim() const { return output.rows(); }

  void validate() const {
    const Eigen::Index n = transition.rows();
    if (transition.cols() != n || process_noise.rows() != n || process_noise.cols() != n ||
        output.cols() != n || measurement_noise.rows() != output.rows() ||
        measurement_noise.cols() != output.rows())
      throw InvalidArgument("augmented model: inconsistent dimensions");
    if (!all_finite(transition) || !all_finite(process_noise) || !all_finite(output) ||
        !all_finite(measurement_noise))
      throw NumericalError("augmented model: non-finite entries");
    const Scalar qscale = std::max<Scalar>(Scalar(1), process_noise.cwiseAbs().maxCoeff());
    if ((process_noise - process_noise.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12) * qscale)
      throw InvalidArgument("process noise covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> qe(process_noise, Eigen::EigenvaluesOnly);
    if (qe.eigenvalues().minCoeff() < Scalar(-1e-12) * qscale)
      throw InvalidArgument("process noise covariance is not positive semi-definite");
    if ((measurement_noise - measurement_noise.transpose()).cwiseAbs().maxCoeff() >
        Scalar(1e-12) * std::max<Scalar>(Scalar(1), measurement_noise.cwiseAbs().maxCoeff()))
      throw InvalidArgument("measurement noise covariance is not symmetric");
    Eigen::LLT<Matrix<Scalar>> rl(measurement_noise);
    if (rl.info() != Eigen::Success) throw InvalidArgument("measurement noise covariance is not positive definite");
  }
};

template <typename Scalar = double>
struct AugmentOptions {
  Discretization method = Discretization::ExactZOH;
  /// Diagonal process noise added to every physical state (unmodeled dynamics).
  Scalar physical_process_noise = Scalar(1e-8);
};

/// Appends the road state, discretizes, and builds Q from the road channel
/// plus a diagonal physical term. R defaults to identity; callers set it
/// from the sensing configuration.
template <typename Scalar>
DiscreteAugmentedModel<Scalar> augment_and_discretize(const ContinuousModel<Scalar>& cont,
                                                      const RoadModelParams<Scalar>& road, Scalar sample_time,
                                                      const AugmentOptions<Scalar>& opts = {}) {
  road.validate();
  if (!(opts.physical_process_noise >= 0)) throw InvalidArgument("physical process noise must be >= 0");
  const Eigen::Index n = cont.state.rows();
  Matrix<Scalar> a = Matrix<Scalar>::Zero(n + 1, n + 1);
  a.topLeftCorner(n, n) = cont.state;
  // dw/dt = a w + b e feeds the tire-damping path through both terms.
  a.topRightCorner(n, 1) = cont.road_input + cont.road_rate_input * road.pole;
  a(n, n) = road.pole;

  Matrix<Scalar> g = Matrix<Scalar>::Zero(n + 1, 1);
  g.topRows(n) = cont.road_rate_input * road.gain;
  g(n, 0) = road.gain;

  auto d = discretize<Scalar>(a, g, sample_time, opts.method);

  DiscreteAugmentedModel<Scalar> m;
  m.transition = std::move(d.transition);
  m.input = Matrix<Scalar>::Zero(n + 1, 0);
  m.output = Matrix<Scalar>::Zero(cont.output.rows(), n + 1);
  m.output.leftCols(n) = cont.output;
  m.process_noise = std::move(d.noise_covariance);
  m.process_noise.diagonal().head(n).array() += opts.physical_process_noise;
  m.measurement_noise = Matrix<Scalar>::Identity(cont.output.rows(), cont.output.rows());
  m.sample_time = sample_time;
  return m;
}

/// Discrete scalar road recursion w(k+1) = a_d w(k) + b_d e(k), e ~ N(0, 1).
template <typename Scalar>
std::pair<Scalar, Scalar> discrete_road(const RoadModelParams<Scalar>& road, Scalar sample_time,
                                        Discretization method = Discretization::ExactZOH) {
  road.validate();
  Matrix<Scalar> a(1, 1), g(1, 1);
  a(0, 0) = road.pole;
  g(0, 0) = road.gain;
  const auto d = discretize<Scalar>(a, g, sample_time, method);
  using std::sqrt;
  return {d.transition(0, 0), sqrt(std::max<Scalar>(Scalar(0), d.noise_covariance(0, 0)))};
}

/// Multiplies an estimate by sqrt(V / V0) to move it between travel speeds.
template <typename Derived>
auto scale_profile_estimate(const Eigen::MatrixBase<Derived>& estimate, typename Derived::Scalar speed,
                            typename Derived::Scalar nominal_speed) {
  using Scalar = typename Derived::Scalar;
  if (!(speed > 0) || !(nominal_speed > 0)) throw InvalidArgument("speeds must be > 0");
  using std::sqrt;
  const Scalar factor = sqrt(speed / nominal_speed);
  return (estimate * factor).eval();
}

}  // namespace crowdroad
