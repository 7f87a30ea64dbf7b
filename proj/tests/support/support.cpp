#include "support.hpp"

#include "crowdroad/gp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace crowdroad::testing {

namespace {

MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, StandardNormal& normal) {
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

MatrixXd random_spd(Eigen::Index n, double floor, Rng& rng, StandardNormal& normal) {
  const MatrixXd g = gaussian_matrix(n, n, rng, normal);
  MatrixXd s = g * g.transpose() / double(n);
  s.diagonal().array() += floor;
  return s;
}

VectorXd uniform_vector(Eigen::Index n, double lo, double hi, Rng& rng) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = uniform(rng, lo, hi);
  return v;
}

GPHyperParams<double> random_hyperparams(Rng& rng) {
  GPHyperParams<double> hp;
  hp.signal_std = std::exp(uniform(rng, std::log(0.01), std::log(2.0)));
  hp.lengthscale = std::exp(uniform(rng, std::log(0.3), std::log(5.0)));
  hp.noise_std = hp.signal_std * std::exp(uniform(rng, std::log(0.01), std::log(0.5)));
  hp.input_noise_std = std::exp(uniform(rng, std::log(0.02), std::log(0.5)));
  return hp;
}

void fail(CheckResult& r, const std::string& what) {
  if (r.pass) r.detail = what;
  r.pass = false;
}

}  // namespace

VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, Rng& rng, StandardNormal& normal) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  VectorXd e(mean.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = normal(rng);
  return mean + es.eigenvectors() * root.asDiagonal() * e;
}

LinearSystem random_system(Rng& rng, int n, int r, double radius) {
  StandardNormal normal;
  LinearSystem s;
  MatrixXd a = gaussian_matrix(n, n, rng, normal);
  const double rho = a.eigenvalues().cwiseAbs().maxCoeff();
  a *= radius / std::max(rho, 1e-12);
  s.model.transition = a;
  s.model.input = MatrixXd::Zero(n, 0);
  s.model.output = gaussian_matrix(r, n, rng, normal);
  s.model.process_noise = random_spd(n, 0.1, rng, normal);
  s.model.measurement_noise = random_spd(r, 0.1, rng, normal);
  s.model.sample_time = 1;
  s.init.state = gaussian_matrix(n, 1, rng, normal);
  s.init.covariance = random_spd(n, 0.5, rng, normal);
  return s;
}

Simulated simulate(const LinearSystem& sys, Eigen::Index steps, Rng& rng) {
  StandardNormal normal;
  const auto& m = sys.model;
  const Eigen::Index n = m.state_dim(), r = m.output_dim();
  Simulated out{MatrixXd(steps, n), MatrixXd(steps, r)};
  const VectorXd zero_n = VectorXd::Zero(n), zero_r = VectorXd::Zero(r);
  VectorXd x = sample_gaussian(sys.init.state, sys.init.covariance, rng, normal);
  for (Eigen::Index k = 0; k < steps; ++k) {
    out.states.row(k) = x.transpose();
    out.measurements.row(k) = (m.output * x + sample_gaussian(zero_r, m.measurement_noise, rng, normal)).transpose();
    x = m.transition * x + sample_gaussian(zero_n, m.process_noise, rng, normal);
  }
  return out;
}

VectorXd batch_estimate(const LinearSystem& sys, const MatrixXd& measurements, Eigen::Index k) {
  const auto& m = sys.model;
  const Eigen::Index n = m.state_dim(), r = m.output_dim();
  const Eigen::Index dim = n * (k + 1);

  // Row block i of the stack maps z to x_i: x_i = A^i x0 + sum_{j<i} A^{i-1-j} eta_j.
  std::vector<MatrixXd> maps;
  MatrixXd li = MatrixXd::Zero(n, dim);
  li.leftCols(n).setIdentity();
  maps.push_back(li);
  for (Eigen::Index i = 1; i <= k; ++i) {
    MatrixXd next = m.transition * maps.back();
    next.block(0, n * i, n, n) += MatrixXd::Identity(n, n);
    maps.push_back(std::move(next));
  }

  const MatrixXd r_inv = m.measurement_noise.inverse();
  const MatrixXd q_inv = m.process_noise.inverse();
  MatrixXd info = MatrixXd::Zero(dim, dim);
  VectorXd rhs = VectorXd::Zero(dim);
  const MatrixXd p0_inv = sys.init.covariance.inverse();
  info.topLeftCorner(n, n) = p0_inv;
  rhs.head(n) = p0_inv * sys.init.state;
  for (Eigen::Index i = 1; i <= k; ++i) info.block(n * i, n * i, n, n) = q_inv;
  for (Eigen::Index i = 0; i <= k; ++i) {
    const MatrixXd oi = m.output * maps[static_cast<std::size_t>(i)];
    info += oi.transpose() * r_inv * oi;
    rhs += oi.transpose() * r_inv * measurements.row(i).transpose();
  }
  (void)r;
  const VectorXd z = info.ldlt().solve(rhs);
  return maps.back() * z;
}

CheckResult check_kernel_psd(std::uint64_t seed, int sets, int size) {
  CheckResult res;
  Rng rng = make_rng(seed, {0x6b70});
  for (int s = 0; s < sets; ++s) {
    const auto hp = random_hyperparams(rng);
    const VectorXd x = uniform_vector(size, 0, uniform(rng, 1, 100), rng);
    const MatrixXd k = kernel_matrix(x, x, hp);
    const double sf2 = hp.signal_std * hp.signal_std;
    const double min_eig = Eigen::SelfAdjointEigenSolver<MatrixXd>(k, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    const double violation = -min_eig / sf2;
    res.worst = std::max(res.worst, violation);
    ++res.cases;
    if (violation > 1e-8) fail(res, "set " + std::to_string(s) + ": min eigenvalue " + std::to_string(min_eig));
  }
  return res;
}

CheckResult check_posterior_variance(std::uint64_t seed, int cases) {
  CheckResult res;
  Rng rng = make_rng(seed, {0x7076});
  StandardNormal normal;
  for (int c = 0; c < cases; ++c) {
    const auto hp = random_hyperparams(rng);
    const double sf2 = hp.signal_std * hp.signal_std;
    const Eigen::Index n = 1 + Eigen::Index(uniform(rng, 0, 30));
    const double span = uniform(rng, 1, 20);
    const VectorXd x = uniform_vector(n + 1, 0, span, rng);
    VectorXd y(n + 1);
    for (Eigen::Index i = 0; i <= n; ++i) y(i) = hp.signal_std * normal(rng);
    const VectorXd q = uniform_vector(20, -1, span + 1, rng);
    const auto small = GPModel<double>::condition(GPMode::Standard, hp, x.head(n), y.head(n));
    const auto big = GPModel<double>::condition(GPMode::Standard, hp, x, y);
    const auto ps = predict(small, q);
    const auto pb = predict(big, q);
    const double above_prior = std::max(ps.variance.maxCoeff(), pb.variance.maxCoeff()) - sf2;
    const double increase = (pb.variance - ps.variance).maxCoeff();
    res.worst = std::max({res.worst, above_prior, increase / sf2});
    ++res.cases;
    if (above_prior > 1e-10) fail(res, "case " + std::to_string(c) + ": variance exceeds prior");
    if (increase > 1e-12 * sf2) fail(res, "case " + std::to_string(c) + ": variance grew after adding a point");
  }
  return res;
}

CheckResult check_lml_gradient(std::uint64_t seed, int points, double tolerance) {
  CheckResult res;
  Rng rng = make_rng(seed, {0x6c6d6c});
  StandardNormal normal;
  for (int p = 0; p < points; ++p) {
    const GPMode mode = p % 2 == 0 ? GPMode::Standard : GPMode::NoisyInput;
    const auto hp = random_hyperparams(rng);
    const Eigen::Index n = 40;
    const VectorXd x = uniform_vector(n, 0, 20, rng);
    VectorXd y(n), slopes(n), extra(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      y(i) = std::sin(x(i) / 2) * hp.signal_std + 0.3 * hp.signal_std * normal(rng);
      slopes(i) = normal(rng) * hp.signal_std / hp.lengthscale;
      extra(i) = p % 4 == 3 ? 0.01 * hp.signal_std * hp.signal_std * uniform(rng, 0, 1) : 0.0;
    }
    const VectorXd ex = p % 4 == 3 ? extra : VectorXd();
    const VectorXd sl = mode == GPMode::NoisyInput ? slopes : VectorXd();
    const auto analytic = log_marginal_likelihood(mode, hp, x, y, sl, ex, true);

    const int dims = mode == GPMode::NoisyInput ? 4 : 3;
    for (int d = 0; d < dims; ++d) {
      const double h = 1e-5;
      auto shifted = [&](double delta) {
        auto q = hp;
        double* field[] = {&q.signal_std, &q.lengthscale, &q.noise_std, &q.input_noise_std};
        *field[d] *= std::exp(delta);
        return log_marginal_likelihood(mode, q, x, y, sl, ex, false).value;
      };
      const double fd = (shifted(h) - shifted(-h)) / (2 * h);
      const double scale = std::max(std::abs(fd), 1e-3 * std::max(1.0, std::abs(analytic.value)));
      const double rel = std::abs(analytic.gradient(d) - fd) / scale;
      res.worst = std::max(res.worst, rel);
      ++res.cases;
      if (rel > tolerance)
        fail(res, "point " + std::to_string(p) + " component " + std::to_string(d) + ": relative error " +
                      std::to_string(rel));
    }
  }
  return res;
}

CheckResult check_slope(std::uint64_t seed, int queries, double tolerance) {
  CheckResult res;
  Rng rng = make_rng(seed, {0x736c});
  StandardNormal normal;
  GPHyperParams<double> hp;
  hp.signal_std = 0.05;
  hp.lengthscale = 1.3;
  hp.noise_std = 0.005;
  const Eigen::Index n = 60;
  const VectorXd x = uniform_vector(n, 0, 20, rng);
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = 0.04 * std::sin(x(i)) + 0.005 * normal(rng);
  const auto gp = GPModel<double>::condition(GPMode::Standard, hp, x, y);
  const VectorXd q = uniform_vector(queries, 0, 20, rng);
  const VectorXd slope = posterior_mean_slope(gp, q);
  const double h = 1e-5 * hp.lengthscale;
  const VectorXd up = (q.array() + h).matrix(), down = (q.array() - h).matrix();
  const VectorXd fd = (predict(gp, up).mean - predict(gp, down).mean) / (2 * h);
  const double floor = 1e-3 * fd.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < queries; ++i) {
    const double rel = std::abs(slope(i) - fd(i)) / std::max(std::abs(fd(i)), floor);
    res.worst = std::max(res.worst, rel);
    ++res.cases;
    if (rel > tolerance) fail(res, "query " + std::to_string(i) + ": relative error " + std::to_string(rel));
  }
  return res;
}

CheckResult check_filter_covariance(std::uint64_t seed, int steps) {
  CheckResult res;
  Rng rng = make_rng(seed, {0x6366});
  const Eigen::Index per_run = 100;
  for (int run = 0; res.cases < steps; ++run) {
    const int n = 2 + int(uniform(rng, 0, 4));
    const int r = 1 + int(uniform(rng, 0, n));
    auto sys = random_system(rng, n, std::min(r, n), uniform(rng, 0.5, 1.05));
    // Mix badly scaled noise levels into the draws.
    sys.model.measurement_noise *= std::pow(10.0, uniform(rng, -6, 1));
    sys.model.process_noise *= std::pow(10.0, uniform(rng, -6, 1));
    const auto sim = simulate(sys, per_run, rng);
    const auto out = kf_run<double>(sys.model, sim.measurements, std::nullopt, VectorXd(), sys.init);
    for (const auto& s : out) {
      for (const MatrixXd* p : {&s.predicted_covariance, &s.covariance}) {
        const double scale = std::max(1.0, p->cwiseAbs().maxCoeff());
        const double asym = (*p - p->transpose()).cwiseAbs().maxCoeff();
        const double min_eig =
            Eigen::SelfAdjointEigenSolver<MatrixXd>(*p, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
        res.worst = std::max({res.worst, asym, -min_eig / scale});
        if (asym > 1e-10) fail(res, "run " + std::to_string(run) + ": asymmetric covariance");
        if (min_eig < -1e-10 * scale) fail(res, "run " + std::to_string(run) + ": negative eigenvalue");
      }
      if (++res.cases >= steps) break;
    }
  }
  return res;
}

std::string serialize(const CollaborativeResult& r) {
  std::ostringstream os;
  write_metrics_csv(os, {r.metrics}, true);
  for (const auto& t : r.traces) write_trace_csv(os, t);
  if (r.cloud) os << to_json(*r.cloud);
  return os.str();
}

CheckResult check_pipeline_determinism(std::uint64_t seed, int vehicles) {
  CheckResult res;
  const Scenario sc = table1_scenario(vehicles, seed);
  for (Scheme s : all_schemes()) {
    const std::string a = serialize(run_scheme(sc, s));
    const std::string b = serialize(run_scheme(sc, s));
    ++res.cases;
    if (a != b) fail(res, scheme_name(s) + ": repeated run differs");
  }
  return res;
}

}  // namespace crowdroad::testing
