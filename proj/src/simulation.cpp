#include "crowdroad/simulation.hpp"

#include "crowdroad/csv.hpp"
#include "crowdroad/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace crowdroad {

namespace {

enum Stream : std::uint64_t { kRoad = 1, kMeasurement = 2, kGps = 3, kOptimizer = 4, kPlant = 5 };

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  Rng r = make_rng(seed, {a, b});
  return r();
}

template <typename F>
auto with_vehicle_context(std::size_t i, F&& f) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError("vehicle " + std::to_string(i + 1) + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument("vehicle " + std::to_string(i + 1) + ": " + e.what());
  }
}

double road_stationary_variance(const Scenario& sc) {
  const auto [ad, bd] = discrete_road(sc.road, sc.sample_time);
  return bd * bd / (1.0 - ad * ad);
}

}  // namespace

SeedBundle SeedBundle::from_base(std::uint64_t base) {
  return {derive(base, kRoad), derive(base, kMeasurement), derive(base, kGps), derive(base, kOptimizer)};
}

void Scenario::validate() const {
  if (fleet.empty()) throw InvalidArgument("fleet must not be empty");
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    try {
      fleet[i].validate();
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("fleet[" + std::to_string(i) + "]." + e.what());
    }
  }
  road.validate();
  if (!speeds.empty() && speeds.size() != fleet.size())
    throw InvalidArgument("speeds must be empty or have one entry per vehicle");
  for (double v : speeds)
    if (!(v > 0)) throw InvalidArgument("speeds must be > 0");
  if (!(nominal_speed > 0)) throw InvalidArgument("nominal_speed must be > 0");
  if (!(sample_time > 0)) throw InvalidArgument("sample_time must be > 0");
  if (n_steps < 2) throw InvalidArgument("n_steps must be >= 2");
  sensing.validate();
  if (smoothing_lag > static_cast<std::size_t>(n_steps)) throw InvalidArgument("smoothing_lag exceeds n_steps");
  if (!(truth_process_noise >= 0)) throw InvalidArgument("truth_process_noise must be >= 0");
  if (!(noise_miscalibration > 0)) throw InvalidArgument("noise_miscalibration must be > 0");
  if (!(initial_input_noise_std > 0)) throw InvalidArgument("initial_input_noise_std must be > 0");
  if (fit.restarts < 1 || refit_restarts < 1 || fit.max_iterations < 1 || fit.nigp_iterations < 0)
    throw InvalidArgument("regression options out of range");
}

std::vector<QuarterCarParams<double>> table1_fleet(int n) {
  if (n < 1) throw InvalidArgument("fleet size must be >= 1");
  std::vector<QuarterCarParams<double>> fleet;
  for (int i = 1; i <= n; ++i) {
    const double f = (90.0 + i) / 100.0;
    fleet.push_back({300.0 * f, 60.0, 16.0e3 * f, 190.0e3, 1000.0, 0.0});
  }
  return fleet;
}

std::vector<QuarterCarParams<double>> table2_fleet(int n) {
  if (n < 1) throw InvalidArgument("fleet size must be >= 1");
  std::vector<QuarterCarParams<double>> fleet;
  for (int i = 1; i <= n; ++i) fleet.push_back({2.12 + 0.1 * (i - 1), 0.97, 999.99, 1163.6, 9.5, 7.0});
  return fleet;
}

Scenario table1_scenario(int n_vehicles, std::uint64_t base_seed) {
  Scenario sc;
  sc.fleet = table1_fleet(n_vehicles);
  sc.road.pole = -0.01;
  sc.road.gain = 0.0328;
  sc.nominal_speed = 40.0 / 1.5;
  sc.sample_time = 0.01;
  sc.n_steps = 151;
  sc.sensing = {10.0, 20.0, 0.2, 0};
  sc.smoothing_lag = 25;
  sc.regression_mode = GPMode::NoisyInput;
  sc.seeds = SeedBundle::from_base(base_seed);
  sc.fit.seed = sc.seeds.optimizer;
  return sc;
}

Scenario table2_scenario(int n_vehicles, std::uint64_t base_seed) {
  Scenario sc = table1_scenario(n_vehicles, base_seed);
  sc.fleet = table2_fleet(n_vehicles);
  sc.road.pole = -5.0;
  sc.road.gain = 0.0134;
  sc.sample_time = 0.03;
  sc.n_steps = 151;
  sc.nominal_speed = 40.0 / 4.5;
  return sc;
}

RoadProfile ground_truth(const Scenario& sc, std::size_t i) {
  double vmax = sc.nominal_speed;
  for (std::size_t j = 0; j < sc.vehicle_count(); ++j) vmax = std::max(vmax, sc.speed(j));
  const auto n = static_cast<Eigen::Index>(std::ceil(vmax / sc.nominal_speed * double(sc.n_steps - 1) - 1e-9)) + 1;
  const std::uint64_t seed = sc.shared_road ? sc.seeds.road : derive(sc.seeds.road, kRoad, i);
  return generate_profile(sc.road, sc.nominal_speed, sc.sample_time, n, seed);
}

VehicleData prepare_vehicle(const Scenario& sc, std::size_t i) {
  return with_vehicle_context(i, [&] {
    const auto cont = build_continuous_model(sc.fleet.at(i));
    VehicleData d;
    d.model = augment_and_discretize(cont, sc.road, sc.sample_time, sc.augment);

    const double v = sc.speed(i);
    const Eigen::Index t = sc.n_steps;
    const RoadProfile truth = ground_truth(sc, i);
    d.true_positions = VectorXd::LinSpaced(t, 0.0, double(t - 1)) * (v * sc.sample_time);
    d.true_road = v == sc.nominal_speed ? VectorXd(truth.elevations.head(t)) : truth.sample(d.true_positions);

    // Plant: physical states driven by the true road through the exact sampled
    // dynamics. The physical noise is drawn conditional on the realized road
    // innovation so the plant matches the joint discretized process.
    const Eigen::Index n = d.model.state_dim() - 1;
    AugmentOptions<double> exact = sc.augment;
    exact.physical_process_noise = 0.0;
    const auto joint = augment_and_discretize(cont, sc.road, sc.sample_time, exact);
    const MatrixXd a = joint.transition.topLeftCorner(n, n);
    const VectorXd b = joint.transition.topRightCorner(n, 1);
    const double ad = joint.transition(n, n);
    const double qww = joint.process_noise(n, n);
    const VectorXd gain = qww > 0 ? VectorXd(joint.process_noise.topRightCorner(n, 1) / qww) : VectorXd::Zero(n);
    MatrixXd cond = joint.process_noise.topLeftCorner(n, n) - gain * gain.transpose() * qww;
    cond.diagonal().array() += sc.truth_process_noise;
    symmetrize(cond);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cond);
    const MatrixXd root = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

    Rng plant = make_rng(sc.seeds.measurement, {kPlant, i});
    StandardNormal normal;
    MatrixXd clean(t, d.model.output_dim());
    VectorXd x = VectorXd::Zero(n), e(n);
    for (Eigen::Index k = 0; k < t; ++k) {
      clean.row(k) = (d.model.output.leftCols(n) * x).transpose();
      if (k + 1 == t) break;
      for (Eigen::Index j = 0; j < n; ++j) e(j) = normal(plant);
      x = a * x + b * d.true_road(k) + gain * (d.true_road(k + 1) - ad * d.true_road(k)) + root * e;
    }
    d.noise = corrupt_measurements(clean, sc.sensing, derive(sc.seeds.measurement, kMeasurement, i));
    d.measurements = d.noise.values;
    d.model.measurement_noise = (d.noise.noise_variance * sc.noise_miscalibration).asDiagonal();
    d.model.validate();
    d.positions = corrupt_positions(d.true_positions, sc.sensing.gps_noise_std, derive(sc.seeds.gps, kGps, i));
    d.init = default_filter_init(d.model, road_stationary_variance(sc));
    return d;
  });
}

VehicleRun run_vehicle(const Scenario& sc, const VehicleData& data,
                       const std::optional<PseudoMeasurementChannel<double>>& channel) {
  VehicleRun r;
  r.steps = kf_run(data.model, data.measurements, channel, data.positions, data.init);
  r.smoothed = fixed_lag_smooth(data.model, r.steps, sc.smoothing_lag);
  r.trace = make_trace(r.steps, r.smoothed, data.positions);
  return r;
}

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::KfOnly: return "kf-only";
    case Scheme::KfChain: return "kf-chain";
    case Scheme::NigpPsm: return "nigp-psm";
    case Scheme::GpPsm: return "gp-psm";
    case Scheme::AveragedKf: return "averaged-kf";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view s) {
  for (Scheme k : all_schemes())
    if (scheme_name(k) == s) return k;
  throw InvalidArgument("unknown scheme '" + std::string(s) + "'");
}

const std::vector<Scheme>& all_schemes() {
  static const std::vector<Scheme> v{Scheme::KfOnly, Scheme::KfChain, Scheme::NigpPsm, Scheme::GpPsm,
                                     Scheme::AveragedKf};
  return v;
}

namespace {

VehicleMetrics vehicle_metrics(std::size_t i, const EstimateTrace<double>& trace, const VectorXd& truth) {
  VehicleMetrics m;
  m.vehicle = static_cast<int>(i + 1);
  m.rmse_filtered = rmse(trace.filtered, truth);
  m.rmse_smoothed = rmse(trace.smoothed, truth);
  return m;
}

/// Cloud GP against the truth on the nominal-speed grid of the segment.
void cloud_metrics(const GPModel<double>& gp, const RoadProfile& truth, Eigen::Index n, VehicleMetrics& m) {
  const VectorXd s = truth.positions.head(n);
  const auto p = predict(gp, s);
  m.cloud_rmse = rmse(p.mean, truth.elevations.head(n));
  m.mean_posterior_std = p.variance.cwiseSqrt().mean();
}

}  // namespace

CollaborativeResult run_collaborative(const Scenario& sc, std::optional<CloudState> resume) {
  sc.validate();
  CollaborativeResult res;
  res.scheme = sc.regression_mode == GPMode::NoisyInput ? Scheme::NigpPsm : Scheme::GpPsm;
  res.truth = ground_truth(sc, 0);
  res.metrics.scheme = scheme_name(res.scheme);
  res.metrics.seed = sc.seeds.road;

  CloudState state;
  if (resume) {
    state = std::move(*resume);
  } else {
    state.config.mode = sc.regression_mode;
    state.config.nominal_speed = sc.nominal_speed;
    state.config.fit = sc.fit;
    state.config.heteroscedastic = sc.heteroscedastic;
    state.config.initial_input_noise_std = sc.initial_input_noise_std;
    state.config.refit_restarts = sc.refit_restarts;
    state.config.channel_input_noise = sc.channel_input_noise;
  }
  for (std::size_t i = state.dataset.contributions.size(); i < sc.vehicle_count(); ++i) {
    const VehicleData data = prepare_vehicle(sc, i);
    with_vehicle_context(i, [&] {
      const auto channel = download(state, sc.speed(i));
      VehicleRun run = run_vehicle(sc, data, channel);
      Contribution c;
      c.vehicle_id = static_cast<int>(i + 1);
      c.positions = run.trace.positions;
      c.estimates = run.trace.smoothed;
      c.variances = run.trace.smoothed_variance;
      c.speed = sc.speed(i);
      state = upload(state, std::move(c));
      auto m = vehicle_metrics(i, run.trace, data.true_road);
      cloud_metrics(*state.gp, res.truth, sc.n_steps, m);
      res.metrics.vehicles.push_back(m);
      res.traces.push_back(std::move(run.trace));
      res.snapshots.push_back(state.gp);
      return 0;
    });
  }
  res.cloud = std::move(state);
  return res;
}

CollaborativeResult run_scheme(const Scenario& sc, Scheme scheme) {
  if (scheme == Scheme::NigpPsm || scheme == Scheme::GpPsm) {
    Scenario s = sc;
    s.regression_mode = scheme == Scheme::NigpPsm ? GPMode::NoisyInput : GPMode::Standard;
    return run_collaborative(s);
  }
  sc.validate();
  CollaborativeResult res;
  res.scheme = scheme;
  res.truth = ground_truth(sc, 0);
  res.metrics.scheme = scheme_name(scheme);
  res.metrics.seed = sc.seeds.road;
  const Eigen::Index t = sc.n_steps;
  VectorXd smoothed_sum = VectorXd::Zero(t);
  for (std::size_t i = 0; i < sc.vehicle_count(); ++i) {
    const VehicleData data = prepare_vehicle(sc, i);
    std::optional<PseudoMeasurementChannel<double>> channel;
    if (scheme == Scheme::KfChain && !res.traces.empty()) {
      // Previous vehicle's filtered road estimate, matched by time step.
      auto prev = std::make_shared<const EstimateTrace<double>>(res.traces.back());
      PseudoMeasurementChannel<double> ch;
      ch.value = [prev](const PseudoQuery<double>& q) { return prev->filtered(static_cast<Eigen::Index>(q.step)); };
      ch.variance = [prev](const PseudoQuery<double>& q) {
        return prev->filtered_variance(static_cast<Eigen::Index>(q.step));
      };
      channel = std::move(ch);
    }
    VehicleRun run = with_vehicle_context(i, [&] { return run_vehicle(sc, data, channel); });
    auto m = vehicle_metrics(i, run.trace, data.true_road);
    if (scheme == Scheme::AveragedKf) {
      smoothed_sum += run.trace.smoothed;
      m.cloud_rmse = rmse(smoothed_sum / double(i + 1), res.truth.elevations.head(t));
    }
    res.metrics.vehicles.push_back(m);
    res.traces.push_back(std::move(run.trace));
  }
  return res;
}

void write_result_directory(const std::string& dir, const CollaborativeResult& r, const EmitFlags& flags) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream os(fs::path(dir) / name);
    if (!os) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
    return os;
  };
  {
    auto os = open("ground_truth.csv");
    write_profile_csv(os, r.truth);
  }
  if (flags.traces)
    for (std::size_t i = 0; i < r.traces.size(); ++i) {
      auto os = open("vehicle_" + std::to_string(r.metrics.vehicles.at(i).vehicle) + "_trace.csv");
      write_trace_csv(os, r.traces[i]);
    }
  if (flags.gp_snapshots)
    for (std::size_t i = 0; i < r.snapshots.size(); ++i) {
      auto os = open("gp_after_" + std::to_string(r.metrics.vehicles.at(i).vehicle) + ".json");
      os << to_json(*r.snapshots[i]) << '\n';
    }
  if (flags.metrics) {
    auto os = open("metrics.csv");
    write_metrics_csv(os, {r.metrics});
  }
  if (r.cloud) {
    auto os = open("cloudstate.json");
    os << to_json(*r.cloud) << '\n';
  }
}

void write_trace_csv(std::ostream& os, const EstimateTrace<double>& t) {
  csv::write_row(os, {"k", "s_hat_m", "w_filt_m", "w_filt_var", "w_smooth_m", "w_smooth_var"});
  for (Eigen::Index k = 0; k < t.size(); ++k)
    csv::write_row(os, {std::to_string(k), csv::format(t.positions(k)), csv::format(t.filtered(k)),
                        csv::format(t.filtered_variance(k)), csv::format(t.smoothed(k)),
                        csv::format(t.smoothed_variance(k))});
}

}  // namespace crowdroad
