#include "crowdroad/evaluation.hpp"

#include "crowdroad/csv.hpp"
#include "crowdroad/simulation.hpp"

#include "crowdroad/rng.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

namespace crowdroad {

void write_metrics_csv(std::ostream& os, const std::vector<RunMetrics>& runs, bool with_seed) {
  std::vector<std::string> head{"scheme", "vehicle_index", "rmse_filtered_m", "rmse_smoothed_m", "cloud_rmse_m",
                                "mean_posterior_std_m"};
  if (with_seed) head.insert(head.begin(), "seed");
  csv::write_row(os, head);
  for (const auto& r : runs)
    for (const auto& v : r.vehicles) {
      std::vector<std::string> row{r.scheme, std::to_string(v.vehicle), csv::format(v.rmse_filtered),
                                   csv::format(v.rmse_smoothed), csv::format(v.cloud_rmse),
                                   csv::format(v.mean_posterior_std)};
      if (with_seed) row.insert(row.begin(), std::to_string(r.seed));
      csv::write_row(os, row);
    }
}

SensorComparisonSystem random_sensor_comparison_system(std::uint64_t seed, int index) {
  Rng rng = make_rng(seed, {0x70726f70ULL, static_cast<std::uint64_t>(index)});
  StandardNormal normal;
  SensorComparisonSystem sys;
  const int n = 2 + static_cast<int>(rng() % 4);  // 2..5 states, the last is the road
  sys.transition.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) sys.transition(i, j) = normal(rng);
  const double radius = sys.transition.eigenvalues().cwiseAbs().maxCoeff();
  sys.transition *= uniform(rng, 0.5, 1.1) / std::max(radius, 1e-12);

  // r distinct physical states observed, 1 <= r <= n - 1
  std::vector<int> idx(n - 1);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 2; i > 0; --i) std::swap(idx[i], idx[rng() % (i + 1)]);
  const int r = 1 + static_cast<int>(rng() % (n - 1));
  sys.sensors = MatrixXd::Zero(r, n);
  for (int i = 0; i < r; ++i) sys.sensors(i, idx[i]) = 1;
  sys.process_std = uniform(rng, 0.1, 2.0);
  sys.measurement_std = uniform(rng, 0.1, 2.0);
  return sys;
}

MatrixXd with_road_row(const MatrixXd& sensors) {
  MatrixXd out(sensors.rows() + 1, sensors.cols());
  out.topRows(sensors.rows()) = sensors;
  out.bottomRows(1).setZero();
  out(sensors.rows(), sensors.cols() - 1) = 1;
  return out;
}

SensorComparisonReport compare_sensor_sets(int n_systems, int horizon, std::uint64_t seed, double tolerance) {
  if (n_systems < 1) throw InvalidArgument("number of systems must be >= 1");
  if (horizon < 0) throw InvalidArgument("horizon must be >= 0");
  SensorComparisonReport rep;
  rep.systems = n_systems;
  for (int s = 0; s < n_systems; ++s) {
    const auto sys = random_sensor_comparison_system(seed, s);
    const MatrixXd more = with_road_row(sys.sensors);
    std::vector<SensorComparisonRow> rows;
    try {
      for (int q = 0; q <= horizon; ++q) {
        SensorComparisonRow row;
        row.system = s;
        row.query_step = q;
        row.mmse_r = mmse_oracle(sys.transition, sys.sensors, horizon, sys.process_std, sys.measurement_std, q);
        row.mmse_r1 = mmse_oracle(sys.transition, more, horizon, sys.process_std, sys.measurement_std, q);
        row.margin = (row.mmse_r - row.mmse_r1) / row.mmse_r;
        rows.push_back(row);
      }
    } catch (const NumericalError&) {
      ++rep.skipped;
      continue;
    }
    for (const auto& row : rows) {
      if (!(row.margin >= tolerance)) ++rep.violations;
      rep.min_margin = std::min(rep.min_margin, row.margin);
      rep.rows.push_back(row);
    }
  }
  return rep;
}

void write_sensor_comparison_csv(std::ostream& os, const SensorComparisonReport& report) {
  csv::write_row(os, {"system", "query_step", "mmse_r", "mmse_r_plus_1", "relative_margin"});
  for (const auto& r : report.rows)
    csv::write_row(os, {std::to_string(r.system), std::to_string(r.query_step), csv::format(r.mmse_r),
                        csv::format(r.mmse_r1), csv::format(r.margin)});
}

std::vector<RunMetrics> run_baselines(const Scenario& scenario) {
  std::vector<RunMetrics> out;
  for (Scheme s : all_schemes()) out.push_back(run_scheme(scenario, s).metrics);
  return out;
}

}  // namespace crowdroad
