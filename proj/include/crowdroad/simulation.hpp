#pragma once

// Scenario assembly and the end-to-end collaborative loop: heterogeneous
// fleet, shared ground truth, per-vehicle sensing, onboard estimation and
// cloud refits.

#include "crowdroad/cloud.hpp"
#include "crowdroad/estimation.hpp"
#include "crowdroad/evaluation.hpp"
#include "crowdroad/road_gen.hpp"
#include "crowdroad/vehicle_model.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace crowdroad {

struct SeedBundle {
  std::uint64_t road = 0;
  std::uint64_t measurement = 0;
  std::uint64_t gps = 0;
  std::uint64_t optimizer = 0;

  /// Independent named streams derived from one base seed.
  static SeedBundle from_base(std::uint64_t base);
};

struct Scenario {
  std::vector<QuarterCarParams<double>> fleet;
  RoadModelParams<double> road;
  std::vector<double> speeds;         // m/s per vehicle; empty = nominal speed for all
  double nominal_speed = 40.0 / 1.5;  // V0, m/s
  double sample_time = 0.01;          // s
  Eigen::Index n_steps = 151;
  SensingConfig sensing;
  std::size_t smoothing_lag = 25;
  GPMode regression_mode = GPMode::NoisyInput;
  SeedBundle seeds;

  AugmentOptions<double> augment;
  double truth_process_noise = 1e-8;  // variance per step on physical states of the simulated plant
  double noise_miscalibration = 1.0;  // R supplied to the filter = multiplier * realized noise variance
  bool shared_road = true;            // every vehicle drives the same realization
  GPFitOptions fit;
  bool heteroscedastic = false;
  double initial_input_noise_std = 0.1;
  int refit_restarts = 1;
  bool channel_input_noise = false;

  std::size_t vehicle_count() const { return fleet.size(); }
  double speed(std::size_t i) const { return speeds.empty() ? nominal_speed : speeds.at(i); }
  void validate() const;
};

/// Vehicle i (1-based): M_s = 300 (90 + i) / 100 kg, k_s = 16000 (90 + i) / 100 N/m,
/// M_us = 60 kg, k_t = 190000 N/m, c = 1000 N s/m.
std::vector<QuarterCarParams<double>> table1_fleet(int n);

/// Bench-scale suspension rig: M_s = 2.12 + 0.1 (i - 1) kg, identified rig parameters.
std::vector<QuarterCarParams<double>> table2_fleet(int n);

Scenario table1_scenario(int n_vehicles = 10, std::uint64_t base_seed = 1);
Scenario table2_scenario(int n_vehicles = 10, std::uint64_t base_seed = 1);

/// Ground truth for vehicle index i (0-based); with a shared road all
/// vehicles receive the same realization.
RoadProfile ground_truth(const Scenario& sc, std::size_t i = 0);

/// Everything vehicle i observes and the model its filter runs.
struct VehicleData {
  DiscreteAugmentedModel<double> model;
  FilterInit<double> init;
  MatrixXd measurements;     // T x r noisy outputs
  VectorXd true_positions;   // s(k)
  VectorXd positions;        // s_hat(k) (GPS)
  VectorXd true_road;        // w along the vehicle's path
  NoisyMeasurements noise;
};

VehicleData prepare_vehicle(const Scenario& sc, std::size_t i);

struct VehicleRun {
  std::vector<FilterStep<double>> steps;
  SmoothedSequence<double> smoothed;  // fixed-lag, L = scenario lag
  EstimateTrace<double> trace;
};

VehicleRun run_vehicle(const Scenario& sc, const VehicleData& data,
                       const std::optional<PseudoMeasurementChannel<double>>& channel);

enum class Scheme { KfOnly, KfChain, NigpPsm, GpPsm, AveragedKf };
std::string scheme_name(Scheme s);
Scheme parse_scheme(std::string_view s);
const std::vector<Scheme>& all_schemes();

struct CollaborativeResult {
  Scheme scheme = Scheme::NigpPsm;
  RoadProfile truth;
  std::vector<EstimateTrace<double>> traces;
  std::vector<std::shared_ptr<const GPModel<double>>> snapshots;  // GP after each upload
  RunMetrics metrics;
  std::optional<CloudState> cloud;  // final state for GP schemes
};

/// Collaborative loop: vehicle 1 filters without pseudo-measurements,
/// smooths and uploads; each later vehicle downloads the current GP,
/// filters with it, smooths and uploads. Regression mode from the scenario.
/// With `resume`, vehicles already present in the state are skipped.
CollaborativeResult run_collaborative(const Scenario& sc, std::optional<CloudState> resume = {});

/// Runs one scheme over the whole fleet with shared truth and noise streams.
CollaborativeResult run_scheme(const Scenario& sc, Scheme scheme);

/// Writes ground_truth.csv, vehicle_<i>_trace.csv, gp_after_<i>.json,
/// metrics.csv (and cloudstate.json for GP schemes) into `dir`.
struct EmitFlags {
  bool traces = true;
  bool gp_snapshots = true;
  bool metrics = true;
};
void write_result_directory(const std::string& dir, const CollaborativeResult& r, const EmitFlags& flags = {});

}  // namespace crowdroad
