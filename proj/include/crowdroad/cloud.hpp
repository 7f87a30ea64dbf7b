#pragma once

// In-process cloud: aggregates smoothed road estimates from successive
// vehicles, refits the (noisy-input) GP after every upload and serves the
// posterior back as a pseudo-measurement channel.

#include "crowdroad/estimation.hpp"
#include "crowdroad/gp.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace crowdroad {

struct Contribution {
  int vehicle_id = 0;
  VectorXd positions;  // s_hat, m
  VectorXd estimates;  // smoothed road estimate at the vehicle's speed, m
  VectorXd variances;  // smoothed variance, optional (heteroscedastic training)
  double speed = 0;    // m/s
  std::uint64_t timestamp = 0;  // logical upload counter, 1-based
};

struct CloudDataset {
  std::string segment_id = "segment-0";
  std::vector<Contribution> contributions;

  std::size_t total_points() const;
};

struct CloudConfig {
  GPMode mode = GPMode::NoisyInput;
  double nominal_speed = 40.0 / 1.5;  // V0, m/s
  GPFitOptions fit;
  bool heteroscedastic = false;
  double initial_input_noise_std = 0.1;  // sigma_s starting value, m
  int refit_restarts = 1;                // starts per refit once a model exists (warm start first)
  bool channel_input_noise = false;      // noisy-input mode: add slope^2 sigma_s^2 to the channel variance
};

struct CloudState {
  std::shared_ptr<const GPModel<double>> gp;  // absent before the first upload
  CloudDataset dataset;
  CloudConfig config;

  /// Training set in nominal-speed units: concatenated positions, targets
  /// scaled by sqrt(V0 / V) and, if enabled, variances scaled by V0 / V.
  struct TrainingSet {
    VectorXd inputs, targets, extra_noise;
  };
  TrainingSet training_set() const;
};

/// Appends the contribution and refits the GP over the full dataset, warm
/// started at the previous hyperparameters.
CloudState upload(const CloudState& state, Contribution contribution, std::string_view segment_id = {});

/// Channel returning sqrt(V / V0) * mean(s_hat) with variance (V / V0) * var(s_hat),
/// or nullopt while no GP exists.
std::optional<PseudoMeasurementChannel<double>> download(const CloudState& state, double speed);

/// JSON document "cloudstate/1" embedding the "gpmodel/1" document.
std::string to_json(const CloudState& state);
CloudState cloud_state_from_json(std::string_view text);

}  // namespace crowdroad
