#pragma once

// Ground-truth road synthesis and the sensing environment (measurement noise
// at a target SNR, GPS position noise).

#include "crowdroad/types.hpp"
#include "crowdroad/vehicle_model.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace crowdroad {

struct RoadProfile {
  VectorXd positions;   // s, m, uniform spacing V * T_s
  VectorXd elevations;  // w(s), m
  std::uint64_t seed = 0;
  RoadModelParams<double> road;
  double speed = 0;        // m/s used to map time steps onto distance
  double sample_time = 0;  // s

  Eigen::Index size() const { return positions.size(); }
  double spacing() const { return speed * sample_time; }
  void validate() const;

  /// Piecewise-linear elevation at arbitrary positions inside the segment.
  VectorXd sample(const VectorXd& query) const;
};

/// w(k+1) = a_d w(k) + b_d e(k), w(0) = 0, s(k) = k V T_s.
RoadProfile generate_profile(const RoadModelParams<double>& road, double speed, double sample_time,
                             Eigen::Index n_steps, std::uint64_t seed);

struct SensingConfig {
  double snr_low = 10;   // signal-to-noise variance ratio, not dB
  double snr_high = 20;
  double gps_noise_std = 0.2;  // m
  std::uint64_t seed = 0;

  void validate() const;
};

struct NoisyMeasurements {
  MatrixXd values;          // T x r
  VectorXd noise_variance;  // per channel, realized model for R
  VectorXd target_snr;      // drawn from the configured band
  VectorXd realized_snr;    // Var(clean) / empirical Var(noise)
};

/// Adds i.i.d. Gaussian noise with variance Var(channel) / SNR per column.
/// Rows of `clean` are time steps.
NoisyMeasurements corrupt_measurements(const MatrixXd& clean, const SensingConfig& cfg, std::uint64_t seed);

/// s_hat = s + N(0, sigma^2) per sample; no reordering.
VectorXd corrupt_positions(const VectorXd& true_positions, double sigma, std::uint64_t seed);

/// Two-column CSV (s_m, w_m) with a leading '#' comment carrying metadata.
void write_profile_csv(std::ostream& os, const RoadProfile& profile);

}  // namespace crowdroad
