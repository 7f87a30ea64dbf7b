#include "crowdroad/road_gen.hpp"

#include "crowdroad/csv.hpp"
#include "crowdroad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace crowdroad {

namespace {
constexpr std::uint64_t kMeasurementStream = 0x6d65617375726521ULL;
constexpr std::uint64_t kSnrStream = 0x736e722d64726177ULL;
}  // namespace

void RoadProfile::validate() const {
  if (positions.size() < 2) throw InvalidArgument("road profile needs at least 2 samples");
  if (elevations.size() != positions.size()) throw InvalidArgument("road profile: length mismatch");
  const double h = positions(1) - positions(0);
  if (!(h > 0)) throw InvalidArgument("road profile positions must be strictly increasing");
  for (Eigen::Index i = 1; i < positions.size(); ++i) {
    const double d = positions(i) - positions(i - 1);
    if (std::abs(d - h) > 1e-12 * std::max(1.0, std::abs(positions(i))))
      throw InvalidArgument("road profile positions are not uniformly spaced");
  }
}

VectorXd RoadProfile::sample(const VectorXd& query) const {
  const double h = positions(1) - positions(0);
  const Eigen::Index last = positions.size() - 1;
  VectorXd out(query.size());
  for (Eigen::Index i = 0; i < query.size(); ++i) {
    const double u = (query(i) - positions(0)) / h;
    if (u < -1e-9 || u > double(last) + 1e-9)
      throw InvalidArgument("road profile: query position outside the segment");
    const auto j = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(u)), 0, last - 1);
    const double t = std::clamp(u - double(j), 0.0, 1.0);
    out(i) = (1 - t) * elevations(j) + t * elevations(j + 1);
  }
  return out;
}

RoadProfile generate_profile(const RoadModelParams<double>& road, double speed, double sample_time,
                             Eigen::Index n_steps, std::uint64_t seed) {
  if (n_steps < 2) throw InvalidArgument("generate_profile: n_steps must be >= 2");
  if (!(speed > 0)) throw InvalidArgument("generate_profile: speed must be > 0");
  const auto [ad, bd] = discrete_road(road, sample_time);

  RoadProfile p;
  p.seed = seed;
  p.road = road;
  p.speed = speed;
  p.sample_time = sample_time;
  p.positions.resize(n_steps);
  p.elevations.resize(n_steps);
  Rng rng = make_rng(seed);
  StandardNormal normal;
  double w = 0;
  for (Eigen::Index k = 0; k < n_steps; ++k) {
    p.positions(k) = double(k) * speed * sample_time;
    p.elevations(k) = w;
    w = ad * w + bd * normal(rng);
  }
  return p;
}

void SensingConfig::validate() const {
  if (!(snr_low > 0) || !(snr_high >= snr_low) || !std::isfinite(snr_high))
    throw InvalidArgument("sensing: require 0 < snr_low <= snr_high");
  if (!(gps_noise_std >= 0) || !std::isfinite(gps_noise_std))
    throw InvalidArgument("sensing: gps_noise_std must be >= 0");
}

NoisyMeasurements corrupt_measurements(const MatrixXd& clean, const SensingConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (clean.rows() < 2 || clean.cols() < 1) throw InvalidArgument("corrupt_measurements: need >= 2 samples");
  if (!all_finite(clean)) throw InvalidArgument("corrupt_measurements: non-finite clean output");
  const Eigen::Index r = clean.cols(), t = clean.rows();

  NoisyMeasurements out;
  out.values = clean;
  out.noise_variance.resize(r);
  out.target_snr.resize(r);
  out.realized_snr.resize(r);

  Rng snr_rng = make_rng(seed, {kSnrStream});
  Rng noise_rng = make_rng(seed, {kMeasurementStream});
  StandardNormal normal;
  for (Eigen::Index c = 0; c < r; ++c) {
    const auto col = clean.col(c);
    const double var = (col.array() - col.mean()).square().mean();
    if (!(var > 0)) throw InvalidArgument("corrupt_measurements: channel " + std::to_string(c) +
                                          " has zero variance, SNR undefined");
    const double snr = uniform(snr_rng, cfg.snr_low, cfg.snr_high);
    const double noise_var = var / snr;
    const double sd = std::sqrt(noise_var);
    double acc = 0, acc2 = 0;
    for (Eigen::Index k = 0; k < t; ++k) {
      const double e = sd * normal(noise_rng);
      out.values(k, c) += e;
      acc += e;
      acc2 += e * e;
    }
    const double mean_e = acc / double(t);
    const double emp = acc2 / double(t) - mean_e * mean_e;
    out.target_snr(c) = snr;
    out.noise_variance(c) = noise_var;
    out.realized_snr(c) = emp > 0 ? var / emp : std::numeric_limits<double>::infinity();
  }
  return out;
}

VectorXd corrupt_positions(const VectorXd& true_positions, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0)) throw InvalidArgument("corrupt_positions: sigma must be >= 0");
  VectorXd out = true_positions;
  if (sigma == 0) return out;
  Rng rng = make_rng(seed);
  StandardNormal normal;
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += sigma * normal(rng);
  return out;
}

void write_profile_csv(std::ostream& os, const RoadProfile& profile) {
  os << "# seed=" << profile.seed << " pole=" << csv::format(profile.road.pole)
     << " gain=" << csv::format(profile.road.gain) << " speed_mps=" << csv::format(profile.speed)
     << " sample_time_s=" << csv::format(profile.sample_time) << '\n';
  csv::write_row(os, {"s_m", "w_m"});
  for (Eigen::Index i = 0; i < profile.size(); ++i)
    csv::write_row(os, {csv::format(profile.positions(i)), csv::format(profile.elevations(i))});
}

}  // namespace crowdroad
