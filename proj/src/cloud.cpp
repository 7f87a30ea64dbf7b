#include "crowdroad/cloud.hpp"

#include "json_convert.hpp"

#include <cmath>

namespace crowdroad {

std::size_t CloudDataset::total_points() const {
  std::size_t n = 0;
  for (const auto& c : contributions) n += static_cast<std::size_t>(c.positions.size());
  return n;
}

CloudState::TrainingSet CloudState::training_set() const {
  const auto n = static_cast<Eigen::Index>(dataset.total_points());
  TrainingSet t;
  t.inputs.resize(n);
  t.targets.resize(n);
  if (config.heteroscedastic) t.extra_noise.resize(n);
  Eigen::Index at = 0;
  for (const auto& c : dataset.contributions) {
    const Eigen::Index m = c.positions.size();
    t.inputs.segment(at, m) = c.positions;
    if (c.speed == config.nominal_speed) {
      t.targets.segment(at, m) = c.estimates;
    } else {
      t.targets.segment(at, m) = scale_profile_estimate(c.estimates, config.nominal_speed, c.speed);
    }
    if (config.heteroscedastic) t.extra_noise.segment(at, m) = c.variances * (config.nominal_speed / c.speed);
    at += m;
  }
  return t;
}

CloudState upload(const CloudState& state, Contribution c, std::string_view segment_id) {
  if (!segment_id.empty() && segment_id != state.dataset.segment_id)
    throw InvalidArgument("upload: segment id '" + std::string(segment_id) + "' does not match '" +
                          state.dataset.segment_id + "'");
  if (c.positions.size() != c.estimates.size() || c.positions.size() == 0)
    throw InvalidArgument("upload: positions and estimates must be non-empty and of equal length");
  if (state.config.heteroscedastic && c.variances.size() != c.positions.size())
    throw InvalidArgument("upload: heteroscedastic cloud needs one variance per estimate");
  if (!(c.speed > 0)) throw InvalidArgument("upload: speed must be > 0");
  for (const auto& prev : state.dataset.contributions)
    if (prev.vehicle_id == c.vehicle_id)
      throw InvalidArgument("upload: duplicate vehicle id " + std::to_string(c.vehicle_id));

  CloudState next = state;
  c.timestamp = next.dataset.contributions.size() + 1;
  next.dataset.contributions.push_back(std::move(c));
  const auto train = next.training_set();

  GPHyperParams<double> init;
  if (state.gp) {
    init = state.gp->hyperparams();
    if (!(init.input_noise_std > 0)) init.input_noise_std = state.config.initial_input_noise_std;
  } else {
    init = default_hyperparams(train.inputs, train.targets, state.config.initial_input_noise_std);
  }
  GPFitOptions opts = state.config.fit;
  opts.seed = state.config.fit.seed + next.dataset.contributions.size();
  if (state.gp) opts.restarts = state.config.refit_restarts;
  next.gp = std::make_shared<const GPModel<double>>(
      fit(train.inputs, train.targets, state.config.mode, init, opts, train.extra_noise));
  return next;
}

std::optional<PseudoMeasurementChannel<double>> download(const CloudState& state, double speed) {
  if (!(speed > 0)) throw InvalidArgument("download: speed must be > 0");
  if (!state.gp) return std::nullopt;
  auto gp = state.gp;
  const double ratio = speed / state.config.nominal_speed;
  const double factor = std::sqrt(ratio);
  PseudoMeasurementChannel<double> ch;
  ch.value = [gp, factor](const PseudoQuery<double>& q) {
    const auto& hp = gp->hyperparams();
    double mean = 0;
    for (Eigen::Index j = 0; j < gp->size(); ++j) mean += gp->weights()(j) * kernel(q.position, gp->inputs()(j), hp);
    return factor * mean;
  };
  const bool input_noise = state.config.channel_input_noise && gp->mode() == GPMode::NoisyInput;
  ch.variance = [gp, ratio, input_noise](const PseudoQuery<double>& q) {
    VectorXd s(1);
    s(0) = q.position;
    double var = predict(*gp, s).variance(0);
    if (input_noise) {
      const double slope = posterior_mean_slope(*gp, s)(0);
      const double ss = gp->hyperparams().input_noise_std;
      var += slope * slope * ss * ss;
    }
    return ratio * var;
  };
  return ch;
}

namespace {

using detail::json;

json contribution_to_json(const Contribution& c) {
  return json{{"vehicle_id", c.vehicle_id},
              {"speed", c.speed},
              {"timestamp", c.timestamp},
              {"positions", detail::vector_to_json(c.positions)},
              {"estimates", detail::vector_to_json(c.estimates)},
              {"variances", detail::vector_to_json(c.variances)}};
}

}  // namespace

std::string to_json(const CloudState& s) {
  json contributions = json::array();
  for (const auto& c : s.dataset.contributions) contributions.push_back(contribution_to_json(c));
  const auto& f = s.config.fit;
  json doc{{"version", "cloudstate/1"},
           {"segment_id", s.dataset.segment_id},
           {"config",
            {{"mode", std::string(to_string(s.config.mode))},
             {"nominal_speed", s.config.nominal_speed},
             {"heteroscedastic", s.config.heteroscedastic},
             {"initial_input_noise_std", s.config.initial_input_noise_std},
             {"restarts", f.restarts},
             {"refit_restarts", s.config.refit_restarts},
             {"channel_input_noise", s.config.channel_input_noise},
             {"max_iterations", f.max_iterations},
             {"gradient_tolerance", f.gradient_tolerance},
             {"function_tolerance", f.function_tolerance},
             {"nigp_iterations", f.nigp_iterations},
             {"seed", f.seed}}},
           {"contributions", contributions},
           {"gp", s.gp ? detail::gp_to_json_value(*s.gp) : json(nullptr)}};
  return doc.dump(2);
}

CloudState cloud_state_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("version").get<std::string>() != "cloudstate/1")
      throw InvalidArgument("unsupported cloud state version");
    CloudState s;
    s.dataset.segment_id = j.at("segment_id").get<std::string>();
    const auto& c = j.at("config");
    s.config.mode = parse_gp_mode(c.at("mode").get<std::string>());
    s.config.nominal_speed = c.at("nominal_speed").get<double>();
    s.config.heteroscedastic = c.at("heteroscedastic").get<bool>();
    s.config.initial_input_noise_std = c.at("initial_input_noise_std").get<double>();
    s.config.fit.restarts = c.at("restarts").get<int>();
    s.config.refit_restarts = c.at("refit_restarts").get<int>();
    s.config.channel_input_noise = c.at("channel_input_noise").get<bool>();
    s.config.fit.max_iterations = c.at("max_iterations").get<int>();
    s.config.fit.gradient_tolerance = c.at("gradient_tolerance").get<double>();
    s.config.fit.function_tolerance = c.at("function_tolerance").get<double>();
    s.config.fit.nigp_iterations = c.at("nigp_iterations").get<int>();
    s.config.fit.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& cj : j.at("contributions")) {
      Contribution k;
      k.vehicle_id = cj.at("vehicle_id").get<int>();
      k.speed = cj.at("speed").get<double>();
      k.timestamp = cj.at("timestamp").get<std::uint64_t>();
      k.positions = detail::vector_from_json(cj.at("positions"));
      k.estimates = detail::vector_from_json(cj.at("estimates"));
      k.variances = detail::vector_from_json(cj.at("variances"));
      s.dataset.contributions.push_back(std::move(k));
    }
    if (!j.at("gp").is_null())
      s.gp = std::make_shared<const GPModel<double>>(detail::gp_from_json_value(j.at("gp")));
    return s;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("cloud state document: ") + e.what());
  }
}

}  // namespace crowdroad
