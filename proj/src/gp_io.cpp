#include "json_convert.hpp"

namespace crowdroad {

namespace detail {

json gp_to_json_value(const GPModel<double>& m) {
  const auto& hp = m.hyperparams();
  const auto& d = m.diagnostics;
  return json{
      {"version", "gpmodel/1"},
      {"mode", std::string(to_string(m.mode()))},
      {"hyperparams",
       {{"signal_std", hp.signal_std},
        {"lengthscale", hp.lengthscale},
        {"noise_std", hp.noise_std},
        {"input_noise_std", hp.input_noise_std}}},
      {"jitter", m.jitter()},
      {"inputs", vector_to_json(m.inputs())},
      {"targets", vector_to_json(m.targets())},
      {"slopes", vector_to_json(m.slopes())},
      {"extra_noise", vector_to_json(m.extra_noise())},
      {"diagnostics",
       {{"log_marginal_likelihood", d.log_marginal_likelihood},
        {"iterations", d.iterations},
        {"evaluations", d.evaluations},
        {"restarts", d.restarts},
        {"nigp_iterations", d.nigp_iterations},
        {"converged", d.converged}}},
  };
}

GPModel<double> gp_from_json_value(const json& j) {
  try {
    if (j.at("version").get<std::string>() != "gpmodel/1")
      throw InvalidArgument("unsupported GP model version '" + j.at("version").get<std::string>() + "'");
    const GPMode mode = parse_gp_mode(j.at("mode").get<std::string>());
    const auto& h = j.at("hyperparams");
    GPHyperParams<double> hp{h.at("signal_std").get<double>(), h.at("lengthscale").get<double>(),
                             h.at("noise_std").get<double>(), h.at("input_noise_std").get<double>()};
    auto m = GPModel<double>::condition(mode, hp, vector_from_json(j.at("inputs")),
                                        vector_from_json(j.at("targets")), vector_from_json(j.at("slopes")),
                                        vector_from_json(j.at("extra_noise")), j.at("jitter").get<double>());
    const auto& d = j.at("diagnostics");
    m.diagnostics.log_marginal_likelihood = d.at("log_marginal_likelihood").get<double>();
    m.diagnostics.iterations = d.at("iterations").get<int>();
    m.diagnostics.evaluations = d.at("evaluations").get<int>();
    m.diagnostics.restarts = d.at("restarts").get<int>();
    m.diagnostics.nigp_iterations = d.at("nigp_iterations").get<int>();
    m.diagnostics.converged = d.at("converged").get<bool>();
    return m;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("GP model document: ") + e.what());
  }
}

}  // namespace detail

std::string to_json(const GPModel<double>& model) { return detail::gp_to_json_value(model).dump(2); }

GPModel<double> gp_model_from_json(std::string_view text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::exception& e) {
    throw InvalidArgument(std::string("GP model document: ") + e.what());
  }
  return detail::gp_from_json_value(j);
}

}  // namespace crowdroad
