#pragma once

#include "crowdroad/gp.hpp"

#include <json.hpp>

namespace crowdroad::detail {

using nlohmann::json;

inline json vector_to_json(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline VectorXd vector_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

json gp_to_json_value(const GPModel<double>& model);
GPModel<double> gp_from_json_value(const json& j);

}  // namespace crowdroad::detail
