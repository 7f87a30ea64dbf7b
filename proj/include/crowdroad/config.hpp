#pragma once

#include "crowdroad/simulation.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace crowdroad {

/// Configuration error carrying the offending key path and, when it can be
/// located, the line in the source document.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, int line, const std::string& message);
  const std::string& key() const { return key_; }
  int line() const { return line_; }

 private:
  std::string key_;
  int line_;
};

struct ExperimentConfig {
  Scenario scenario;  // seeds are filled per run from base_seed
  std::vector<Scheme> schemes = all_schemes();
  int seeds = 20;
  std::uint64_t base_seed = 1;
  int workers = 0;  // 0 = available parallelism
  std::string output_dir = "out";
  EmitFlags emit;
  std::string hash;  // FNV-1a of the canonical document, hex

  /// Scenario for run j (0-based) with the seed bundle derived from
  /// base_seed + offset + j.
  Scenario scenario_for(int j, std::uint64_t offset = 0) const;
  std::uint64_t seed_for(int j, std::uint64_t offset = 0) const { return base_seed + offset + std::uint64_t(j); }
};

/// Parses and validates a JSON experiment document. Unknown keys are
/// rejected. Stiffness keys carry their unit: *_N_per_m or *_kN_per_m.
ExperimentConfig parse_config(std::string_view text, std::string_view source = "config");
ExperimentConfig load_config(const std::string& path);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace crowdroad
