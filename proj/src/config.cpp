#include "crowdroad/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace crowdroad {

using json = nlohmann::json;

ConfigError::ConfigError(std::string key, int line, const std::string& message)
    : std::runtime_error(message), key_(std::move(key)), line_(line) {}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

/// Best-effort line lookup: the n-th occurrence of the quoted leaf key,
/// where n is the last array index in the path.
int locate(std::string_view text, const std::string& path) {
  if (path.empty()) return 0;
  std::string leaf = path;
  std::size_t nth = 0;
  const auto dot = leaf.find_last_of('.');
  if (dot != std::string::npos) leaf = leaf.substr(dot + 1);
  const auto lb = path.find_last_of('[');
  if (lb != std::string::npos) nth = std::stoul(path.substr(lb + 1));
  if (const auto b = leaf.find('['); b != std::string::npos) leaf = leaf.substr(0, b);
  const std::string needle = "\"" + leaf + "\"";
  std::size_t pos = 0;
  for (std::size_t i = 0;; ++i) {
    pos = text.find(needle, pos);
    if (pos == std::string_view::npos) return 0;
    if (i == nth) break;
    ++pos;
  }
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Reader {
 public:
  Reader(const json& j, std::string path, std::string_view text, std::string_view source)
      : j_(j), path_(std::move(path)), text_(text), source_(source) {
    if (!j_.is_object()) fail(path_, "must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) fail(join(k), "unknown key");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const int line = locate(text_, key);
    std::ostringstream os;
    os << source_;
    if (line > 0) os << ':' << line;
    os << ": " << (key.empty() ? "<root>" : key) << ": " << msg;
    throw ConfigError(key, line, os.str());
  }

  std::string join(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return j_.contains(k); }
  const json* find(const std::string& k) {
    used_.insert(k);
    return j_.contains(k) ? &j_.at(k) : nullptr;
  }

  double number(const std::string& k, double def) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_number()) fail(join(k), "must be a number");
    return v->get<double>();
  }
  double positive(const std::string& k, double def) {
    const double v = number(k, def);
    if (!(v > 0) || !std::isfinite(v)) fail(join(k), "must be > 0");
    return v;
  }
  double non_negative(const std::string& k, double def) {
    const double v = number(k, def);
    if (!(v >= 0) || !std::isfinite(v)) fail(join(k), "must be >= 0");
    return v;
  }
  long long integer(const std::string& k, long long def, long long lo) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_number_integer()) fail(join(k), "must be an integer");
    const auto x = v->get<long long>();
    if (x < lo) fail(join(k), "must be >= " + std::to_string(lo));
    return x;
  }
  bool boolean(const std::string& k, bool def) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_boolean()) fail(join(k), "must be true or false");
    return v->get<bool>();
  }
  std::string string(const std::string& k, const std::string& def) {
    const json* v = find(k);
    if (!v) return def;
    if (!v->is_string()) fail(join(k), "must be a string");
    return v->get<std::string>();
  }
  /// Stiffness under either unit suffix, returned in N/m.
  double stiffness(const std::string& stem, std::optional<double> def, bool allow_zero) {
    const bool n = has(stem + "_N_per_m"), kn = has(stem + "_kN_per_m");
    if (n && kn) fail(join(stem + "_kN_per_m"), "given together with " + stem + "_N_per_m");
    if (!n && !kn) {
      used_.insert(stem + "_N_per_m");
      used_.insert(stem + "_kN_per_m");
      if (!def) fail(join(stem + "_kN_per_m"), "is required");
      return *def;
    }
    const std::string key = n ? stem + "_N_per_m" : stem + "_kN_per_m";
    const double v = allow_zero ? non_negative(key, 0) : positive(key, 0);
    return kn ? v * 1e3 : v;
  }

  const json& raw() const { return j_; }
  const std::string& path() const { return path_; }
  std::string_view text() const { return text_; }
  std::string_view source() const { return source_; }

 private:
  const json& j_;
  std::string path_;
  std::string_view text_, source_;
  std::set<std::string> used_;
};

QuarterCarParams<double> read_vehicle(Reader& r) {
  QuarterCarParams<double> p;
  p.sprung_mass = r.positive("sprung_mass_kg", 0);
  p.unsprung_mass = r.positive("unsprung_mass_kg", 0);
  p.spring_stiffness = r.stiffness("spring_stiffness", std::nullopt, true);
  p.tire_stiffness = r.stiffness("tire_stiffness", std::nullopt, false);
  p.suspension_damping = r.non_negative("suspension_damping_Ns_per_m", 0);
  p.tire_damping = r.non_negative("tire_damping_Ns_per_m", 0);
  return p;
}

std::vector<QuarterCarParams<double>> read_fleet(Reader& root, const json* f) {
  const std::string path = root.join("fleet");
  if (!f) return table1_fleet(10);
  if (f->is_array()) {
    if (f->empty()) root.fail(path, "must not be empty");
    std::vector<QuarterCarParams<double>> out;
    for (std::size_t i = 0; i < f->size(); ++i) {
      Reader v((*f)[i], path + "[" + std::to_string(i) + "]", root.text(), root.source());
      out.push_back(read_vehicle(v));
    }
    return out;
  }
  Reader r(*f, path, root.text(), root.source());
  const std::string preset = r.string("preset", "table1");
  const auto count = static_cast<int>(r.integer("count", 10, 1));
  if (preset == "table1") return table1_fleet(count);
  if (preset == "table2") return table2_fleet(count);
  r.fail(r.join("preset"), "must be \"table1\" or \"table2\"");
}

}  // namespace

Scenario ExperimentConfig::scenario_for(int j, std::uint64_t offset) const {
  Scenario s = scenario;
  s.seeds = SeedBundle::from_base(seed_for(j, offset));
  s.fit.seed = s.seeds.optimizer;
  return s;
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // byte offset -> line
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
    throw ConfigError("", line, std::string(source) + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }

  ExperimentConfig cfg;
  Scenario& sc = cfg.scenario;
  sc = table1_scenario(10, 1);
  {
    Reader root(doc, "", text, source);
    sc.fleet = read_fleet(root, root.find("fleet"));

    if (const json* rj = root.find("road")) {
      Reader r(*rj, "road", text, source);
      const bool rough = r.has("roughness") || r.has("cutoff_rad_per_s");
      const double pole = r.number("pole_per_s", sc.road.pole);
      const double gain = r.non_negative("gain", sc.road.gain);
      if (rough) {
        const double g = r.non_negative("roughness", 0);
        const double v = r.positive("roughness_speed_mps", sc.nominal_speed);
        const double w0 = r.positive("cutoff_rad_per_s", 1);
        sc.road = RoadModelParams<double>::from_roughness(g, v, w0);
        if (r.has("pole_per_s") || r.has("gain")) {
          RoadModelParams<double> check = sc.road;
          check.pole = pole;
          check.gain = gain;
          try {
            check.validate();
          } catch (const InvalidArgument& e) {
            r.fail(r.join("gain"), e.what());
          }
        }
      } else {
        if (!(pole < 0)) r.fail(r.join("pole_per_s"), "must be < 0");
        sc.road.pole = pole;
        sc.road.gain = gain;
      }
    }

    sc.nominal_speed = root.positive("nominal_speed_mps", sc.nominal_speed);
    if (const json* sp = root.find("speeds_mps")) {
      if (!sp->is_array()) root.fail("speeds_mps", "must be an array");
      sc.speeds.clear();
      for (std::size_t i = 0; i < sp->size(); ++i) {
        const auto& v = (*sp)[i];
        if (!v.is_number() || !(v.get<double>() > 0))
          root.fail("speeds_mps[" + std::to_string(i) + "]", "must be a number > 0");
        sc.speeds.push_back(v.get<double>());
      }
      if (!sc.speeds.empty() && sc.speeds.size() != sc.fleet.size())
        root.fail("speeds_mps", "must have one entry per vehicle");
    }
    sc.sample_time = root.positive("sample_time_s", sc.sample_time);
    sc.n_steps = static_cast<Eigen::Index>(root.integer("n_steps", sc.n_steps, 2));
    sc.smoothing_lag = static_cast<std::size_t>(root.integer("smoothing_lag", long(sc.smoothing_lag), 0));
    if (sc.smoothing_lag > static_cast<std::size_t>(sc.n_steps)) root.fail("smoothing_lag", "must be <= n_steps");

    if (const json* sj = root.find("sensing")) {
      Reader r(*sj, "sensing", text, source);
      sc.sensing.snr_low = r.positive("snr_low", sc.sensing.snr_low);
      sc.sensing.snr_high = r.positive("snr_high", sc.sensing.snr_high);
      if (sc.sensing.snr_high < sc.sensing.snr_low) r.fail("sensing.snr_high", "must be >= snr_low");
      sc.sensing.gps_noise_std = r.non_negative("gps_noise_std_m", sc.sensing.gps_noise_std);
    }

    if (const json* mj = root.find("model")) {
      Reader r(*mj, "model", text, source);
      const std::string method = r.string("discretization", "zoh");
      try {
        sc.augment.method = parse_discretization(method);
      } catch (const InvalidArgument&) {
        r.fail("model.discretization", "must be \"zoh\" or \"euler\"");
      }
      sc.augment.physical_process_noise = r.non_negative("physical_process_noise", sc.augment.physical_process_noise);
      sc.truth_process_noise = r.non_negative("truth_process_noise", sc.truth_process_noise);
      sc.noise_miscalibration = r.positive("noise_miscalibration", sc.noise_miscalibration);
      sc.shared_road = r.boolean("shared_road", sc.shared_road);
    }

    if (const json* gj = root.find("regression")) {
      Reader r(*gj, "regression", text, source);
      const std::string mode = r.string("mode", std::string(to_string(sc.regression_mode)));
      try {
        sc.regression_mode = parse_gp_mode(mode);
      } catch (const InvalidArgument&) {
        r.fail("regression.mode", "must be \"standard\" or \"noisy-input\"");
      }
      sc.fit.restarts = static_cast<int>(r.integer("restarts", sc.fit.restarts, 1));
      sc.refit_restarts = static_cast<int>(r.integer("refit_restarts", sc.refit_restarts, 1));
      sc.fit.max_iterations = static_cast<int>(r.integer("max_iterations", sc.fit.max_iterations, 1));
      sc.fit.gradient_tolerance = r.positive("gradient_tolerance", sc.fit.gradient_tolerance);
      sc.fit.function_tolerance = r.non_negative("function_tolerance", sc.fit.function_tolerance);
      sc.fit.nigp_iterations = static_cast<int>(r.integer("nigp_iterations", sc.fit.nigp_iterations, 0));
      sc.heteroscedastic = r.boolean("heteroscedastic", sc.heteroscedastic);
      sc.channel_input_noise = r.boolean("channel_input_noise", sc.channel_input_noise);
      sc.initial_input_noise_std = r.positive("initial_input_noise_std_m", sc.initial_input_noise_std);
    }

    if (const json* sj = root.find("schemes")) {
      if (!sj->is_array() || sj->empty()) root.fail("schemes", "must be a non-empty array");
      cfg.schemes.clear();
      for (std::size_t i = 0; i < sj->size(); ++i) {
        const auto& v = (*sj)[i];
        try {
          if (!v.is_string()) throw InvalidArgument("not a string");
          cfg.schemes.push_back(parse_scheme(v.get<std::string>()));
        } catch (const InvalidArgument&) {
          root.fail("schemes[" + std::to_string(i) + "]",
                    "must be one of kf-only, kf-chain, nigp-psm, gp-psm, averaged-kf");
        }
      }
    }
    cfg.seeds = static_cast<int>(root.integer("seeds", cfg.seeds, 1));
    cfg.base_seed = static_cast<std::uint64_t>(root.integer("base_seed", 1, 0));
    cfg.workers = static_cast<int>(root.integer("workers", 0, 0));
    cfg.output_dir = root.string("output_dir", cfg.output_dir);

    if (const json* ej = root.find("emit")) {
      Reader r(*ej, "emit", text, source);
      cfg.emit.traces = r.boolean("traces", true);
      cfg.emit.gp_snapshots = r.boolean("gp_snapshots", true);
      cfg.emit.metrics = r.boolean("metrics", true);
    }
  }

  try {
    sc.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("", 0, std::string(source) + ": " + e.what());
  }
  cfg.hash = fnv1a_hex(doc.dump());
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", 0, path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace crowdroad
