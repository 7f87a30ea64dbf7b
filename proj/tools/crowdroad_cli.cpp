// crowdroad: run collaborative road-profile experiments and emit plot-ready data.

#include "crowdroad/cloud.hpp"
#include "crowdroad/config.hpp"
#include "crowdroad/csv.hpp"
#include "crowdroad/evaluation.hpp"
#include "crowdroad/gp.hpp"
#include "crowdroad/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace crowdroad;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3 };

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", 0, path + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

json seed_bundle_json(std::uint64_t base, const SeedBundle& s) {
  return {{"seed", base}, {"road", s.road}, {"measurement", s.measurement}, {"gps", s.gps}, {"optimizer", s.optimizer}};
}

int worker_count(int requested, std::size_t jobs) {
  int w = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, std::min<int>(w, static_cast<int>(jobs)));
}

struct SimulateArgs {
  std::string config;
  std::string out;
  int seeds = 0;
  std::vector<std::string> schemes;
  int workers = -1;
  std::uint64_t seed_offset = 0;
};

int cmd_simulate(const SimulateArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.seeds > 0) cfg.seeds = a.seeds;
  if (!a.schemes.empty()) {
    cfg.schemes.clear();
    for (const auto& s : a.schemes) cfg.schemes.push_back(parse_scheme(s));
  }
  if (a.workers >= 0) cfg.workers = a.workers;
  if (const char* env = std::getenv("CROWDROAD_OUT"); env && *env) cfg.output_dir = env;
  if (!a.out.empty()) cfg.output_dir = a.out;

  struct Job {
    int seed_index;
    Scheme scheme;
  };
  std::vector<Job> jobs;
  for (int j = 0; j < cfg.seeds; ++j)
    for (Scheme s : cfg.schemes) jobs.push_back({j, s});
  std::vector<RunMetrics> metrics(jobs.size());
  std::vector<double> seconds(jobs.size(), 0.0);

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  const std::string version = CROWDROAD_VERSION;

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mutex;
  std::string error;
  int error_code = kOk;
  auto worker = [&] {
    for (std::size_t i; !failed && (i = next++) < jobs.size();) {
      const auto& job = jobs[i];
      const std::uint64_t seed = cfg.seed_for(job.seed_index, a.seed_offset);
      const std::string where = "seed " + std::to_string(seed) + ", " + scheme_name(job.scheme) + ": ";
      try {
        const Scenario sc = cfg.scenario_for(job.seed_index, a.seed_offset);
        const auto t0 = std::chrono::steady_clock::now();
        auto res = run_scheme(sc, job.scheme);
        seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.metrics.seed = seed;
        const fs::path dir = out / ("seed_" + std::to_string(seed)) / scheme_name(job.scheme);
        write_result_directory(dir.string(), res, cfg.emit);
        json manifest{{"tool", "crowdroad"},
                      {"version", version},
                      {"config_hash", cfg.hash},
                      {"scheme", scheme_name(job.scheme)},
                      {"seeds", seed_bundle_json(seed, sc.seeds)}};
        write_file(dir / "manifest.json", manifest.dump(2) + "\n");
        metrics[i] = std::move(res.metrics);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!failed.exchange(true)) {
          error = where + e.what();
          error_code = dynamic_cast<const NumericalError*>(&e)           ? kNumerical
                       : dynamic_cast<const std::invalid_argument*>(&e) ? kConfig
                                                                         : kFailure;
        }
      }
    }
  };
  const int nw = worker_count(cfg.workers, jobs.size());
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::thread> pool;
  for (int w = 1; w < nw; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (failed) {
    std::cerr << "crowdroad: " << error << "\n";
    return error_code;
  }

  {
    std::ofstream os(out / "metrics.csv");
    write_metrics_csv(os, metrics, true);
  }

  // Per scheme and vehicle index: mean of each metric over seeds.
  json schemes = json::object();
  for (Scheme s : cfg.schemes) {
    const std::string name = scheme_name(s);
    std::map<int, std::array<double, 5>> acc;  // sums + count
    double secs = 0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].scheme != s) continue;
      secs += seconds[i];
      for (const auto& v : metrics[i].vehicles) {
        auto& a4 = acc[v.vehicle];
        a4[0] += v.rmse_filtered;
        a4[1] += v.rmse_smoothed;
        a4[2] += v.cloud_rmse;
        a4[3] += v.mean_posterior_std;
        a4[4] += 1;
      }
    }
    json rows = json::array();
    auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
    for (const auto& [veh, a4] : acc)
      rows.push_back({{"vehicle_index", veh},
                      {"rmse_filtered_m", num(a4[0] / a4[4])},
                      {"rmse_smoothed_m", num(a4[1] / a4[4])},
                      {"cloud_rmse_m", num(a4[2] / a4[4])},
                      {"mean_posterior_std_m", num(a4[3] / a4[4])}});
    schemes[name] = {{"mean_over_seeds", rows}, {"runtime_s", secs}};
  }
  json summary{{"seeds", cfg.seeds}, {"workers", nw}, {"wall_time_s", wall}, {"schemes", schemes}};
  write_file(out / "summary.json", summary.dump(2) + "\n");

  json seeds = json::array();
  for (int j = 0; j < cfg.seeds; ++j)
    seeds.push_back(seed_bundle_json(cfg.seed_for(j, a.seed_offset), cfg.scenario_for(j, a.seed_offset).seeds));
  json scheme_names = json::array();
  for (Scheme s : cfg.schemes) scheme_names.push_back(scheme_name(s));
  json manifest{{"tool", "crowdroad"},
                {"version", version},
                {"config_hash", cfg.hash},
                {"config", fs::path(a.config).filename().string()},
                {"seed_offset", a.seed_offset},
                {"schemes", scheme_names},
                {"seeds", seeds}};
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  fs::copy_file(a.config, out / "config.json", fs::copy_options::overwrite_existing);
  std::cerr << "crowdroad: " << jobs.size() << " runs in " << wall << " s -> " << out.string() << "\n";
  return kOk;
}

struct ResumeArgs {
  std::string config;
  std::string state;
  std::string out;
  int seed_index = 0;
  std::uint64_t seed_offset = 0;
};

int cmd_resume(const ResumeArgs& a) {
  const ExperimentConfig cfg = load_config(a.config);
  CloudState state = cloud_state_from_json(read_file(a.state));
  Scenario sc = cfg.scenario_for(a.seed_index, a.seed_offset);
  if (state.dataset.contributions.size() >= sc.vehicle_count()) {
    std::cerr << "crowdroad: cloud state already holds " << state.dataset.contributions.size()
              << " contributions; nothing to resume\n";
    return kConfig;
  }
  sc.regression_mode = state.config.mode;
  auto res = run_collaborative(sc, std::move(state));
  res.metrics.seed = cfg.seed_for(a.seed_index, a.seed_offset);
  const fs::path dir = a.out.empty() ? fs::path(cfg.output_dir) / "resume" : fs::path(a.out);
  write_result_directory(dir.string(), res, cfg.emit);
  json manifest{{"tool", "crowdroad"},
                {"version", CROWDROAD_VERSION},
                {"config_hash", cfg.hash},
                {"resumed_from", a.state},
                {"seeds", seed_bundle_json(res.metrics.seed, sc.seeds)}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  return kOk;
}

int cmd_prop1(int systems, int horizon, std::uint64_t seed, const std::string& out) {
  if (systems < 1) throw ConfigError("systems", 0, "--systems must be >= 1");
  const auto rep = compare_sensor_sets(systems, horizon, seed);
  if (out.empty()) {
    write_sensor_comparison_csv(std::cout, rep);
  } else {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write " + out);
    write_sensor_comparison_csv(os, rep);
  }
  std::cerr << "systems " << rep.systems << ", skipped (ill-conditioned) " << rep.skipped << ", violations "
            << rep.violations << ", min relative margin " << csv::format(rep.min_margin) << "\n";
  return rep.violations == 0 ? kOk : kFailure;
}

struct GpfitArgs {
  std::string data;
  std::string mode = "nigp";
  std::string out;
  int restarts = 5;
  std::uint64_t seed = 0;
};

int cmd_gpfit(const GpfitArgs& a) {
  std::ifstream in(a.data);
  if (!in) throw ConfigError("data", 0, a.data + ": cannot open");
  const auto table = csv::read_numeric(in);
  auto column = [&](std::initializer_list<const char*> names) -> const std::vector<double>& {
    for (const char* n : names)
      for (std::size_t i = 0; i < table.header.size(); ++i)
        if (table.header[i] == n) return table.columns[i];
    throw ConfigError("data", 0, a.data + ": needs columns s_m,w_m (or s_hat_m,w_smooth_m)");
  };
  const auto& s = column({"s_m", "s_hat_m"});
  const auto& w = column({"w_m", "w_smooth_m"});
  if (s.size() < 2) throw ConfigError("data", 0, a.data + ": needs at least 2 rows");
  const VectorXd x = Eigen::Map<const VectorXd>(s.data(), Eigen::Index(s.size()));
  const VectorXd y = Eigen::Map<const VectorXd>(w.data(), Eigen::Index(w.size()));

  const GPMode mode = parse_gp_mode(a.mode);
  GPFitOptions opts;
  opts.restarts = a.restarts;
  opts.seed = a.seed;
  const auto model = fit(x, y, mode, default_hyperparams(x, y), opts);

  const fs::path out = a.out.empty() ? fs::path("gpfit") : fs::path(a.out);
  fs::create_directories(out);
  write_file(out / "gp_model.json", to_json(model) + "\n");

  const Eigen::Index m = 4 * (x.size() - 1) + 1;
  const VectorXd grid = VectorXd::LinSpaced(m, x.minCoeff(), x.maxCoeff());
  const auto p = predict(model, grid);
  std::ofstream os(out / "prediction.csv");
  csv::write_row(os, {"s_m", "mean_m", "std_m"});
  for (Eigen::Index i = 0; i < m; ++i)
    csv::write_row(os, {csv::format(grid(i)), csv::format(p.mean(i)), csv::format(std::sqrt(p.variance(i)))});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloud-assisted collaborative road-profile estimation: simulator and tools", "crowdroad"};
  app.set_version_flag("--version", std::string(CROWDROAD_VERSION));
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run every requested scheme over every seed");
  simulate->add_option("--config", sim.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output directory (overrides config and CROWDROAD_OUT)");
  simulate->add_option("--seeds", sim.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  simulate->add_option("--schemes", sim.schemes, "Comma-separated schemes")->delimiter(',');
  simulate->add_option("--workers", sim.workers, "Worker threads (0 = available parallelism)")
      ->check(CLI::NonNegativeNumber);
  simulate->add_option("--seed-offset", sim.seed_offset, "Added to every seed");

  ResumeArgs res;
  auto* resume = app.add_subcommand("resume", "Continue a collaborative run from a persisted cloud state");
  resume->add_option("--config", res.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  resume->add_option("--state", res.state, "cloudstate.json")->required()->check(CLI::ExistingFile);
  resume->add_option("--out", res.out, "Output directory");
  resume->add_option("--seed-index", res.seed_index, "Seed index within the config (0-based)")
      ->check(CLI::NonNegativeNumber);
  resume->add_option("--seed-offset", res.seed_offset, "Added to every seed");

  int systems = 50, horizon = 10;
  std::uint64_t prop_seed = 1;
  std::string prop_out;
  auto* prop1 = app.add_subcommand("prop1", "Compare MMSE with and without the road-selector row");
  prop1->add_option("--systems", systems, "Random systems")->capture_default_str();
  prop1->add_option("--horizon", horizon, "Horizon k")->capture_default_str()->check(CLI::NonNegativeNumber);
  prop1->add_option("--seed", prop_seed, "Seed")->capture_default_str();
  prop1->add_option("--out", prop_out, "CSV path (default stdout)");

  GpfitArgs gf;
  auto* gpfit = app.add_subcommand("gpfit", "Fit a GP to a (s_m, w_m) dataset");
  gpfit->add_option("--data", gf.data, "Dataset CSV")->required();
  gpfit->add_option("--mode", gf.mode, "standard | nigp")->capture_default_str();
  gpfit->add_option("--out", gf.out, "Output directory");
  gpfit->add_option("--restarts", gf.restarts, "Optimizer starts")->capture_default_str()->check(CLI::PositiveNumber);
  gpfit->add_option("--seed", gf.seed, "Optimizer seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*resume) return cmd_resume(res);
    if (*prop1) return cmd_prop1(systems, horizon, prop_seed, prop_out);
    if (*gpfit) return cmd_gpfit(gf);
  } catch (const ConfigError& e) {
    std::cerr << "crowdroad: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "crowdroad: numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "crowdroad: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "crowdroad: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
