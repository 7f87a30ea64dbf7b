#include "crowdroad/simulation.hpp"
#include "doctest.h"
#include "support.hpp"

#include <filesystem>
#include <set>

using namespace crowdroad;

TEST_CASE("Table I fleet formulas") {
  const auto fleet = table1_fleet(10);
  REQUIRE(fleet.size() == 10);
  CHECK(fleet[0].sprung_mass == doctest::Approx(273.0));
  CHECK(fleet[0].spring_stiffness == doctest::Approx(14560.0));
  CHECK(fleet[9].sprung_mass == doctest::Approx(300.0));
  CHECK(fleet[9].spring_stiffness == doctest::Approx(16000.0));
  for (const auto& p : fleet) {
    CHECK(p.tire_stiffness == 190000.0);
    CHECK(p.unsprung_mass == 60.0);
    CHECK(p.suspension_damping == 1000.0);
    CHECK(p.tire_damping == 0.0);
  }
  CHECK_THROWS_AS(table1_fleet(0), InvalidArgument);
}

TEST_CASE("seed bundle streams are distinct and reproducible") {
  const auto a = SeedBundle::from_base(1);
  const auto b = SeedBundle::from_base(1);
  const auto c = SeedBundle::from_base(2);
  CHECK(a.road == b.road);
  CHECK(a.optimizer == b.optimizer);
  CHECK(std::set<std::uint64_t>{a.road, a.measurement, a.gps, a.optimizer}.size() == 4);
  CHECK(a.road != c.road);
}

TEST_CASE("scenario validation") {
  Scenario sc = table1_scenario(2, 1);
  CHECK_NOTHROW(sc.validate());
  Scenario empty = sc;
  empty.fleet.clear();
  CHECK_THROWS_AS(empty.validate(), InvalidArgument);
  Scenario short_run = sc;
  short_run.n_steps = 1;
  CHECK_THROWS_AS(short_run.validate(), InvalidArgument);
  Scenario speeds = sc;
  speeds.speeds = {10.0};
  CHECK_THROWS_AS(speeds.validate(), InvalidArgument);
  Scenario bad_mass = sc;
  bad_mass.fleet[1].sprung_mass = -3;
  CHECK_THROWS_WITH_AS(bad_mass.validate(), doctest::Contains("fleet[1].sprung_mass"), InvalidArgument);
}

TEST_CASE("shared ground truth covers the segment") {
  Scenario sc = table1_scenario(3, 2);
  const auto a = ground_truth(sc, 0);
  const auto b = ground_truth(sc, 2);
  CHECK(a.size() == 151);
  CHECK(a.elevations == b.elevations);
  sc.shared_road = false;
  CHECK(ground_truth(sc, 0).elevations != ground_truth(sc, 2).elevations);
  sc.speeds = {sc.nominal_speed, 2 * sc.nominal_speed, sc.nominal_speed};
  CHECK(ground_truth(sc, 0).size() == 301);
}

TEST_CASE("vehicle data is independent of the other vehicles") {
  const Scenario sc = table1_scenario(3, 3);
  Scenario other = table1_scenario(6, 3);
  other.fleet[2].sprung_mass *= 1.5;
  for (std::size_t i : {0, 1}) {
    const auto a = prepare_vehicle(sc, i);
    const auto b = prepare_vehicle(other, i);
    CHECK(a.measurements == b.measurements);
    CHECK(a.positions == b.positions);
    const auto ra = run_vehicle(sc, a, std::nullopt);
    const auto rb = run_vehicle(other, b, std::nullopt);
    CHECK(ra.trace.filtered == rb.trace.filtered);
  }
  const auto v0 = prepare_vehicle(sc, 0);
  const auto v1 = prepare_vehicle(sc, 1);
  CHECK(v0.measurements != v1.measurements);
  CHECK(v0.true_road == v1.true_road);
}

TEST_CASE("vehicle data shapes") {
  const Scenario sc = table1_scenario(1, 4);
  const auto d = prepare_vehicle(sc, 0);
  CHECK(d.measurements.rows() == 151);
  CHECK(d.measurements.cols() == 2);
  CHECK(d.model.state_dim() == 5);
  CHECK(d.true_positions(150) == doctest::Approx(40.0));
  CHECK(d.positions.size() == 151);
  CHECK(d.model.measurement_noise.diagonal().isApprox(d.noise.noise_variance));
  CHECK_NOTHROW(d.model.validate());
}

TEST_CASE("scheme names round trip") {
  for (Scheme s : all_schemes()) CHECK(parse_scheme(scheme_name(s)) == s);
  CHECK_THROWS_AS(parse_scheme("bogus"), InvalidArgument);
}

TEST_CASE("a single vehicle gives the same estimate under every scheme") {
  const Scenario sc = table1_scenario(1, 5);
  const auto base = run_scheme(sc, Scheme::KfOnly);
  for (Scheme s : all_schemes()) {
    const auto r = run_scheme(sc, s);
    REQUIRE(r.traces.size() == 1);
    CHECK(r.traces[0].filtered == base.traces[0].filtered);
    CHECK(r.traces[0].smoothed == base.traces[0].smoothed);
    CHECK(r.metrics.vehicles[0].rmse_filtered == base.metrics.vehicles[0].rmse_filtered);
  }
}

TEST_CASE("chained vehicles read their predecessor") {
  const Scenario sc = table1_scenario(3, 6);
  const auto only = run_scheme(sc, Scheme::KfOnly);
  const auto chain = run_scheme(sc, Scheme::KfChain);
  CHECK(chain.traces[0].filtered == only.traces[0].filtered);
  CHECK(chain.traces[1].filtered != only.traces[1].filtered);
  // Extra information can only shrink the filter variance.
  CHECK((chain.traces[1].filtered_variance.array() <= only.traces[1].filtered_variance.array() + 1e-15).all());
  const auto avg = run_scheme(sc, Scheme::AveragedKf);
  CHECK(std::isfinite(avg.metrics.vehicles.back().cloud_rmse));
  CHECK(std::isnan(only.metrics.vehicles.back().cloud_rmse));
}

TEST_CASE("full pipeline is deterministic per seed bundle") {
  const auto r = crowdroad::testing::check_pipeline_determinism(7, 2);
  INFO(r.detail);
  CHECK(r.pass);
  CHECK(r.cases == 5);
}

TEST_CASE("resuming from a cloud state continues the loop") {
  Scenario sc = table1_scenario(3, 8);
  sc.regression_mode = GPMode::Standard;
  const auto full = run_collaborative(sc);
  Scenario first = sc;
  first.fleet.resize(2);
  const auto part = run_collaborative(first);
  const auto resumed = run_collaborative(sc, part.cloud);
  REQUIRE(resumed.traces.size() == 1);
  CHECK(resumed.traces[0].filtered == full.traces[2].filtered);
  CHECK(to_json(*resumed.cloud) == to_json(*full.cloud));
}

TEST_CASE("result directory layout") {
  Scenario sc = table1_scenario(2, 9);
  sc.regression_mode = GPMode::Standard;
  const auto r = run_collaborative(sc);
  const auto dir = std::filesystem::temp_directory_path() / "crowdroad_result_layout";
  std::filesystem::remove_all(dir);
  write_result_directory(dir.string(), r);
  for (const char* f : {"ground_truth.csv", "vehicle_1_trace.csv", "vehicle_2_trace.csv", "gp_after_1.json",
                        "gp_after_2.json", "metrics.csv", "cloudstate.json"})
    CHECK(std::filesystem::exists(dir / f));
  std::filesystem::remove_all(dir);
  write_result_directory(dir.string(), r, EmitFlags{false, false, true});
  CHECK_FALSE(std::filesystem::exists(dir / "vehicle_1_trace.csv"));
  CHECK(std::filesystem::exists(dir / "metrics.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("Table I collaborative run improves the cloud estimate") {
  const Scenario sc = table1_scenario(10, 1);
  const auto r = run_collaborative(sc);
  REQUIRE(r.metrics.vehicles.size() == 10);
  const double first = r.metrics.vehicles.front().cloud_rmse;
  const double last = r.metrics.vehicles.back().cloud_rmse;
  MESSAGE("cloud RMSE after vehicle 1: " << first << ", after vehicle 10: " << last);
  CHECK(last < first);
  CHECK(r.cloud->gp->size() == 1510);
  CHECK(r.metrics.vehicles.back().mean_posterior_std < r.metrics.vehicles.front().mean_posterior_std);
}
