#include "ecopinn/datagen.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace ecopinn;

TEST_CASE("grid sizes: 4x4 -> 48 directed segments, 2x2 -> 8") {
  CHECK(gen_network(4, 4, 1).segment_count() == 48);
  CHECK(gen_network(2, 2, 1).segment_count() == 8);
  CHECK_THROWS(gen_network(1, 4, 1));
}

TEST_CASE("network generation is deterministic and attribute-valid") {
  auto a = gen_network(5, 4, 42);
  auto b = gen_network(5, 4, 42);
  REQUIRE(a.segment_count() == b.segment_count());
  for (std::size_t i = 0; i < a.segments().size(); ++i) {
    const auto &x = a.segments()[i], &y = b.segments()[i];
    CHECK(x.id == y.id);
    CHECK(x.length_m == y.length_m);
    CHECK(x.elev_change_m == y.elev_change_m);
    CHECK(x.direction_deg == y.direction_deg);
  }
  for (const auto& s : a.segments()) {
    CHECK(s.length_m >= 200);
    CHECK(s.length_m <= 1500);
    CHECK(std::abs(s.elev_change_m) <= 15);
    CHECK((s.speed_limit_kmh == 30 || s.speed_limit_kmh == 50 || s.speed_limit_kmh == 70 ||
           s.speed_limit_kmh == 90 || s.speed_limit_kmh == 110));
    // segments come in forward/reverse pairs (2k+1, 2k+2) with negated elevation
    const auto& twin = a.segment(s.id % 2 == 1 ? s.id + 1 : s.id - 1);
    CHECK(twin.elev_change_m == -s.elev_change_m);
    CHECK(twin.from_node == s.to_node);
    CHECK(twin.to_node == s.from_node);
  }
}

TEST_CASE("constant-speed zero-grade energy matches the closed form") {
  DenseProfile p;
  p.dt = p.last_dt = 0.1;
  p.v.assign(401, 20.0);  // 40 s at 20 m/s -> 800 m
  VehicleParams vp;
  PhysicsConstants pc;
  const double T = p.duration_s();
  const double want = vp.mass_kg / vp.powertrain_eff * vp.rolling_coeff * pc.g * 20.0 * T +
                      vp.frontal_area_m2 / (2 * vp.powertrain_eff) * vp.drag_coeff *
                          pc.air_density * 20.0 * 20.0 * 20.0 * T;
  const double got = profile_energy_joules(p, vp, 800.0, 0.0);
  CHECK(std::abs(got - want) / want < 0.005);
}

TEST_CASE("fuel unit conversion: 3.86 MJ is 10 units") {
  CHECK(3.86e6 / kJoulesPerFuelUnit == doctest::Approx(10.0));
}

TEST_CASE("resampling a linear ramp is exact") {
  DenseProfile p;
  p.dt = p.last_dt = 0.1;
  p.v = {10, 11, 12, 13, 14};
  auto r = resample_profile(p, 9);
  for (int i = 0; i < 9; ++i) CHECK(r[i] == doctest::Approx(10.0 + 0.5 * i));
}

namespace {

RoadNetwork l_shape(double speed_kmh, double len) {
  RoadNetwork net;
  for (int i = 0; i < 3; ++i) net.add_node(i);
  RoadSegment s;
  s.length_m = len;
  s.speed_limit_kmh = speed_kmh;
  s.lane_count = 2;
  s.id = 1;
  s.from_node = 0;
  s.to_node = 1;
  s.direction_deg = 90;
  net.add_segment(s);
  s.id = 2;
  s.from_node = 1;
  s.to_node = 2;
  s.direction_deg = 180;  // 90 degree turn
  net.add_segment(s);
  net.finalize();
  return net;
}

void check_bounds(const DenseProfile& p, const DatagenConfig& cfg) {
  const double tol = 1e-9;
  const int n = static_cast<int>(p.v.size());
  // acceleration and jerk over the uniform part of the grid
  std::vector<double> a;
  for (int j = 0; j + 2 < n; ++j) a.push_back((p.v[j + 1] - p.v[j]) / p.dt);
  for (double aj : a) CHECK(std::abs(aj) <= cfg.max_accel + tol);
  for (std::size_t j = 0; j + 1 < a.size(); ++j)
    CHECK(std::abs(a[j + 1] - a[j]) / p.dt <= cfg.max_jerk + tol);
  for (double vj : p.v) CHECK(vj >= cfg.floor_speed_mps - tol);
}

}  // namespace

TEST_CASE("90 degree turn forces a deceleration ramp to ~15 km/h") {
  auto net = l_shape(90, 1400);
  DatagenConfig cfg;
  cfg.cruise_lo = cfg.cruise_hi = 1.0;  // deterministic cruise for the check
  auto trip = simulate_trip(net, {1, 2}, VehicleParams{}, {0, 0}, 7, cfg);
  const double min_speed = cfg.min_speed_kmh / 3.6;
  CHECK(std::abs(trip.record.segs[0].exit_speed_mps - min_speed) < 0.6);
  // tail of segment 1 is decelerating
  const auto& v = trip.profiles[0].v;
  REQUIRE(v.size() > 20);
  for (std::size_t j = v.size() - 6; j + 1 < v.size(); ++j) CHECK(v[j + 1] <= v[j] + 1e-9);
  // mid-profile reached cruise speed
  CHECK(*std::max_element(v.begin(), v.end()) > 0.95 * 25.0);
}

TEST_CASE("simulated profiles respect acceleration and jerk bounds") {
  auto net = gen_network(4, 4, 9);
  DatagenConfig cfg;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    auto path = random_trip_path(net, 12, s);
    auto trip = simulate_trip(net, path, VehicleParams{}, {1, 2}, s, cfg);
    for (const auto& p : trip.profiles) check_bounds(p, cfg);
    // continuity across segments
    for (std::size_t i = 0; i + 1 < trip.record.segs.size(); ++i)
      CHECK(trip.record.segs[i].exit_speed_mps == trip.record.segs[i + 1].entry_speed_mps);
    // profile distance covers the segment length
    for (std::size_t i = 0; i < trip.profiles.size(); ++i) {
      const auto& p = trip.profiles[i];
      const auto t = p.times();
      double dist = 0;
      for (std::size_t j = 0; j + 1 < p.v.size(); ++j)
        dist += (t[j + 1] - t[j]) * (p.v[j] + p.v[j + 1]) / 2;
      CHECK(dist == doctest::Approx(net.segment(path[i]).length_m).epsilon(1e-6));
    }
  }
}

TEST_CASE("trip fuel equals the sum of per-segment fuel") {
  auto net = gen_network(4, 4, 3);
  auto trip = simulate_trip(net, random_trip_path(net, 8, 11), VehicleParams{}, {2, 1}, 11);
  double s = 0;
  for (const auto& o : trip.record.segs) s += o.fuel_units;
  CHECK(trip.record.total_fuel_units() == doctest::Approx(s));
  CHECK(trip.record.total_time_s() > 0);
}

TEST_CASE("decoder on the resampled true profile approximates dense ground truth") {
  auto net = gen_network(4, 4, 21);
  auto path = random_trip_path(net, 6, 13);
  auto trip = simulate_trip(net, path, VehicleParams{}, {0, 3}, 13);
  for (std::size_t i = 0; i < path.size(); ++i) {
    const auto& seg = net.segment(path[i]);
    auto v60 = resample_profile(trip.profiles[i], 60);
    diff::Tape t;
    diff::Mat m(60, 1);
    for (int j = 0; j < 60; ++j) m(j, 0) = v60[j];
    diff::Var v = t.constant(m);
    diff::Var dt = delta_t(v, seg.length_m);
    diff::Var a = acceleration(v, dt);
    diff::Var p = power_profile(v, a, VehicleParams{}, seg.length_m, seg.elev_change_m, {});
    const double got = t.value(energy_joules(p, dt))(0, 0);
    const double want =
        profile_energy_joules(trip.profiles[i], VehicleParams{}, seg.length_m, seg.elev_change_m);
    CHECK(std::abs(got - want) / std::abs(want) < 0.1);
  }
}

TEST_CASE("split protocol: sizes, disjointness, labels") {
  std::vector<TripRecord> trips(1000);
  for (int i = 0; i < 1000; ++i) trips[i].trip_id = i + 1;
  auto plan = make_split(trips, 5, 10, 0.05);
  CHECK(plan.test_trip_ids.size() == 200);
  CHECK(plan.repeats.size() == 10);
  std::set<long> test(plan.test_trip_ids.begin(), plan.test_trip_ids.end());
  std::set<std::vector<long>> val_sets;
  for (const auto& r : plan.repeats) {
    CHECK(r.train_ids.size() == 600);
    CHECK(r.val_ids.size() == 200);
    std::set<long> train(r.train_ids.begin(), r.train_ids.end());
    for (long id : r.val_ids) CHECK(!train.count(id));
    for (long id : r.train_ids) CHECK(!test.count(id));
    for (long id : r.val_ids) CHECK(!test.count(id));
    // 5% of 600 train trips -> 30 labeled among train; 5% of 200 val -> 10
    int train_labeled = 0, val_labeled = 0;
    for (long id : r.energy_labeled_ids) {
      if (train.count(id)) ++train_labeled;
      else ++val_labeled;
    }
    CHECK(train_labeled == 30);
    CHECK(val_labeled == 10);
    val_sets.insert(r.val_ids);
  }
  CHECK(val_sets.size() == 10);  // pairwise different for the default seed
}

TEST_CASE("query windows: length 20 step 5") {
  auto net = gen_network(6, 6, 2);
  std::vector<TripRecord> trips;
  for (int n : {30, 20, 19}) {
    auto trip = simulate_trip(net, random_trip_path(net, n, 100 + n), VehicleParams{},
                              {1, 1}, 100 + n);
    trip.record.trip_id = n;
    trips.push_back(trip.record);
  }
  auto qs = make_queries(trips, {30, 20, 19}, {30, 20, 19});
  REQUIRE(qs.size() == 4);  // 3 windows from the 30-trip + 1 from the 20-trip
  CHECK(qs[0].start == 0);
  CHECK(qs[1].start == 5);
  CHECK(qs[2].start == 10);
  CHECK(qs[3].trip_id == 20);
  CHECK(qs[0].path.size() == 20);
  CHECK(qs[0].has_fuel);
  // labels line up with the source trip
  CHECK(qs[1].seg_time_s[0] == trips[0].segs[5].time_s);
  CHECK(qs[1].seg_fuel_units[2] == trips[0].segs[7].fuel_units);

  auto unlabeled = make_queries(trips, {30}, {});
  CHECK_FALSE(unlabeled[0].has_fuel);
  CHECK(unlabeled[0].seg_fuel_units.empty());
}

TEST_CASE("test queries are non-overlapping, capped, fully labeled") {
  auto net = gen_network(6, 6, 2);
  auto trip = simulate_trip(net, random_trip_path(net, 55, 77), VehicleParams{}, {1, 1}, 77);
  trip.record.trip_id = 1;
  auto by_len = make_test_queries({trip.record}, {1}, {1, 10, 20, 50, 100, 200}, 4);
  CHECK(by_len[1].size() == 4);    // capped
  CHECK(by_len[10].size() == 4);   // 5 would fit, capped at 4
  CHECK(by_len[20].size() == 2);
  CHECK(by_len[50].size() == 1);
  CHECK(by_len[100].empty());
  CHECK(by_len[200].empty());
  for (const auto& q : by_len[20]) CHECK(q.has_fuel);
  CHECK(by_len[20][1].start == 20);
}

TEST_CASE("trips.jsonl and split plan round-trip exactly") {
  auto net = gen_network(4, 4, 8);
  DatagenConfig cfg;
  cfg.n_trips = 5;
  cfg.seed = 99;
  cfg.short_lo = 3;
  cfg.short_hi = 6;
  cfg.p_short = 1.0;
  cfg.p_med = cfg.p_long = 0.0;
  auto sims = generate_trips(net, cfg);
  REQUIRE(sims.size() == 5);
  std::vector<TripRecord> recs;
  for (const auto& s : sims) recs.push_back(s.record);

  auto dir = std::filesystem::temp_directory_path();
  auto tp = (dir / "ecopinn_trips_test.jsonl").string();
  save_trips(tp, recs);
  auto loaded = load_trips(tp);
  REQUIRE(loaded.size() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(loaded[i].trip_id == recs[i].trip_id);
    CHECK(loaded[i].path == recs[i].path);
    CHECK(loaded[i].vehicle.mass_kg == recs[i].vehicle.mass_kg);
    for (std::size_t k = 0; k < recs[i].segs.size(); ++k) {
      CHECK(loaded[i].segs[k].time_s == recs[i].segs[k].time_s);
      CHECK(loaded[i].segs[k].fuel_units == recs[i].segs[k].fuel_units);
    }
  }

  std::vector<TripRecord> many(50);
  for (int i = 0; i < 50; ++i) many[i].trip_id = i + 1;
  auto plan = make_split(many, 3, 4, 0.2);
  auto sp = (dir / "ecopinn_split_test.json").string();
  plan.save(sp);
  auto plan2 = SplitPlan::load(sp);
  CHECK(plan2.test_trip_ids == plan.test_trip_ids);
  REQUIRE(plan2.repeats.size() == plan.repeats.size());
  for (std::size_t r = 0; r < plan.repeats.size(); ++r) {
    CHECK(plan2.repeats[r].train_ids == plan.repeats[r].train_ids);
    CHECK(plan2.repeats[r].val_ids == plan.repeats[r].val_ids);
    CHECK(plan2.repeats[r].energy_labeled_ids == plan.repeats[r].energy_labeled_ids);
  }
}

TEST_CASE("generate_trips is deterministic") {
  auto net = gen_network(4, 4, 8);
  DatagenConfig cfg;
  cfg.n_trips = 3;
  cfg.seed = 4;
  auto a = generate_trips(net, cfg);
  auto b = generate_trips(net, cfg);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].record.path == b[i].record.path);
    for (std::size_t k = 0; k < a[i].record.segs.size(); ++k)
      CHECK(a[i].record.segs[k].fuel_units == b[i].record.segs[k].fuel_units);
  }
}
