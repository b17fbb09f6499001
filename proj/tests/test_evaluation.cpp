#include "ecopinn/evaluation.hpp"

#include <doctest.h>

#include <cmath>

#include "ecopinn/textio.hpp"

using namespace ecopinn;

namespace {

RoadNetwork make_chain(const std::vector<double>& lengths, double speed = 50,
                       double direction = 90) {
  RoadNetwork net;
  for (std::size_t i = 0; i <= lengths.size(); ++i) net.add_node(static_cast<NodeId>(i));
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    RoadSegment s;
    s.id = static_cast<SegmentId>(i + 1);
    s.from_node = static_cast<NodeId>(i);
    s.to_node = static_cast<NodeId>(i + 1);
    s.length_m = lengths[i];
    s.speed_limit_kmh = speed;
    s.lane_count = 2;
    s.direction_deg = direction;
    net.add_segment(s);
  }
  net.finalize();
  return net;
}

EteQuery one_seg_query(const RoadNetwork& net, SegmentId id, double fuel, double mass = 23257.71) {
  EteQuery q;
  q.trip_id = id;
  q.path = {id};
  q.departure = {1, 2};
  q.vehicle.mass_kg = mass;
  q.has_fuel = true;
  q.seg_time_s = {net.segment(id).length_m / 14.0};
  q.seg_fuel_units = {fuel};
  return q;
}

}  // namespace

TEST_CASE("bin key: mass 23257.71 lands in mass bin 2, negative elevation floors down") {
  auto net = make_chain({400});
  LookupBinWidths w;
  VehicleParams vp;
  vp.mass_kg = 23257.71;
  auto k = LookupTable::key_for(net, net.segment(1), nullptr, vp, {1, 2}, w);
  CHECK(k.num[0] == 2);              // floor(23257.71 / 10000)
  CHECK(k.num[1] == 5);              // speed 50 / 10
  CHECK(k.num[2] == 4);              // length 400 / 100
  CHECK(k.num[3] == 0);              // last segment: turn angle 0
  CHECK(k.num[4] == 2);              // direction 90 / 45
  CHECK(k.cat[0] == 0);
  CHECK(k.cat[5] == 1);              // day
  CHECK(k.cat[6] == 2);              // slot

  RoadSegment s = net.segment(1);
  s.elev_change_m = -3.0;
  auto k2 = LookupTable::key_for(net, s, nullptr, vp, {1, 2}, w);
  CHECK(k2.num[5] == -1);            // floor(-3 / 10)
}

TEST_CASE("single-bin table returns that segment's rate") {
  auto net = make_chain({400});
  LookupTable t;
  t.build(net, {one_seg_query(net, 1, 0.8)});
  CHECK(t.bin_count() == 1);
  CHECK(t.predict_query(net, one_seg_query(net, 1, 0.8)) == doctest::Approx(0.8));
}

TEST_CASE("two segments in one bin average their rates") {
  auto net = make_chain({400, 400});
  LookupTable t;
  EteQuery q;
  q.path = {1, 2};
  q.departure = {1, 2};
  q.has_fuel = true;
  q.seg_time_s = {30, 30};
  q.seg_fuel_units = {0.1 * 400, 0.3 * 400};  // rates 0.1 and 0.3 per meter
  t.build(net, {q});
  CHECK(t.bin_count() == 1);  // same attributes, zero turn angle both rows
  CHECK(t.predict_query(net, one_seg_query(net, 1, 0)) == doctest::Approx(0.2 * 400));
}

TEST_CASE("miss with one stored bin falls back to it; ties pick the lowest key") {
  auto net = make_chain({450, 650, 550});
  LookupTable t;
  t.build(net, {one_seg_query(net, 1, 0.9)});
  // probe segment 3 misses (length bin 5 vs 4) but resolves to the only bin
  CHECK(t.predict_query(net, one_seg_query(net, 3, 0)) ==
        doctest::Approx(0.9 / 450 * 550));

  LookupTable t2;
  t2.build(net, {one_seg_query(net, 1, 450 * 0.2), one_seg_query(net, 2, 650 * 0.6)});
  CHECK(t2.bin_count() == 2);
  // probe bin 5 is equidistant from bins 4 and 6 -> lowest key (bin 4, rate 0.2)
  CHECK(t2.predict_query(net, one_seg_query(net, 3, 0)) == doctest::Approx(0.2 * 550));
}

TEST_CASE("categorical-key matches are preferred over closer global bins") {
  auto net = make_chain({450, 460});
  RoadNetwork net2;  // same chain but segment 2 has a different road type
  net2.add_node(0);
  net2.add_node(1);
  net2.add_node(2);
  for (int i = 0; i < 2; ++i) {
    RoadSegment s;
    s.id = i + 1;
    s.from_node = i;
    s.to_node = i + 1;
    s.length_m = i == 0 ? 1450 : 460;
    s.speed_limit_kmh = 50;
    s.lane_count = 2;
    s.direction_deg = 90;
    s.road_type = i == 0 ? 0 : 3;
    net2.add_segment(s);
  }
  net2.finalize();
  LookupTable t;
  // bin A: road type 0, length bin 14; bin B: road type 3, length bin 4
  t.build(net2, {one_seg_query(net2, 1, 1450 * 0.5), one_seg_query(net2, 2, 460 * 0.1)});
  // probe: road type 0, length 460 -> numeric-closest is bin B, but bin A shares the cat key
  RoadSegment probe = net2.segment(2);
  probe.road_type = 0;
  auto k = LookupTable::key_for(net2, probe, nullptr, VehicleParams{}, {1, 2}, {});
  CHECK(t.rate_for(k) == doctest::Approx(0.5));
}

TEST_CASE("rate times length is linear in length within a bin") {
  auto net = make_chain({400});
  LookupTable t;
  t.build(net, {one_seg_query(net, 1, 0.8)});
  auto k = LookupTable::key_for(net, net.segment(1), nullptr, VehicleParams{}, {1, 2}, {});
  CHECK(t.rate_for(k) * 800.0 == doctest::Approx(2 * t.rate_for(k) * 400.0));
}

TEST_CASE("mape_over") {
  CHECK(mape_over({1, 2, 3}, {1, 2, 3}).mape == 0.0);
  CHECK(mape_over({110, 220}, {100, 200}).mape == doctest::Approx(0.10));
  auto r = mape_over({5, 110}, {0, 100});
  CHECK(r.excluded == 1);
  CHECK(r.n == 1);
  CHECK(r.mape == doctest::Approx(0.10));
}

TEST_CASE("report csv reproduces mean and sd, marks empty buckets") {
  ExperimentResult res;
  res.mape["m1"][20] = {0.10, 0.20, 0.30};
  res.mape["m1"][200] = {};
  auto csv = report_csv(res);
  std::istringstream in(csv);
  std::string header, row20, row200;
  std::getline(in, header);
  std::getline(in, row20);
  std::getline(in, row200);
  CHECK(header == "method,path_len,mape_mean,mape_sd,n_repeats");
  auto f = split_csv(row20);
  CHECK(f[0] == "m1");
  CHECK(f[1] == "20");
  CHECK(parse_double(f[2], "csv") == doctest::Approx(0.2));
  CHECK(parse_double(f[3], "csv") == doctest::Approx(0.1));  // sample sd of {.1,.2,.3}
  CHECK(f[4] == "3");
  CHECK(row200 == "m1,200,n/a,n/a,0");
}

TEST_CASE("tiny end-to-end experiment runs all methods deterministically") {
  ExperimentConfig cfg;
  cfg.datagen.rows = cfg.datagen.cols = 4;
  cfg.datagen.n_trips = 24;
  cfg.datagen.seed = 7;
  cfg.datagen.p_short = 0.3;
  cfg.datagen.med_lo = 20;
  cfg.datagen.med_hi = 40;
  cfg.datagen.p_med = 0.7;
  cfg.datagen.p_long = 0.0;
  cfg.n_repeats = 1;
  cfg.label_fraction = 0.5;
  cfg.test_lengths = {1, 10};
  cfg.train.batch_size = 16;
  cfg.train.max_epochs = 2;
  cfg.max_train_queries = 40;
  cfg.max_val_queries = 10;
  cfg.walks.epochs = 1;
  cfg.walks.walks_per_node = 2;
  cfg.run_fc = true;

  auto data = prepare_experiment(cfg);
  auto res = run_experiment(cfg, data);
  CHECK(res.notes.empty());
  for (const auto& m : {"eco_pinn", "ci_encoder_fc", "nrel_lookup"}) {
    REQUIRE(res.mape.count(m));
    for (int len : {1, 10}) {
      REQUIRE(res.mape.at(m).at(len).size() == 1);
      CHECK(std::isfinite(res.mape.at(m).at(len)[0]));
      CHECK(res.mape.at(m).at(len)[0] >= 0);
    }
  }
  auto res2 = run_experiment(cfg, data);
  CHECK(report_csv(res) == report_csv(res2));
}
