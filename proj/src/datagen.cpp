#include "ecopinn/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "ecopinn/textio.hpp"

namespace ecopinn {

namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 0x1234567ULL));
}

constexpr double kKmhToMps = 1.0 / 3.6;

}  // namespace

RoadNetwork gen_network(int rows, int cols, std::uint64_t seed, const DatagenConfig& cfg) {
  if (rows < 2 || cols < 2) throw std::invalid_argument("gen_network: rows, cols must be >= 2");
  RoadNetwork net;
  std::mt19937_64 rng(derive_seed(seed, 0x6E57ULL, 0));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> len_d(cfg.min_length_m, cfg.max_length_m);
  std::uniform_real_distribution<double> elev_d(0.0, cfg.max_node_elev_m);
  const double speeds[] = {30, 50, 70, 90, 110};

  auto node_id = [&](int r, int c) { return static_cast<NodeId>(r) * cols + c; };
  std::vector<double> node_elev(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      net.add_node(node_id(r, c));
      node_elev[static_cast<std::size_t>(node_id(r, c))] = elev_d(rng);
    }

  SegmentId next_id = 1;
  auto add_edge = [&](NodeId a, NodeId b, double fwd_dir) {
    const double length = len_d(rng);
    const int speed_idx = static_cast<int>(rng() % 5);
    int road_type = speed_idx;
    const double jitter = u01(rng);
    if (jitter < 0.08) road_type = std::max(0, road_type - 1);
    else if (jitter < 0.16) road_type = std::min(4, road_type + 1);
    const int lanes = 1 + (speed_idx >= 2 ? 1 : 0) + (speed_idx >= 4 && u01(rng) < 0.5 ? 1 : 0);
    const bool bridge = u01(rng) < 0.05;
    auto ep = [&] {
      const double x = u01(rng);
      return x < 0.6 ? 0 : (x < 0.9 ? 1 : 2);
    };
    const int ep_a = ep(), ep_b = ep();
    const double dh = node_elev[static_cast<std::size_t>(b)] -
                      node_elev[static_cast<std::size_t>(a)];

    RoadSegment s;
    s.length_m = length;
    s.speed_limit_kmh = speeds[speed_idx];
    s.road_type = road_type;
    s.lane_count = lanes;
    s.is_bridge = bridge;

    s.id = next_id++;
    s.from_node = a;
    s.to_node = b;
    s.elev_change_m = dh;
    s.start_ep_type = ep_a;
    s.end_ep_type = ep_b;
    s.direction_deg = fwd_dir;
    net.add_segment(s);

    s.id = next_id++;
    s.from_node = b;
    s.to_node = a;
    s.elev_change_m = -dh;
    s.start_ep_type = ep_b;
    s.end_ep_type = ep_a;
    s.direction_deg = std::fmod(fwd_dir + 180.0, 360.0);
    net.add_segment(s);
  };

  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) add_edge(node_id(r, c), node_id(r, c + 1), 90.0);   // east
      if (r + 1 < rows) add_edge(node_id(r, c), node_id(r + 1, c), 180.0);  // south
    }
  net.finalize();
  return net;
}

std::vector<double> DenseProfile::times() const {
  std::vector<double> t(v.size());
  for (std::size_t j = 0; j + 1 < v.size(); ++j) t[j] = dt * static_cast<double>(j);
  if (v.size() >= 2) t[v.size() - 1] = t[v.size() - 2] + last_dt;
  return t;
}

double profile_time_s(const DenseProfile& p) { return p.duration_s(); }

double profile_energy_joules(const DenseProfile& p, const VehicleParams& vehicle,
                             double length_m, double elev_change_m, const PhysicsConstants& pc) {
  const auto& v = p.v;
  const int n = static_cast<int>(v.size());
  if (n < 2) throw std::invalid_argument("profile_energy: need >= 2 samples");
  const auto t = p.times();
  std::vector<double> a(n);
  a[0] = (v[1] - v[0]) / (t[1] - t[0]);
  a[n - 1] = (v[n - 1] - v[n - 2]) / (t[n - 1] - t[n - 2]);
  for (int j = 1; j + 1 < n; ++j) a[j] = (v[j + 1] - v[j - 1]) / (t[j + 1] - t[j - 1]);

  const double m_over_eta = vehicle.mass_kg / vehicle.powertrain_eff;
  const double aero = vehicle.frontal_area_m2 / (2.0 * vehicle.powertrain_eff) *
                      vehicle.drag_coeff * pc.air_density;
  const double grade = pc.g * elev_change_m / length_m;
  auto power = [&](int j) {
    return m_over_eta * (a[j] * v[j] + grade * v[j] + vehicle.rolling_coeff * pc.g * v[j]) +
           aero * v[j] * v[j] * v[j];
  };
  double e = 0;
  for (int j = 0; j + 1 < n; ++j) e += (t[j + 1] - t[j]) * (power(j) + power(j + 1)) / 2.0;
  return e;
}

std::vector<double> resample_profile(const DenseProfile& p, int n) {
  if (n < 2) throw std::invalid_argument("resample_profile: need n >= 2");
  const auto t = p.times();
  const double total = t.back();
  std::vector<double> out(n);
  std::size_t k = 0;
  for (int i = 0; i < n; ++i) {
    const double ti = total * i / (n - 1);
    while (k + 2 < t.size() && t[k + 1] < ti) ++k;
    const double f = (ti - t[k]) / (t[k + 1] - t[k]);
    out[i] = p.v[k] + (p.v[k + 1] - p.v[k]) * std::clamp(f, 0.0, 1.0);
  }
  return out;
}

namespace {

/// Greedy jerk-limited controller for one segment; returns the dense profile
/// and leaves *v_io at the achieved exit speed.
DenseProfile run_segment(double length, double cruise, double exit_target, double* v_io,
                         const DatagenConfig& cfg) {
  const double dt = 1.0 / cfg.sim_hz;
  const double amax = cfg.max_accel, jmax = cfg.max_jerk;
  DenseProfile p;
  p.dt = dt;
  double v = *v_io, a = 0.0, x = 0.0;
  p.v.push_back(v);
  // feasibility of reaching the exit target within the segment
  const double need = std::abs(v * v - exit_target * exit_target) / (2.0 * amax);
  p.fallback = need > length;

  for (long iter = 0; iter < 2000000; ++iter) {
    const double d_rem = length - x;
    double a_des;
    if (v > exit_target &&
        d_rem <= (v * v - exit_target * exit_target) / (2.0 * 0.85 * amax) + v * dt) {
      a_des = -std::clamp((v * v - exit_target * exit_target) / (2.0 * std::max(d_rem, 1e-3)),
                          0.0, amax);
    } else if (v < cruise) {
      a_des = std::min(amax, (cruise - v) / dt);
    } else {
      a_des = std::max(-amax, (cruise - v) / dt);
    }
    a += std::clamp(a_des - a, -jmax * dt, jmax * dt);
    a = std::clamp(a, -amax, amax);
    double v_new = v + a * dt;
    if (v_new < cfg.floor_speed_mps) {
      v_new = cfg.floor_speed_mps;
      a = (v_new - v) / dt;
    }
    const double a_eff = (v_new - v) / dt;
    const double step_dist = (v + v_new) / 2.0 * dt;
    if (x + step_dist >= length - 1e-12) {
      // exact crossing time tau of v*tau + a*tau^2/2 = remaining distance
      const double d = length - x;
      double tau;
      if (std::abs(a_eff) < 1e-12) {
        tau = d / std::max(v, 1e-9);
      } else {
        const double disc = std::max(v * v + 2.0 * a_eff * d, 0.0);
        tau = (-v + std::sqrt(disc)) / a_eff;
      }
      tau = std::clamp(tau, 1e-9, dt);
      const double v_end = v + a_eff * tau;
      p.last_dt = tau;
      p.v.push_back(v_end);
      *v_io = v_end;
      return p;
    }
    x += step_dist;
    v = v_new;
    p.v.push_back(v);
  }
  throw std::runtime_error("simulate_trip: controller failed to finish a segment");
}

}  // namespace

SimulatedTrip simulate_trip(const RoadNetwork& net, const std::vector<SegmentId>& path,
                            const VehicleParams& vehicle, DepartureTime departure,
                            std::uint64_t seed, const DatagenConfig& cfg) {
  if (path.empty()) throw std::invalid_argument("simulate_trip: empty path");
  vehicle.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> cruise_u(cfg.cruise_lo, cfg.cruise_hi);
  const double min_speed = cfg.min_speed_kmh * kKmhToMps;

  const int n = static_cast<int>(path.size());
  std::vector<double> cruise(n);
  for (int i = 0; i < n; ++i)
    cruise[i] = net.segment(path[i]).speed_limit_kmh * kKmhToMps * cruise_u(rng);

  // exit-speed targets from the turn rule; trip ends at min_speed
  std::vector<double> exit_target(n);
  for (int i = 0; i + 1 < n; ++i) {
    const double angle = turn_angle(net, net.segment(path[i]), net.segment(path[i + 1]));
    const double full = std::min(cruise[i], cruise[i + 1]);
    const double frac = std::clamp(angle / cfg.turn_slow_deg, 0.0, 1.0);
    exit_target[i] = full < min_speed ? full : full + (min_speed - full) * frac;
  }
  exit_target[n - 1] = std::min(min_speed, cruise[n - 1]);

  SimulatedTrip out;
  out.record.path = path;
  out.record.departure = departure;
  out.record.vehicle = vehicle;
  out.record.has_fuel = true;

  double v = std::min(min_speed, cruise[0]);  // trip starts slow
  for (int i = 0; i < n; ++i) {
    const auto& seg = net.segment(path[i]);
    const double entry = v;
    DenseProfile p = run_segment(seg.length_m, cruise[i], exit_target[i], &v, cfg);
    SegmentObs obs;
    obs.time_s = profile_time_s(p);
    obs.fuel_units =
        profile_energy_joules(p, vehicle, seg.length_m, seg.elev_change_m, cfg.physics) /
        kJoulesPerFuelUnit;
    obs.entry_speed_mps = entry;
    obs.exit_speed_mps = v;
    obs.fallback_profile = p.fallback;
    out.record.segs.push_back(obs);
    out.profiles.push_back(std::move(p));
  }
  return out;
}

std::vector<SegmentId> random_trip_path(const RoadNetwork& net, int target_len,
                                        std::uint64_t seed) {
  if (target_len < 1) throw std::invalid_argument("random_trip_path: target_len must be >= 1");
  std::mt19937_64 rng(seed);
  const auto& segs = net.segments();
  std::vector<SegmentId> path;
  SegmentId cur = segs[rng() % segs.size()].id;
  path.push_back(cur);
  while (static_cast<int>(path.size()) < target_len) {
    const auto& succ = net.successors(cur);
    if (succ.empty()) break;
    const auto& c = net.segment(cur);
    std::vector<SegmentId> choices;
    for (SegmentId s : succ) {
      const auto& t = net.segment(s);
      if (t.from_node == c.to_node && t.to_node == c.from_node) continue;  // u-turn
      choices.push_back(s);
    }
    if (choices.empty()) choices.assign(succ.begin(), succ.end());  // dead end
    cur = choices[rng() % choices.size()];
    path.push_back(cur);
  }
  return path;
}

std::vector<SimulatedTrip> generate_trips(const RoadNetwork& net, const DatagenConfig& cfg) {
  std::vector<SimulatedTrip> trips;
  trips.reserve(cfg.n_trips);
  for (int i = 0; i < cfg.n_trips; ++i) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x721AULL, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto pick = [&](int lo, int hi) {
      return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
    };
    const double mix = u01(rng);
    int target;
    if (mix < cfg.p_short) target = pick(cfg.short_lo, cfg.short_hi);
    else if (mix < cfg.p_short + cfg.p_med) target = pick(cfg.med_lo, cfg.med_hi);
    else if (mix < cfg.p_short + cfg.p_med + cfg.p_long) target = pick(cfg.long_lo, cfg.long_hi);
    else target = pick(cfg.vlong_lo, cfg.vlong_hi);

    VehicleParams vp;
    std::normal_distribution<double> mass(cfg.mass_mean_kg, cfg.mass_sd_kg);
    vp.mass_kg = std::clamp(mass(rng), cfg.mass_min_kg, cfg.mass_max_kg);
    DepartureTime dep{static_cast<int>(rng() % 7), static_cast<int>(rng() % 6)};

    auto path = random_trip_path(net, target, rng());
    auto trip = simulate_trip(net, path, vp, dep, rng(), cfg);
    trip.record.trip_id = i + 1;
    trips.push_back(std::move(trip));
  }
  return trips;
}

SplitPlan make_split(const std::vector<TripRecord>& trips, std::uint64_t seed, int n_repeats,
                     double label_fraction) {
  if (trips.size() < 10) throw std::invalid_argument("make_split: need >= 10 trips");
  SplitPlan plan;
  plan.label_fraction = label_fraction;
  std::vector<long> ids;
  for (const auto& t : trips) ids.push_back(t.trip_id);
  std::sort(ids.begin(), ids.end());

  std::mt19937_64 rng(derive_seed(seed, 0x59117ULL, 0));
  std::shuffle(ids.begin(), ids.end(), rng);
  const std::size_t n_test = static_cast<std::size_t>(std::llround(0.2 * ids.size()));
  plan.test_trip_ids.assign(ids.begin(), ids.begin() + n_test);
  std::sort(plan.test_trip_ids.begin(), plan.test_trip_ids.end());
  std::vector<long> rest(ids.begin() + n_test, ids.end());
  std::sort(rest.begin(), rest.end());

  for (int r = 0; r < n_repeats; ++r) {
    std::mt19937_64 rr(derive_seed(seed, 0x43E9ULL, static_cast<std::uint64_t>(r)));
    std::vector<long> pool = rest;
    std::shuffle(pool.begin(), pool.end(), rr);
    SplitRepeat rep;
    const std::size_t n_train = static_cast<std::size_t>(std::llround(0.75 * pool.size()));
    rep.train_ids.assign(pool.begin(), pool.begin() + n_train);
    rep.val_ids.assign(pool.begin() + n_train, pool.end());
    // label masks drawn per split part so validation keeps its metric
    auto label = [&](std::vector<long> part) {
      std::shuffle(part.begin(), part.end(), rr);
      const std::size_t k =
          static_cast<std::size_t>(std::llround(label_fraction * part.size()));
      rep.energy_labeled_ids.insert(part.begin(), part.begin() + k);
    };
    label(rep.train_ids);
    label(rep.val_ids);
    std::sort(rep.train_ids.begin(), rep.train_ids.end());
    std::sort(rep.val_ids.begin(), rep.val_ids.end());
    plan.repeats.push_back(std::move(rep));
  }
  return plan;
}

std::vector<EteQuery> make_queries(const std::vector<TripRecord>& trips,
                                   const std::vector<long>& trip_ids,
                                   const std::set<long>& energy_labeled, int len, int step) {
  if (len < 1 || step < 1) throw std::invalid_argument("make_queries: len, step must be >= 1");
  std::set<long> wanted(trip_ids.begin(), trip_ids.end());
  std::vector<EteQuery> out;
  for (const auto& t : trips) {
    if (!wanted.count(t.trip_id)) continue;
    const int n = static_cast<int>(t.path.size());
    if (n < len) continue;
    const bool labeled = t.has_fuel && energy_labeled.count(t.trip_id) > 0;
    for (int s = 0; s + len <= n; s += step) {
      EteQuery q;
      q.trip_id = t.trip_id;
      q.start = s;
      q.departure = t.departure;
      q.vehicle = t.vehicle;
      q.has_fuel = labeled;
      for (int i = s; i < s + len; ++i) {
        q.path.push_back(t.path[i]);
        q.seg_time_s.push_back(t.segs[i].time_s);
        if (labeled) q.seg_fuel_units.push_back(t.segs[i].fuel_units);
      }
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::map<int, std::vector<EteQuery>> make_test_queries(const std::vector<TripRecord>& trips,
                                                       const std::vector<long>& trip_ids,
                                                       const std::vector<int>& lengths,
                                                       int max_windows_per_trip) {
  std::set<long> wanted(trip_ids.begin(), trip_ids.end());
  std::map<int, std::vector<EteQuery>> out;
  for (int len : lengths) out[len] = {};
  for (const auto& t : trips) {
    if (!wanted.count(t.trip_id)) continue;
    const int n = static_cast<int>(t.path.size());
    for (int len : lengths) {
      if (n < len) continue;
      int made = 0;
      for (int s = 0; s + len <= n && made < max_windows_per_trip; s += len, ++made) {
        EteQuery q;
        q.trip_id = t.trip_id;
        q.start = s;
        q.departure = t.departure;
        q.vehicle = t.vehicle;
        q.has_fuel = true;  // test trips are always fully labeled
        for (int i = s; i < s + len; ++i) {
          q.path.push_back(t.path[i]);
          q.seg_time_s.push_back(t.segs[i].time_s);
          q.seg_fuel_units.push_back(t.segs[i].fuel_units);
        }
        out[len].push_back(std::move(q));
      }
    }
  }
  return out;
}

void save_trips(const std::string& path, const std::vector<TripRecord>& trips) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& t : trips) {
    json j;
    j["trip_id"] = t.trip_id;
    j["path"] = t.path;
    j["day"] = t.departure.day;
    j["slot"] = t.departure.slot;
    j["mass_kg"] = t.vehicle.mass_kg;
    j["frontal_area_m2"] = t.vehicle.frontal_area_m2;
    j["drag_coeff"] = t.vehicle.drag_coeff;
    j["powertrain_eff"] = t.vehicle.powertrain_eff;
    j["rolling_coeff"] = t.vehicle.rolling_coeff;
    j["has_fuel"] = t.has_fuel;
    json segs = json::array();
    for (const auto& o : t.segs) {
      segs.push_back({{"time_s", o.time_s},
                      {"fuel_units", o.fuel_units},
                      {"entry_mps", o.entry_speed_mps},
                      {"exit_mps", o.exit_speed_mps},
                      {"fallback", o.fallback_profile}});
    }
    j["segs"] = std::move(segs);
    out << j.dump() << "\n";
  }
}

std::vector<TripRecord> load_trips(const std::string& path) {
  std::vector<TripRecord> trips;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    TripRecord t;
    t.trip_id = j.at("trip_id").get<long>();
    t.path = j.at("path").get<std::vector<SegmentId>>();
    t.departure.day = j.at("day").get<int>();
    t.departure.slot = j.at("slot").get<int>();
    t.vehicle.mass_kg = j.at("mass_kg").get<double>();
    t.vehicle.frontal_area_m2 = j.at("frontal_area_m2").get<double>();
    t.vehicle.drag_coeff = j.at("drag_coeff").get<double>();
    t.vehicle.powertrain_eff = j.at("powertrain_eff").get<double>();
    t.vehicle.rolling_coeff = j.at("rolling_coeff").get<double>();
    t.has_fuel = j.at("has_fuel").get<bool>();
    for (const auto& s : j.at("segs")) {
      SegmentObs o;
      o.time_s = s.at("time_s").get<double>();
      o.fuel_units = s.at("fuel_units").get<double>();
      o.entry_speed_mps = s.at("entry_mps").get<double>();
      o.exit_speed_mps = s.at("exit_mps").get<double>();
      o.fallback_profile = s.at("fallback").get<bool>();
      t.segs.push_back(o);
    }
    if (t.path.size() != t.segs.size())
      throw std::runtime_error(path + ": trip path/segs length mismatch");
    trips.push_back(std::move(t));
  }
  return trips;
}

void save_profiles(const std::string& path, const std::vector<SimulatedTrip>& trips) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& t : trips)
    for (std::size_t i = 0; i < t.profiles.size(); ++i) {
      const auto& p = t.profiles[i];
      json j;
      j["trip_id"] = t.record.trip_id;
      j["seg_index"] = i;
      j["dt"] = p.dt;
      j["last_dt"] = p.last_dt;
      j["fallback"] = p.fallback;
      j["v"] = p.v;
      out << j.dump() << "\n";
    }
}

void SplitPlan::save(const std::string& path) const {
  json j;
  j["label_fraction"] = label_fraction;
  j["test_trip_ids"] = test_trip_ids;
  json reps = json::array();
  for (const auto& r : repeats) {
    reps.push_back({{"train_ids", r.train_ids},
                    {"val_ids", r.val_ids},
                    {"energy_labeled_ids",
                     std::vector<long>(r.energy_labeled_ids.begin(), r.energy_labeled_ids.end())}});
  }
  j["repeats"] = std::move(reps);
  write_file(path, j.dump(2) + "\n");
}

SplitPlan SplitPlan::load(const std::string& path) {
  json j = json::parse(read_file(path));
  SplitPlan plan;
  plan.label_fraction = j.at("label_fraction").get<double>();
  plan.test_trip_ids = j.at("test_trip_ids").get<std::vector<long>>();
  for (const auto& r : j.at("repeats")) {
    SplitRepeat rep;
    rep.train_ids = r.at("train_ids").get<std::vector<long>>();
    rep.val_ids = r.at("val_ids").get<std::vector<long>>();
    auto labeled = r.at("energy_labeled_ids").get<std::vector<long>>();
    rep.energy_labeled_ids.insert(labeled.begin(), labeled.end());
    plan.repeats.push_back(std::move(rep));
  }
  return plan;
}

}  // namespace ecopinn
