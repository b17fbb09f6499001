#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ecopinn/data.hpp"
#include "ecopinn/model.hpp"
#include "ecopinn/road_network.hpp"

namespace ecopinn {

/// Every generator constant lives here so runs are fully pinned by one config.
struct DatagenConfig {
  int rows = 8;
  int cols = 8;
  int n_trips = 800;
  std::uint64_t seed = 1;

  // network attribute ranges
  double min_length_m = 200, max_length_m = 1500;
  double max_node_elev_m = 15;  // node elevations in [0, max]; changes stay in +-15

  // simulation
  double sim_hz = 10.0;
  double max_accel = 1.0;      // m/s^2
  double max_jerk = 0.6;       // m/s^3
  double min_speed_kmh = 15.0; // trip start/end and sharp-turn target speed
  double floor_speed_mps = 1.0;
  double cruise_lo = 0.85, cruise_hi = 1.0;  // cruise = U(lo,hi) * speed limit
  double turn_slow_deg = 90.0;               // >= this angle forces min_speed

  // vehicle mass distribution per trip
  double mass_mean_kg = 23257.71, mass_sd_kg = 7844.85;
  double mass_min_kg = 6000, mass_max_kg = 46000;

  // trip length mixture (segments): short / medium / long / very long
  int short_lo = 1, short_hi = 12;
  int med_lo = 40, med_hi = 140;
  int long_lo = 120, long_hi = 190;
  int vlong_lo = 200, vlong_hi = 230;
  double p_short = 0.15, p_med = 0.55, p_long = 0.22;  // remainder: very long

  PhysicsConstants physics;
};

/// Grid road network: rows x cols intersections, two directed segments per
/// undirected edge, seeded attribute draws.
RoadNetwork gen_network(int rows, int cols, std::uint64_t seed, const DatagenConfig& cfg = {});

/// Dense 10 Hz velocity trace for one segment. Intervals are uniform `dt`
/// except the final one (`last_dt`), which lands exactly on the segment end.
struct DenseProfile {
  double dt = 0.1;
  double last_dt = 0.1;
  std::vector<double> v;  // >= 2 samples, all > 0
  bool fallback = false;  // entry->exit speeds infeasible under the bounds

  double duration_s() const {
    return dt * (static_cast<double>(v.size()) - 2.0) + last_dt;
  }
  std::vector<double> times() const;  // sample timestamps starting at 0
};

double profile_time_s(const DenseProfile& p);
/// Dense trapezoidal integration of the longitudinal power model.
double profile_energy_joules(const DenseProfile& p, const VehicleParams& vehicle,
                             double length_m, double elev_change_m,
                             const PhysicsConstants& pc = {});
/// Uniform-in-time linear resampling to n points (for decoder oracles).
std::vector<double> resample_profile(const DenseProfile& p, int n);

struct SimulatedTrip {
  TripRecord record;
  std::vector<DenseProfile> profiles;  // one per path segment
};

/// Jerk-limited speed controller over the path; entry/exit speeds follow the
/// turn rule (full speed at 0 degrees down to min_speed at >= turn_slow_deg)
/// and are continuous across segments.
SimulatedTrip simulate_trip(const RoadNetwork& net, const std::vector<SegmentId>& path,
                            const VehicleParams& vehicle, DepartureTime departure,
                            std::uint64_t seed, const DatagenConfig& cfg = {});

/// Non-backtracking random walk of target_len segments (u-turns only at dead ends).
std::vector<SegmentId> random_trip_path(const RoadNetwork& net, int target_len,
                                        std::uint64_t seed);

/// n_trips simulated trips with per-trip derived seeds; trip_id = 1..n.
std::vector<SimulatedTrip> generate_trips(const RoadNetwork& net, const DatagenConfig& cfg);

struct SplitRepeat {
  std::vector<long> train_ids, val_ids;
  std::set<long> energy_labeled_ids;  // subset of train+val with visible fuel
};

struct SplitPlan {
  std::vector<long> test_trip_ids;  // always fully labeled
  std::vector<SplitRepeat> repeats;
  double label_fraction = 0.05;

  void save(const std::string& path) const;
  static SplitPlan load(const std::string& path);
};

SplitPlan make_split(const std::vector<TripRecord>& trips, std::uint64_t seed,
                     int n_repeats = 10, double label_fraction = 0.05);

/// Sliding windows of `len` segments every `step`; shorter trips are skipped.
std::vector<EteQuery> make_queries(const std::vector<TripRecord>& trips,
                                   const std::vector<long>& trip_ids,
                                   const std::set<long>& energy_labeled, int len = 20,
                                   int step = 5);

/// Non-overlapping windows per length, capped per trip to bound eval volume.
std::map<int, std::vector<EteQuery>> make_test_queries(
    const std::vector<TripRecord>& trips, const std::vector<long>& trip_ids,
    const std::vector<int>& lengths = {1, 10, 20, 50, 100, 200},
    int max_windows_per_trip = 4);

// trips.jsonl round-trip (profiles go to a separate sidecar, oracle tests only)
void save_trips(const std::string& path, const std::vector<TripRecord>& trips);
std::vector<TripRecord> load_trips(const std::string& path);
void save_profiles(const std::string& path, const std::vector<SimulatedTrip>& trips);

}  // namespace ecopinn
