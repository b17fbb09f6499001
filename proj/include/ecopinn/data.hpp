#pragma once

#include <vector>

#include "ecopinn/featurization.hpp"
#include "ecopinn/road_network.hpp"

namespace ecopinn {

/// Per-segment observations of one trip. fuel_units is meaningful only when
/// the owning record is energy-labeled.
struct SegmentObs {
  double time_s = 0;
  double fuel_units = 0;  // 10 ml units
  double entry_speed_mps = 0;
  double exit_speed_mps = 0;
  bool fallback_profile = false;  // monotone-ramp fallback was used
};

/// One simulated (or recorded) trip: an OBD-style label source.
struct TripRecord {
  long trip_id = 0;
  std::vector<SegmentId> path;
  DepartureTime departure;
  VehicleParams vehicle;
  std::vector<SegmentObs> segs;
  bool has_fuel = true;  // whether fuel_units are observed

  double total_time_s() const {
    double s = 0;
    for (const auto& o : segs) s += o.time_s;
    return s;
  }
  double total_fuel_units() const {
    double s = 0;
    for (const auto& o : segs) s += o.fuel_units;
    return s;
  }
};

/// A training/evaluation example: a sub-trip window with per-segment labels.
struct EteQuery {
  long trip_id = 0;
  int start = 0;  // offset of this window within the source trip
  std::vector<SegmentId> path;
  DepartureTime departure;
  VehicleParams vehicle;
  std::vector<double> seg_time_s;
  std::vector<double> seg_fuel_units;  // empty when !has_fuel
  bool has_fuel = false;

  QuerySpec spec() const { return {path, departure, vehicle}; }
  double path_time_s() const {
    double s = 0;
    for (double v : seg_time_s) s += v;
    return s;
  }
  double path_fuel_units() const {
    double s = 0;
    for (double v : seg_fuel_units) s += v;
    return s;
  }
};

}  // namespace ecopinn
