#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecopinn/diffcore.hpp"
#include "ecopinn/featurization.hpp"
#include "ecopinn/road_network.hpp"

namespace ecopinn {

struct PhysicsConstants {
  double g = 9.81;            // m/s^2
  double air_density = 1.225; // kg/m^3
};

/// 10 ml of diesel equals 0.386 MJ of thermal energy.
inline constexpr double kJoulesPerFuelUnit = 386000.0;

enum class DecoderKind { kPhysics, kFc };
enum class ElevationMode {
  kGradeRate,  // g * (h/length) * v(j): climb rate, keeps the term in watts
  kLiteral,    // g * h added per sample, as written
};

struct ModelConfig {
  int window = 1;        // w
  int profile_len = 60;  // |v|
  int feature_dim = 58;  // d + cg + num
  int ffn_hidden = 32;
  DecoderKind decoder = DecoderKind::kPhysics;
  ElevationMode elevation = ElevationMode::kGradeRate;
  PhysicsConstants physics;
  std::uint64_t init_seed = 1;
  double init_velocity_mps = 10.0;  // head bias targets this via softplus^-1

  void save(const std::string& path) const;  // key=value text
  static ModelConfig load(const std::string& path);
};

// ---- physics decoder building blocks (profile vectors are n x 1 columns) ----

/// Eq-style time step: dt = 2*length / sum_j (v(j) + v(j+1)).
diff::Var delta_t(diff::Var v, double length_m);
/// Central differences with one-sided first differences at both ends.
diff::Var central_diff(diff::Var x, diff::Var dt);
inline diff::Var acceleration(diff::Var v, diff::Var dt) { return central_diff(v, dt); }
diff::Var power_profile(diff::Var v, diff::Var a, const VehicleParams& vehicle, double length_m,
                        double elev_change_m, const PhysicsConstants& pc,
                        ElevationMode mode = ElevationMode::kGradeRate);
/// Trapezoidal energy in joules.
diff::Var energy_joules(diff::Var p, diff::Var dt);
/// (|v|-1) * dt.
diff::Var travel_time_s(diff::Var dt, int profile_len);
inline diff::Var jerk(diff::Var a, diff::Var dt) { return central_diff(a, dt); }

struct SegmentPrediction {
  diff::Var energy_fuel_units;  // 10 ml units
  diff::Var time_s;
  diff::Var jerk_profile;       // n x 1
  diff::Var velocity_profile;   // n x 1
};

/// The Eco-PiNN network: single-head attention encoder over a subpath window
/// producing a pseudo velocity profile, decoded to energy and travel time.
class EcoPinnModel {
 public:
  EcoPinnModel(ModelConfig cfg, const CategoricalSchema& schema);

  const ModelConfig& config() const { return cfg_; }
  const CategoricalSchema& schema() const { return schema_; }
  diff::ParamStore& params() { return params_; }
  const diff::ParamStore& params() const { return params_; }
  /// Current table values, for materializing SubpathTensor features.
  CatTables cat_tables() const;
  /// Node2vec table stays frozen; everything else trains.
  std::vector<diff::Parameter*> trainable();

  /// Parameter handles materialized once per tape; reuse across a batch.
  struct Bound {
    diff::Tape* tape = nullptr;
    const EcoPinnModel* model = nullptr;
    diff::Var mq, mk, mv, mo;
    diff::Var ffn1_w, ffn1_b, ffn2_w, ffn2_b;
    diff::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    diff::Var head_w, head_b;
    std::array<diff::Var, kNumCatFeatures> cat;
    diff::Var fc_w, fc_b;  // fc decoder only

    /// Differentiable feature row for one real (unmasked) tensor row.
    diff::Var feature_row(const SubpathTensor& t, int row) const;
    /// Attention + FFN over already-built rows (center = window index).
    diff::Var encode_window(const std::vector<diff::Var>& rows, int center,
                            const std::vector<bool>& mask) const;
    /// Decode a velocity profile for one segment.
    SegmentPrediction decode(diff::Var v, const VehicleParams& vehicle, double length_m,
                             double elev_change_m) const;
    /// Pseudo velocity profile (profile_len x 1, strictly positive).
    diff::Var encode(const SubpathTensor& t) const;
    /// Encode + decode for one segment.
    SegmentPrediction predict_segment(const SubpathTensor& t, const VehicleParams& vehicle,
                                      double length_m, double elev_change_m) const;
    /// Whole query; row Vars are shared across overlapping windows.
    std::vector<SegmentPrediction> predict_query(const std::vector<SubpathTensor>& tensors,
                                                 const VehicleParams& vehicle,
                                                 const RoadNetwork& net) const;
  };
  Bound bind(diff::Tape& tape) const;

  /// Value-only path prediction: (energy fuel units, time seconds).
  std::pair<double, double> predict_path(const RoadNetwork& net, const QuerySpec& q,
                                         const EmbeddingTable& emb, const NormStats& stats) const;

  void save(const std::string& checkpoint_path, const std::string& config_path) const;
  void load_params(const std::string& checkpoint_path);

 private:
  ModelConfig cfg_;
  CategoricalSchema schema_;
  diff::ParamStore params_;
};

}  // namespace ecopinn
