#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "ecopinn/embedding.hpp"
#include "ecopinn/road_network.hpp"

namespace ecopinn {

struct VehicleParams {
  double mass_kg = 23257.71;
  double frontal_area_m2 = 10.5;
  double drag_coeff = 0.6;        // c_air
  double powertrain_eff = 0.56;   // eta, in (0, 1]
  double rolling_coeff = 0.006;   // c_rr

  void validate() const;
};

struct DepartureTime {
  int day = 0;   // 0..6
  int slot = 0;  // 0..5
};

struct QuerySpec {
  std::vector<SegmentId> path;
  DepartureTime departure;
  VehicleParams vehicle;
};

/// One day split equally into six slots: floor(hour / 4).
int time_slot(int hour, int minute = 0);

inline constexpr int kNumericDim = 6;
inline constexpr int kEmbeddingDim = 32;

/// Z-score statistics for the six numeric features, persisted as CSV
/// `feature,mean,sd`.
struct NormStats {
  Eigen::Matrix<double, kNumericDim, 1> mean = Eigen::Matrix<double, kNumericDim, 1>::Zero();
  Eigen::Matrix<double, kNumericDim, 1> sd = Eigen::Matrix<double, kNumericDim, 1>::Ones();

  void save(const std::string& path) const;
  static NormStats load(const std::string& path);
  static NormStats compute(const std::vector<Eigen::Matrix<double, kNumericDim, 1>>& rows);
};

/// Raw (un-normalized) numeric features:
/// [mass, speed_limit, length, turn_angle (0 if last), direction_angle, elev_change].
Eigen::Matrix<double, kNumericDim, 1> raw_numeric_features(const RoadNetwork& net,
                                                           const RoadSegment& seg,
                                                           const RoadSegment* next_seg,
                                                           const VehicleParams& vehicle);

Eigen::Matrix<double, kNumericDim, 1> numeric_features(const RoadNetwork& net,
                                                       const RoadSegment& seg,
                                                       const RoadSegment* next_seg,
                                                       const VehicleParams& vehicle,
                                                       const NormStats& stats);

inline constexpr int kNumCatFeatures = 7;

/// Categorical feature layout. Road-attribute vocabularies come from the
/// training split; day and time slot have fixed domains (7 and 6). Each
/// vocabulary carries a dedicated OOV row for unseen categories.
struct CategoricalSchema {
  static const std::array<const char*, kNumCatFeatures>& feature_names();
  static const std::array<int, kNumCatFeatures>& feature_dims();  // 4,4,4,2,2,2,2

  struct Vocab {
    std::map<int, int> row_of;
    int rows() const { return static_cast<int>(row_of.size()) + 1; }  // + OOV
    int oov_row() const { return static_cast<int>(row_of.size()); }
    int row(int code) const {
      auto it = row_of.find(code);
      return it == row_of.end() ? oov_row() : it->second;
    }
  };
  std::array<Vocab, kNumCatFeatures> vocab;

  int total_dim() const;  // sum of feature_dims == 20
  /// Table row indices for one segment at a given departure.
  std::array<int, kNumCatFeatures> rows_for(const RoadSegment& seg, DepartureTime dep) const;

  void save(const std::string& path) const;  // CSV feature,category,row_index
  static CategoricalSchema load(const std::string& path);
  /// Vocabularies from the segments reachable in the training split.
  static CategoricalSchema build(const RoadNetwork& net,
                                 const std::vector<SegmentId>& training_segments);
};

/// Concrete values of the seven embedding tables (row-indexed per schema).
/// The trainable copies live in the model's parameter store.
using CatTables = std::array<Eigen::MatrixXd, kNumCatFeatures>;

/// The (2w+1) x 58 context window for one path position. Padded rows are
/// all-zero with mask false; cat_rows mirrors the table rows used per real row
/// so the model can rebuild X differentiably.
struct SubpathTensor {
  Eigen::MatrixXd X;
  std::vector<bool> mask;
  int center_index = 0;
  SegmentId center_segment = -1;
  std::vector<std::array<int, kNumCatFeatures>> cat_rows;
  std::vector<SegmentId> row_segments;  // -1 for padded rows
};

int feature_dim(const EmbeddingTable& emb, const CategoricalSchema& schema);

/// One tensor per path segment; rows cover path(i-w)..path(i+w).
std::vector<SubpathTensor> build_subpaths(const QuerySpec& q, int window, const RoadNetwork& net,
                                          const EmbeddingTable& emb,
                                          const CategoricalSchema& schema,
                                          const CatTables& tables, const NormStats& stats);

}  // namespace ecopinn
