#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ecopinn/data.hpp"
#include "ecopinn/datagen.hpp"
#include "ecopinn/embedding.hpp"
#include "ecopinn/model.hpp"
#include "ecopinn/training.hpp"

namespace ecopinn {

/// Numeric bin widths for the lookup baseline, in raw feature units
/// (mass kg, speed limit km/h, length m, turn deg, direction deg, elevation m).
struct LookupBinWidths {
  std::array<double, kNumericDim> w = {10000, 10, 100, 45, 45, 10};
};

/// Per-segment average fuel-rate table keyed by exact categorical codes plus
/// floored numeric bin indices; misses fall back to the nearest bin by
/// Euclidean distance over the bin-index vector (categorical matches first,
/// ties broken by lowest key).
class LookupTable {
 public:
  struct Key {
    std::array<int, kNumCatFeatures> cat;  // raw codes, keyed exactly
    std::array<long, kNumericDim> num;     // floor(value / width)
    auto operator<=>(const Key&) const = default;
  };

  explicit LookupTable(LookupBinWidths widths = {}) : widths_(widths) {}

  static Key key_for(const RoadNetwork& net, const RoadSegment& seg, const RoadSegment* next,
                     const VehicleParams& vehicle, DepartureTime dep,
                     const LookupBinWidths& widths);

  /// Accumulate labeled queries: one (rate = fuel/length) sample per segment.
  void add_query(const RoadNetwork& net, const EteQuery& q);
  void build(const RoadNetwork& net, const std::vector<EteQuery>& labeled_queries);

  double rate_for(const Key& key) const;  // fuel units per meter, nearest-bin on miss
  double predict_query(const RoadNetwork& net, const EteQuery& q) const;

  std::size_t bin_count() const { return bins_.size(); }
  const std::map<Key, std::pair<double, long>>& bins() const { return bins_; }  // sum, count

 private:
  LookupBinWidths widths_;
  std::map<Key, std::pair<double, long>> bins_;
};

/// Path-level energy MAPE over a query set (near-zero truths excluded).
struct MapeResult {
  double mape = 0;
  int n = 0;
  int excluded = 0;
};
MapeResult mape_over(const std::vector<double>& pred, const std::vector<double>& truth);

/// method -> path length -> per-repeat MAPE values.
using MapeGrid = std::map<std::string, std::map<int, std::vector<double>>>;

struct ExperimentResult {
  MapeGrid mape;
  std::vector<std::string> notes;  // failed repeats, skipped buckets
  bool partial = false;
};

/// `method,path_len,mape_mean,mape_sd,n_repeats`; empty buckets emit n/a rows.
std::string report_csv(const ExperimentResult& r);

struct ExperimentConfig {
  DatagenConfig datagen;
  WalkConfig walks;
  ModelConfig model;
  TrainConfig train;
  LossWeights weights;

  int n_repeats = 3;
  double label_fraction = 0.05;
  std::uint64_t split_seed = 1;
  std::vector<int> test_lengths = {1, 10, 20, 50, 100, 200};
  int max_test_windows_per_trip = 2;
  std::size_t max_train_queries = 2000;  // deterministic subsample caps runtime
  std::size_t max_val_queries = 300;

  bool run_eco_pinn = true;
  bool run_nrel = true;
  bool run_fc = false;  // CI encoder + linear head ablation
  std::string log_dir;  // per-repeat training logs when nonempty
};

/// Shared artifacts so sweeps reuse one corpus.
struct ExperimentData {
  RoadNetwork net;
  std::vector<TripRecord> trips;
  SplitPlan split;
  EmbeddingTable embeddings;
  std::map<int, std::vector<EteQuery>> test_queries;
};
ExperimentData prepare_experiment(const ExperimentConfig& cfg);

/// Query sets, z-score stats and vocabularies for one split repeat.
struct RepeatData {
  std::vector<EteQuery> train_q, val_q;
  NormStats stats;
  CategoricalSchema schema;
};
RepeatData prepare_repeat(const RoadNetwork& net, const std::vector<TripRecord>& trips,
                          const SplitRepeat& rep, std::size_t max_train_queries,
                          std::size_t max_val_queries, std::uint64_t seed, int repeat_index);

/// Trains per repeat, evaluates each method on the shared test buckets.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data);
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Ablation sweeps; kind is one of omega_jerk, omega_e, window, decoder.
/// Returns long-format CSV `sweep,value,method,path_len,repeat,mape`.
std::string run_sweep(const ExperimentConfig& base, const ExperimentData& data,
                      const std::string& kind, const std::vector<double>& values);

}  // namespace ecopinn
