#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecopinn/data.hpp"
#include "ecopinn/model.hpp"

namespace ecopinn {

struct LossWeights {
  double omega_e = 0.2;
  double omega_t = 0.8;
  double omega_jerk = 1e-6;
  double huber_delta = 1.0;  // shared by both tasks (10 ml units / seconds)

  void validate() const;
};

struct TrainConfig {
  int batch_size = 512;
  double learning_rate = 1e-4;
  int patience = 10;
  int max_epochs = 200;
  std::uint64_t seed = 1;

  void validate() const;
};

/// MAPE denominators at or below this are excluded (and counted).
inline constexpr double kMapeEpsGuard = 1e-6;

double huber(double err, double delta);
/// |x| elementwise as relu(x) + relu(-x).
diff::Var abs_of(diff::Var x);
/// Elementwise Huber: 0.5 e^2 - 0.5 relu(|e| - delta)^2 (exact on both branches).
diff::Var huber_of(diff::Var err, double delta);

/// Mean over paths of |pred-true|/true, near-zero denominators excluded.
double path_mape(const std::vector<double>& pred, const std::vector<double>& truth,
                 int* excluded = nullptr);

/// Denominator bookkeeping for one mini-batch, fixed before any graph is built
/// so per-path contributions can be backpropagated independently.
struct BatchStats {
  int n_paths = 0;
  int n_energy_labeled = 0;  // paths with fuel labels
  int n_energy_mape = 0;     // of those, paths passing the eps guard
  int n_time_mape = 0;
  int mape_excluded = 0;
  bool zero_energy_labels = false;  // energy task contributed 0 this batch
};
BatchStats count_batch(const std::vector<const EteQuery*>& batch);

/// One path's share of the total batch loss (already divided by batch counts).
/// Terms with zero weight are never added to the graph.
diff::Var path_loss(const EcoPinnModel::Bound& b, const std::vector<SubpathTensor>& tensors,
                    const EteQuery& q, const RoadNetwork& net, const LossWeights& w,
                    const BatchStats& stats);

/// Whole-batch loss on a single tape (tests and micro-batches).
diff::Var batch_loss(const EcoPinnModel::Bound& b,
                     const std::vector<std::vector<SubpathTensor>>& tensors,
                     const std::vector<const EteQuery*>& batch, const RoadNetwork& net,
                     const LossWeights& w, BatchStats* stats_out = nullptr);

struct ValMetrics {
  double energy_mape = 0;  // +inf when no labeled paths survive the guard
  double time_mape = 0;
  int labeled_paths = 0;
  int excluded = 0;
};
ValMetrics validate_model(const EcoPinnModel& model, const RoadNetwork& net,
                          const EmbeddingTable& emb, const NormStats& stats,
                          const std::vector<EteQuery>& queries);

struct TrainingDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  int best_epoch = -1;
  int epochs_run = 0;
  double best_val_energy_mape = 0;
  double best_val_time_mape = 0;
  bool stopped_early = false;
};

/// Adam + early stopping on validation energy MAPE (time MAPE tiebreak).
/// On return the model holds the best epoch's parameters. Writes the log CSV
/// `epoch,train_loss,val_energy_mape,val_time_mape,stopped` when log_path is
/// nonempty. Throws TrainingDivergence on a NaN loss.
TrainResult train(EcoPinnModel& model, const RoadNetwork& net, const EmbeddingTable& emb,
                  const NormStats& stats, const std::vector<EteQuery>& train_queries,
                  const std::vector<EteQuery>& val_queries, const TrainConfig& cfg,
                  const LossWeights& weights, const std::string& log_path = "");

}  // namespace ecopinn
