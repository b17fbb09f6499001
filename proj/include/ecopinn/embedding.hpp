#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ecopinn/road_network.hpp"

namespace ecopinn {

struct WalkConfig {
  int dim = 32;
  int walk_length = 20;
  int walks_per_node = 10;
  int context_size = 10;
  double p = 1.0;
  double q = 1.0;
  int negatives_per_positive = 1;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;
};

struct EmbeddingTable {
  int dim = 32;
  std::map<SegmentId, Eigen::VectorXd> vectors;          // input matrix, the embedding
  std::map<SegmentId, Eigen::VectorXd> context_vectors;  // output matrix, training only

  const Eigen::VectorXd& at(SegmentId id) const;
};

using Walks = std::vector<std::vector<SegmentId>>;

/// Second-order biased walks (return bias 1/p, in-out bias 1/q). Per-walk RNG
/// is derived from (seed, start vertex, walk index), so walks are independent
/// of generation order. Walks truncate at vertices with no successor.
Walks generate_walks(const LineGraph& lg, const WalkConfig& cfg);

/// Skip-gram with negative sampling over the walk corpus; single-threaded SGD
/// with a linearly decaying learning rate. If epoch_losses is non-null it
/// receives one fixed-negative-sample corpus loss per epoch.
EmbeddingTable train_skipgram(const Walks& walks, const WalkConfig& cfg,
                              std::vector<double>* epoch_losses = nullptr);

/// Corpus negative-sampling objective with negatives drawn from a fixed seed,
/// so repeated calls are comparable.
double skipgram_loss(const EmbeddingTable& table, const Walks& walks, const WalkConfig& cfg,
                     std::uint64_t eval_seed);

EmbeddingTable train_node2vec(const LineGraph& lg, const WalkConfig& cfg);

/// CSV: segment_id,v0..v{dim-1}. Exact round-trip.
void save_embeddings(const EmbeddingTable& table, const std::string& path);
EmbeddingTable load_embeddings(const std::string& path);

/// Every segment must have a vector of the expected dimension.
void check_embeddings_cover(const EmbeddingTable& table, const RoadNetwork& net, int expected_dim);

}  // namespace ecopinn
