#include "ecopinn/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "ecopinn/textio.hpp"

namespace ecopinn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 0x1234567ULL));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

bool has_edge(const LineGraph& lg, SegmentId a, SegmentId b) {
  auto it = lg.find(a);
  if (it == lg.end()) return false;
  return std::binary_search(it->second.begin(), it->second.end(), b);
}

}  // namespace

const Eigen::VectorXd& EmbeddingTable::at(SegmentId id) const {
  auto it = vectors.find(id);
  if (it == vectors.end())
    throw std::out_of_range("no embedding for segment " + std::to_string(id));
  return it->second;
}

Walks generate_walks(const LineGraph& lg, const WalkConfig& cfg) {
  if (lg.empty()) throw std::invalid_argument("generate_walks: empty graph");
  if (cfg.p <= 0 || cfg.q <= 0) throw std::invalid_argument("generate_walks: p,q must be > 0");
  Walks walks;
  walks.reserve(lg.size() * cfg.walks_per_node);
  std::vector<double> weights;
  for (const auto& [start, succ0] : lg) {
    for (int k = 0; k < cfg.walks_per_node; ++k) {
      std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(start), k));
      std::vector<SegmentId> walk = {start};
      while (static_cast<int>(walk.size()) < cfg.walk_length) {
        SegmentId cur = walk.back();
        const auto& succ = lg.at(cur);
        if (succ.empty()) break;
        SegmentId next;
        if (walk.size() == 1) {
          std::uniform_int_distribution<std::size_t> pick(0, succ.size() - 1);
          next = succ[pick(rng)];
        } else {
          SegmentId prev = walk[walk.size() - 2];
          weights.clear();
          double total = 0;
          for (SegmentId cand : succ) {
            double w;
            if (cand == prev) w = 1.0 / cfg.p;
            else if (has_edge(lg, prev, cand)) w = 1.0;
            else w = 1.0 / cfg.q;
            weights.push_back(w);
            total += w;
          }
          std::uniform_real_distribution<double> u(0.0, total);
          double r = u(rng);
          std::size_t j = 0;
          for (; j + 1 < weights.size(); ++j) {
            if (r < weights[j]) break;
            r -= weights[j];
          }
          next = succ[j];
        }
        walk.push_back(next);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

namespace {

struct Vocab {
  std::vector<SegmentId> ids;                      // index -> id, sorted
  std::map<SegmentId, int> index;                  // id -> index
  std::vector<double> neg_cdf;                     // unigram^0.75 cumulative
};

Vocab build_vocab(const Walks& walks) {
  Vocab v;
  std::map<SegmentId, std::int64_t> counts;
  for (const auto& w : walks)
    for (SegmentId id : w) counts[id]++;
  double total = 0;
  for (const auto& [id, c] : counts) {
    v.index[id] = static_cast<int>(v.ids.size());
    v.ids.push_back(id);
    total += std::pow(static_cast<double>(c), 0.75);
    v.neg_cdf.push_back(total);
  }
  for (auto& x : v.neg_cdf) x /= total;
  return v;
}

int sample_negative(const Vocab& v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  auto it = std::lower_bound(v.neg_cdf.begin(), v.neg_cdf.end(), r);
  return static_cast<int>(std::min<std::ptrdiff_t>(it - v.neg_cdf.begin(),
                                                   static_cast<std::ptrdiff_t>(v.ids.size()) - 1));
}

}  // namespace

EmbeddingTable train_skipgram(const Walks& walks, const WalkConfig& cfg,
                              std::vector<double>* epoch_losses) {
  if (walks.empty()) throw std::invalid_argument("train_skipgram: no walks");
  Vocab vocab = build_vocab(walks);
  const int n = static_cast<int>(vocab.ids.size());
  const int dim = cfg.dim;

  Eigen::MatrixXd in(n, dim), out = Eigen::MatrixXd::Zero(n, dim);
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xE11BEDULL, 0));
    std::uniform_real_distribution<double> u(-0.5 / dim, 0.5 / dim);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < dim; ++d) in(i, d) = u(rng);
  }

  std::int64_t centers_total = 0;
  for (const auto& w : walks) centers_total += static_cast<std::int64_t>(w.size());
  const double total_steps = static_cast<double>(centers_total) * cfg.epochs;

  auto snapshot = [&]() {
    EmbeddingTable t;
    t.dim = dim;
    for (int i = 0; i < n; ++i) {
      t.vectors[vocab.ids[i]] = in.row(i);
      t.context_vectors[vocab.ids[i]] = out.row(i);
    }
    return t;
  };

  std::mt19937_64 neg_rng(derive_seed(cfg.seed, 0x9E6A71FULL, 1));
  std::int64_t done = 0;
  Eigen::VectorXd acc(dim);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& walk : walks) {
      const int len = static_cast<int>(walk.size());
      for (int i = 0; i < len; ++i, ++done) {
        const double lr =
            std::max(cfg.learning_rate * (1.0 - static_cast<double>(done) / total_steps),
                     cfg.learning_rate * 1e-4);
        const int ci = vocab.index.at(walk[i]);
        acc.setZero();
        bool touched = false;
        const int lo = std::max(0, i - cfg.context_size);
        const int hi = std::min(len - 1, i + cfg.context_size);
        for (int j = lo; j <= hi; ++j) {
          if (j == i) continue;
          touched = true;
          const int oi = vocab.index.at(walk[j]);
          // positive pair
          double g = sigmoid(in.row(ci).dot(out.row(oi))) - 1.0;
          acc += g * out.row(oi);
          out.row(oi) -= lr * g * in.row(ci);
          for (int k = 0; k < cfg.negatives_per_positive; ++k) {
            const int ni = sample_negative(vocab, neg_rng);
            if (ni == ci) continue;
            double gn = sigmoid(in.row(ci).dot(out.row(ni)));
            acc += gn * out.row(ni);
            out.row(ni) -= lr * gn * in.row(ci);
          }
        }
        if (touched) in.row(ci) -= lr * acc;
      }
    }
    if (epoch_losses) {
      auto t = snapshot();
      epoch_losses->push_back(skipgram_loss(t, walks, cfg, derive_seed(cfg.seed, 0xEA1ULL, 2)));
    }
  }
  return snapshot();
}

double skipgram_loss(const EmbeddingTable& table, const Walks& walks, const WalkConfig& cfg,
                     std::uint64_t eval_seed) {
  Vocab vocab = build_vocab(walks);
  std::mt19937_64 rng(eval_seed);
  double loss = 0;
  std::int64_t pairs = 0;
  for (const auto& walk : walks) {
    const int len = static_cast<int>(walk.size());
    for (int i = 0; i < len; ++i) {
      const auto& u = table.at(walk[i]);
      const int lo = std::max(0, i - cfg.context_size);
      const int hi = std::min(len - 1, i + cfg.context_size);
      for (int j = lo; j <= hi; ++j) {
        if (j == i) continue;
        const auto& v = table.context_vectors.at(walk[j]);
        loss -= std::log(std::max(sigmoid(u.dot(v)), 1e-12));
        for (int k = 0; k < cfg.negatives_per_positive; ++k) {
          const int ni = sample_negative(vocab, rng);
          const auto& vn = table.context_vectors.at(vocab.ids[ni]);
          loss -= std::log(std::max(sigmoid(-u.dot(vn)), 1e-12));
        }
        ++pairs;
      }
    }
  }
  return pairs ? loss / static_cast<double>(pairs) : 0.0;
}

EmbeddingTable train_node2vec(const LineGraph& lg, const WalkConfig& cfg) {
  return train_skipgram(generate_walks(lg, cfg), cfg);
}

void save_embeddings(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "segment_id";
  for (int d = 0; d < table.dim; ++d) out << ",v" << d;
  out << "\n";
  for (const auto& [id, vec] : table.vectors) {
    out << id;
    for (int d = 0; d < table.dim; ++d) out << ',' << fmt_double(vec[d]);
    out << "\n";
  }
}

EmbeddingTable load_embeddings(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error(path + ": empty embedding file");
  auto header = split_csv(lines[0]);
  if (header.size() < 2 || header[0] != "segment_id")
    throw std::runtime_error(path + ": bad embedding header");
  EmbeddingTable t;
  t.dim = static_cast<int>(header.size()) - 1;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv(lines[i]);
    if (static_cast<int>(f.size()) != t.dim + 1)
      throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": wrong field count");
    SegmentId id = parse_int(f[0], path);
    Eigen::VectorXd v(t.dim);
    for (int d = 0; d < t.dim; ++d) v[d] = parse_double(f[d + 1], path);
    if (!v.allFinite()) throw std::runtime_error(path + ": non-finite embedding for segment " +
                                                 std::to_string(id));
    t.vectors[id] = std::move(v);
  }
  return t;
}

void check_embeddings_cover(const EmbeddingTable& table, const RoadNetwork& net,
                            int expected_dim) {
  if (table.dim != expected_dim)
    throw std::runtime_error("embedding dim " + std::to_string(table.dim) + " != expected " +
                             std::to_string(expected_dim));
  for (const auto& s : net.segments())
    if (!table.vectors.count(s.id))
      throw std::runtime_error("missing embedding for segment " + std::to_string(s.id));
}

}  // namespace ecopinn
