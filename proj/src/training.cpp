#include "ecopinn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "ecopinn/textio.hpp"

namespace ecopinn {

using diff::Mat;
using diff::Tape;
using diff::Var;

void LossWeights::validate() const {
  if (omega_e < 0 || omega_t < 0 || omega_jerk < 0)
    throw std::invalid_argument("loss weights must be >= 0");
  if (huber_delta <= 0) throw std::invalid_argument("huber_delta must be > 0");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
}

double huber(double err, double delta) {
  const double a = std::abs(err);
  return a < delta ? 0.5 * err * err : delta * (a - 0.5 * delta);
}

Var abs_of(Var x) { return relu(x) + relu(x * x.tape->scalar(-1.0)); }

Var huber_of(Var err, double delta) {
  Tape& t = *err.tape;
  Var half = t.scalar(0.5);
  Var excess = relu(abs_of(err) - t.scalar(delta));
  return half * square(err) - half * square(excess);
}

double path_mape(const std::vector<double>& pred, const std::vector<double>& truth,
                 int* excluded) {
  if (pred.size() != truth.size()) throw std::invalid_argument("path_mape: size mismatch");
  double sum = 0;
  int n = 0, skipped = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] <= kMapeEpsGuard) {
      ++skipped;
      continue;
    }
    sum += std::abs(pred[i] - truth[i]) / truth[i];
    ++n;
  }
  if (excluded) *excluded = skipped;
  return n == 0 ? 0.0 : sum / n;
}

BatchStats count_batch(const std::vector<const EteQuery*>& batch) {
  BatchStats s;
  s.n_paths = static_cast<int>(batch.size());
  for (const EteQuery* q : batch) {
    if (q->has_fuel) {
      ++s.n_energy_labeled;
      if (q->path_fuel_units() > kMapeEpsGuard) ++s.n_energy_mape;
      else ++s.mape_excluded;
    }
    if (q->path_time_s() > kMapeEpsGuard) ++s.n_time_mape;
    else ++s.mape_excluded;
  }
  s.zero_energy_labels = s.n_energy_labeled == 0;
  return s;
}

Var path_loss(const EcoPinnModel::Bound& b, const std::vector<SubpathTensor>& tensors,
              const EteQuery& q, const RoadNetwork& net, const LossWeights& w,
              const BatchStats& stats) {
  Tape& t = *b.tape;
  auto preds = b.predict_query(tensors, q.vehicle, net);
  const int n_seg = static_cast<int>(preds.size());
  if (n_seg != static_cast<int>(q.seg_time_s.size()))
    throw std::invalid_argument("path_loss: label/prediction length mismatch");

  Var total = t.scalar(0.0);

  if (w.omega_e > 0 && q.has_fuel && stats.n_energy_labeled > 0) {
    Var what = preds[0].energy_fuel_units;
    Var seg_h = huber_of(preds[0].energy_fuel_units - t.scalar(q.seg_fuel_units[0]),
                         w.huber_delta);
    for (int i = 1; i < n_seg; ++i) {
      what = what + preds[i].energy_fuel_units;
      seg_h = seg_h + huber_of(preds[i].energy_fuel_units - t.scalar(q.seg_fuel_units[i]),
                               w.huber_delta);
    }
    const double truth = q.path_fuel_units();
    if (truth > kMapeEpsGuard && stats.n_energy_mape > 0)
      total = total + abs_of(what - t.scalar(truth)) *
                          t.scalar(w.omega_e / (truth * stats.n_energy_mape));
    total = total + seg_h * t.scalar(w.omega_e / (n_seg * stats.n_energy_labeled));
  }

  if (w.omega_t > 0) {
    Var that = preds[0].time_s;
    Var seg_h = huber_of(preds[0].time_s - t.scalar(q.seg_time_s[0]), w.huber_delta);
    for (int i = 1; i < n_seg; ++i) {
      that = that + preds[i].time_s;
      seg_h = seg_h + huber_of(preds[i].time_s - t.scalar(q.seg_time_s[i]), w.huber_delta);
    }
    const double truth = q.path_time_s();
    if (truth > kMapeEpsGuard && stats.n_time_mape > 0)
      total = total + abs_of(that - t.scalar(truth)) *
                          t.scalar(w.omega_t / (truth * stats.n_time_mape));
    total = total + seg_h * t.scalar(w.omega_t / (n_seg * stats.n_paths));
  }

  if (w.omega_jerk > 0) {
    Var pen = sum(square(preds[0].jerk_profile));
    for (int i = 1; i < n_seg; ++i) pen = pen + sum(square(preds[i].jerk_profile));
    total = total + pen * t.scalar(w.omega_jerk / (n_seg * stats.n_paths));
  }

  return total;
}

Var batch_loss(const EcoPinnModel::Bound& b, const std::vector<std::vector<SubpathTensor>>& tensors,
               const std::vector<const EteQuery*>& batch, const RoadNetwork& net,
               const LossWeights& w, BatchStats* stats_out) {
  if (tensors.size() != batch.size()) throw std::invalid_argument("batch_loss: size mismatch");
  BatchStats stats = count_batch(batch);
  if (stats_out) *stats_out = stats;
  Var total = b.tape->scalar(0.0);
  for (std::size_t i = 0; i < batch.size(); ++i)
    total = total + path_loss(b, tensors[i], *batch[i], net, w, stats);
  return total;
}

ValMetrics validate_model(const EcoPinnModel& model, const RoadNetwork& net,
                          const EmbeddingTable& emb, const NormStats& stats,
                          const std::vector<EteQuery>& queries) {
  ValMetrics m;
  std::vector<double> e_pred, e_true, t_pred, t_true;
  for (const auto& q : queries) {
    auto [e, t] = model.predict_path(net, q.spec(), emb, stats);
    t_pred.push_back(t);
    t_true.push_back(q.path_time_s());
    if (q.has_fuel) {
      e_pred.push_back(e);
      e_true.push_back(q.path_fuel_units());
    }
  }
  int skip_e = 0, skip_t = 0;
  m.time_mape = path_mape(t_pred, t_true, &skip_t);
  m.labeled_paths = static_cast<int>(e_pred.size());
  double emape = path_mape(e_pred, e_true, &skip_e);
  m.energy_mape = (m.labeled_paths - skip_e) == 0
                      ? std::numeric_limits<double>::infinity()
                      : emape;
  m.excluded = skip_e + skip_t;
  return m;
}

namespace {

bool improves(double e, double t, double best_e, double best_t) {
  if (e < best_e) return true;
  if (e > best_e) return false;
  return t < best_t;  // also handles inf == inf
}

}  // namespace

TrainResult train(EcoPinnModel& model, const RoadNetwork& net, const EmbeddingTable& emb,
                  const NormStats& stats, const std::vector<EteQuery>& train_queries,
                  const std::vector<EteQuery>& val_queries, const TrainConfig& cfg,
                  const LossWeights& weights, const std::string& log_path) {
  cfg.validate();
  weights.validate();
  if (train_queries.empty()) throw std::invalid_argument("train: no training queries");

  auto trainable = model.trainable();
  diff::Adam opt(trainable, {cfg.learning_rate, 0.9, 0.999, 1e-8});
  const CatTables tables = model.cat_tables();  // graph reads tables via params; values here
                                                // only fill the inert X columns

  std::vector<int> order(train_queries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937_64 rng(cfg.seed);

  TrainResult res;
  double best_e = std::numeric_limits<double>::infinity();
  double best_t = std::numeric_limits<double>::infinity();
  std::map<std::string, Mat> best_params;
  int since_best = 0;
  std::string log = "epoch,train_loss,val_energy_mape,val_time_mape,stopped\n";

  Tape tape;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    int loss_paths = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      std::vector<const EteQuery*> batch;
      for (std::size_t i = b0; i < b1; ++i) batch.push_back(&train_queries[order[i]]);
      const BatchStats bs = count_batch(batch);

      opt.zero_grad();
      double batch_total = 0;
      for (const EteQuery* q : batch) {
        tape.clear();
        auto bound = model.bind(tape);
        auto tensors = build_subpaths(q->spec(), model.config().window, net, emb,
                                      model.schema(), tables, stats);
        Var contrib = path_loss(bound, tensors, *q, net, weights, bs);
        const double v = tape.value(contrib)(0, 0);
        if (!std::isfinite(v)) {
          std::ostringstream os;
          os << "training diverged: non-finite loss at epoch " << epoch << ", trip "
             << q->trip_id << " window start " << q->start;
          throw TrainingDivergence(os.str());
        }
        batch_total += v;
        tape.backward(contrib);
      }
      opt.step();
      loss_sum += batch_total * static_cast<double>(batch.size());
      loss_paths += static_cast<int>(batch.size());
    }
    const double train_loss = loss_sum / loss_paths;  // mean per-batch loss, path-weighted

    ValMetrics vm = validate_model(model, net, emb, stats, val_queries);
    res.epochs_run = epoch + 1;

    bool stopping = false;
    if (improves(vm.energy_mape, vm.time_mape, best_e, best_t)) {
      best_e = vm.energy_mape;
      best_t = vm.time_mape;
      res.best_epoch = epoch;
      since_best = 0;
      best_params.clear();
      for (const auto& [name, p] : model.params().map()) best_params[name] = p->value;
    } else if (++since_best >= cfg.patience) {
      stopping = true;
    }
    log += std::to_string(epoch) + "," + fmt_double(train_loss) + "," +
           fmt_double(vm.energy_mape) + "," + fmt_double(vm.time_mape) + "," +
           (stopping ? "1" : "0") + "\n";
    if (stopping) {
      res.stopped_early = true;
      break;
    }
  }

  if (!best_params.empty())
    for (const auto& [name, value] : best_params) model.params().at(name).value = value;
  res.best_val_energy_mape = best_e;
  res.best_val_time_mape = best_t;
  if (!log_path.empty()) write_file(log_path, log);
  return res;
}

}  // namespace ecopinn
