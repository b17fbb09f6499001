#include "ecopinn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "ecopinn/textio.hpp"

namespace ecopinn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 0x1234567ULL));
}

}  // namespace

LookupTable::Key LookupTable::key_for(const RoadNetwork& net, const RoadSegment& seg,
                                      const RoadSegment* next, const VehicleParams& vehicle,
                                      DepartureTime dep, const LookupBinWidths& widths) {
  Key k;
  k.cat = {seg.road_type,   seg.start_ep_type, seg.end_ep_type, seg.lane_count,
           seg.is_bridge ? 1 : 0, dep.day,     dep.slot};
  auto raw = raw_numeric_features(net, seg, next, vehicle);
  for (int i = 0; i < kNumericDim; ++i)
    k.num[i] = static_cast<long>(std::floor(raw[i] / widths.w[i]));
  return k;
}

void LookupTable::add_query(const RoadNetwork& net, const EteQuery& q) {
  if (!q.has_fuel) throw std::invalid_argument("LookupTable: query has no fuel labels");
  const int n = static_cast<int>(q.path.size());
  for (int i = 0; i < n; ++i) {
    const auto& seg = net.segment(q.path[i]);
    const RoadSegment* next = i + 1 < n ? &net.segment(q.path[i + 1]) : nullptr;
    Key k = key_for(net, seg, next, q.vehicle, q.departure, widths_);
    auto& [sum, count] = bins_[k];
    sum += q.seg_fuel_units[i] / seg.length_m;
    ++count;
  }
}

void LookupTable::build(const RoadNetwork& net, const std::vector<EteQuery>& labeled_queries) {
  for (const auto& q : labeled_queries) add_query(net, q);
  if (bins_.empty()) throw std::invalid_argument("LookupTable: no labeled segments");
}

double LookupTable::rate_for(const Key& key) const {
  if (bins_.empty()) throw std::logic_error("LookupTable: empty");
  auto it = bins_.find(key);
  if (it != bins_.end()) return it->second.first / it->second.second;

  // nearest bin by numeric-bin-index distance; same categorical key preferred,
  // global fallback otherwise; map order breaks ties at the lowest key
  auto dist2 = [&](const Key& k) {
    double d = 0;
    for (int i = 0; i < kNumericDim; ++i) {
      const double e = static_cast<double>(k.num[i] - key.num[i]);
      d += e * e;
    }
    return d;
  };
  const std::map<Key, std::pair<double, long>>::const_iterator none = bins_.end();
  auto best = none;
  double best_d = 0;
  for (int pass = 0; pass < 2 && best == none; ++pass) {
    for (auto jt = bins_.begin(); jt != bins_.end(); ++jt) {
      if (pass == 0 && jt->first.cat != key.cat) continue;
      const double d = dist2(jt->first);
      if (best == none || d < best_d) {
        best = jt;
        best_d = d;
      }
    }
  }
  return best->second.first / best->second.second;
}

double LookupTable::predict_query(const RoadNetwork& net, const EteQuery& q) const {
  const int n = static_cast<int>(q.path.size());
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const auto& seg = net.segment(q.path[i]);
    const RoadSegment* next = i + 1 < n ? &net.segment(q.path[i + 1]) : nullptr;
    total += rate_for(key_for(net, seg, next, q.vehicle, q.departure, widths_)) * seg.length_m;
  }
  return total;
}

MapeResult mape_over(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("mape_over: size mismatch");
  MapeResult r;
  double sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] <= kMapeEpsGuard) {
      ++r.excluded;
      continue;
    }
    sum += std::abs(pred[i] - truth[i]) / truth[i];
    ++r.n;
  }
  r.mape = r.n == 0 ? 0.0 : sum / r.n;
  return r;
}

std::string report_csv(const ExperimentResult& r) {
  std::string out = "method,path_len,mape_mean,mape_sd,n_repeats\n";
  for (const auto& [method, by_len] : r.mape) {
    for (const auto& [len, vals] : by_len) {
      out += method + "," + std::to_string(len) + ",";
      if (vals.empty()) {
        out += "n/a,n/a,0\n";
        continue;
      }
      double mean = 0;
      for (double v : vals) mean += v;
      mean /= vals.size();
      double sd = 0;
      if (vals.size() > 1) {
        for (double v : vals) sd += (v - mean) * (v - mean);
        sd = std::sqrt(sd / (vals.size() - 1));
      }
      out += fmt_double(mean) + "," + fmt_double(sd) + "," + std::to_string(vals.size()) + "\n";
    }
  }
  return out;
}

ExperimentData prepare_experiment(const ExperimentConfig& cfg) {
  ExperimentData d;
  d.net = gen_network(cfg.datagen.rows, cfg.datagen.cols, cfg.datagen.seed, cfg.datagen);
  auto sims = generate_trips(d.net, cfg.datagen);
  for (auto& s : sims) d.trips.push_back(std::move(s.record));
  d.split = make_split(d.trips, cfg.split_seed, cfg.n_repeats, cfg.label_fraction);
  WalkConfig wc = cfg.walks;
  d.embeddings = train_node2vec(line_graph(d.net), wc);
  d.test_queries = make_test_queries(d.trips, d.split.test_trip_ids, cfg.test_lengths,
                                     cfg.max_test_windows_per_trip);
  return d;
}

namespace {

std::vector<EteQuery> cap_queries(std::vector<EteQuery> qs, std::size_t cap,
                                  std::uint64_t seed) {
  if (qs.size() <= cap) return qs;
  std::mt19937_64 rng(seed);
  std::shuffle(qs.begin(), qs.end(), rng);
  qs.resize(cap);
  return qs;
}

void eval_model(const EcoPinnModel& model, const ExperimentData& data, const NormStats& stats,
                const std::string& method, int repeat, ExperimentResult& out) {
  for (const auto& [len, qs] : data.test_queries) {
    if (qs.empty()) continue;
    std::vector<double> pred, truth;
    for (const auto& q : qs) {
      auto [e, t] = model.predict_path(data.net, q.spec(), data.embeddings, stats);
      (void)t;
      pred.push_back(e);
      truth.push_back(q.path_fuel_units());
    }
    auto m = mape_over(pred, truth);
    if (m.n > 0) out.mape[method][len].push_back(m.mape);
    (void)repeat;
  }
}

}  // namespace

RepeatData prepare_repeat(const RoadNetwork& net, const std::vector<TripRecord>& trips,
                          const SplitRepeat& rep, std::size_t max_train_queries,
                          std::size_t max_val_queries, std::uint64_t seed, int repeat_index) {
  RepeatData d;
  d.train_q = cap_queries(make_queries(trips, rep.train_ids, rep.energy_labeled_ids),
                          max_train_queries, derive_seed(seed, 0xCA9ULL, repeat_index));
  d.val_q = cap_queries(make_queries(trips, rep.val_ids, rep.energy_labeled_ids),
                        max_val_queries, derive_seed(seed, 0x7A1ULL, repeat_index));

  std::set<long> train_ids(rep.train_ids.begin(), rep.train_ids.end());
  std::vector<Eigen::Matrix<double, kNumericDim, 1>> rows;
  std::set<SegmentId> seen;
  for (const auto& t : trips) {
    if (!train_ids.count(t.trip_id)) continue;
    const int n = static_cast<int>(t.path.size());
    for (int i = 0; i < n; ++i) {
      const auto& seg = net.segment(t.path[i]);
      const RoadSegment* next = i + 1 < n ? &net.segment(t.path[i + 1]) : nullptr;
      rows.push_back(raw_numeric_features(net, seg, next, t.vehicle));
      seen.insert(t.path[i]);
    }
  }
  d.stats = NormStats::compute(rows);
  d.schema = CategoricalSchema::build(net, {seen.begin(), seen.end()});
  return d;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data) {
  ExperimentResult out;
  std::vector<std::string> methods;
  if (cfg.run_eco_pinn) methods.push_back("eco_pinn");
  if (cfg.run_fc) methods.push_back("ci_encoder_fc");
  if (cfg.run_nrel) methods.push_back("nrel_lookup");
  for (const auto& m : methods)
    for (int len : cfg.test_lengths) out.mape[m][len];  // ensure n/a rows for empty buckets

  const int n_repeats =
      std::min<int>(cfg.n_repeats, static_cast<int>(data.split.repeats.size()));
  for (int r = 0; r < n_repeats; ++r) {
    const auto& rep = data.split.repeats[r];
    try {
      RepeatData rd = prepare_repeat(data.net, data.trips, rep, cfg.max_train_queries,
                                     cfg.max_val_queries, cfg.split_seed, r);
      const auto& train_q = rd.train_q;
      const auto& val_q = rd.val_q;
      const NormStats& stats = rd.stats;
      const CategoricalSchema& schema = rd.schema;

      auto train_one = [&](DecoderKind decoder, const std::string& method) {
        ModelConfig mc = cfg.model;
        mc.decoder = decoder;
        mc.init_seed = derive_seed(cfg.split_seed, 0x3D5ULL, r);
        EcoPinnModel model(mc, schema);
        std::string log;
        if (!cfg.log_dir.empty())
          log = cfg.log_dir + "/train_" + method + "_r" + std::to_string(r) + ".csv";
        train(model, data.net, data.embeddings, stats, train_q, val_q, cfg.train, cfg.weights,
              log);
        eval_model(model, data, stats, method, r, out);
      };
      if (cfg.run_eco_pinn) train_one(DecoderKind::kPhysics, "eco_pinn");
      if (cfg.run_fc) train_one(DecoderKind::kFc, "ci_encoder_fc");

      if (cfg.run_nrel) {
        std::vector<EteQuery> labeled;
        for (const auto& q : train_q)
          if (q.has_fuel) labeled.push_back(q);
        if (labeled.empty()) {
          out.notes.push_back("repeat " + std::to_string(r) + ": no labeled queries for nrel");
          out.partial = true;
        } else {
          LookupTable table;
          table.build(data.net, labeled);
          for (const auto& [len, qs] : data.test_queries) {
            if (qs.empty()) continue;
            std::vector<double> pred, truth;
            for (const auto& q : qs) {
              pred.push_back(table.predict_query(data.net, q));
              truth.push_back(q.path_fuel_units());
            }
            auto m = mape_over(pred, truth);
            if (m.n > 0) out.mape["nrel_lookup"][len].push_back(m.mape);
          }
        }
      }
    } catch (const std::exception& e) {
      out.notes.push_back("repeat " + std::to_string(r) + " failed: " + e.what());
      out.partial = true;
    }
  }
  for (const auto& [len, qs] : data.test_queries)
    if (qs.empty()) out.notes.push_back("length " + std::to_string(len) + ": empty bucket");
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, prepare_experiment(cfg));
}

std::string run_sweep(const ExperimentConfig& base, const ExperimentData& data,
                      const std::string& kind, const std::vector<double>& values) {
  std::string out = "sweep,value,method,path_len,repeat,mape\n";
  for (double v : values) {
    ExperimentConfig cfg = base;
    if (kind == "omega_jerk") {
      cfg.weights.omega_jerk = v;
    } else if (kind == "omega_e") {
      cfg.weights.omega_e = v;
      cfg.weights.omega_t = 1.0 - v;
    } else if (kind == "window") {
      cfg.model.window = static_cast<int>(v);
    } else if (kind == "decoder") {
      cfg.run_fc = v != 0;
      cfg.run_eco_pinn = v == 0;
    } else {
      throw std::invalid_argument("run_sweep: unknown kind " + kind);
    }
    auto res = run_experiment(cfg, data);
    for (const auto& [method, by_len] : res.mape)
      for (const auto& [len, vals] : by_len)
        for (std::size_t rep = 0; rep < vals.size(); ++rep)
          out += kind + "," + fmt_double(v) + "," + method + "," + std::to_string(len) + "," +
                 std::to_string(rep) + "," + fmt_double(vals[rep]) + "\n";
  }
  return out;
}

}  // namespace ecopinn
