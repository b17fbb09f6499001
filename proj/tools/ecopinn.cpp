#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>

#include "ecopinn/config.hpp"
#include "ecopinn/datagen.hpp"
#include "ecopinn/embedding.hpp"
#include "ecopinn/evaluation.hpp"
#include "ecopinn/model.hpp"
#include "ecopinn/textio.hpp"
#include "ecopinn/training.hpp"

namespace fs = std::filesystem;
using namespace ecopinn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

/// One subcommand's configuration: built-in defaults, then an optional
/// key=value config file, then command-line flags (flags win).
struct SubConfig {
  CLI::App* app = nullptr;
  KvConfig defaults;
  std::string config_file;
  std::string out_root = "runs";
  std::map<std::string, std::string> flag_values;

  void add_key(const std::string& key, const std::string& default_value,
               const std::string& help) {
    if (defaults.has(key)) return;  // shared key (e.g. one seed for the whole sweep)
    defaults.set(key, default_value);
    app->add_option_function<std::string>(
        "--" + key, [this, key](const std::string& v) { flag_values[key] = v; },
        help + (default_value.empty() ? "" : " [" + default_value + "]"));
  }

  void add_common(CLI::App& parent, const std::string& name, const std::string& desc) {
    app = parent.add_subcommand(name, desc);
    app->add_option("--config", config_file, "key=value config file");
    app->add_option("--out", out_root, "output root directory [runs]");
  }

  /// Merged effective config; rejects keys outside the declared set.
  KvConfig effective() const {
    KvConfig kv = defaults;
    std::set<std::string> allowed;
    for (const auto& [k, v] : defaults.values()) allowed.insert(k);
    if (!config_file.empty()) {
      KvConfig file = KvConfig::load_file(config_file);
      file.restrict_to(allowed);
      for (const auto& [k, v] : file.values()) kv.set(k, v);
    }
    for (const auto& [k, v] : flag_values) kv.set(k, v);
    return kv;
  }

  /// Creates the run directory (named by config hash) and echoes the config.
  fs::path make_run_dir(const std::string& sub, const KvConfig& kv) const {
    fs::path dir = fs::path(out_root) / (sub + "-" + kv.hash());
    fs::create_directories(dir);
    write_file((dir / "config.txt").string(), kv.canonical());
    return dir;
  }
};

std::string require(const KvConfig& kv, const std::string& key) {
  std::string v = kv.get_str(key, "");
  if (v.empty()) throw std::invalid_argument("missing required config key: " + key);
  return v;
}

std::vector<int> parse_lengths(const std::string& csv) {
  std::vector<int> out;
  for (const auto& tok : split_csv(csv))
    out.push_back(static_cast<int>(parse_int(tok, "lengths")));
  if (out.empty()) throw std::invalid_argument("lengths: empty list");
  return out;
}

DecoderKind parse_decoder(const std::string& s) {
  if (s == "physics") return DecoderKind::kPhysics;
  if (s == "fc") return DecoderKind::kFc;
  throw std::invalid_argument("decoder must be physics or fc, got " + s);
}

ElevationMode parse_elevation(const std::string& s) {
  if (s == "grade_rate") return ElevationMode::kGradeRate;
  if (s == "literal") return ElevationMode::kLiteral;
  throw std::invalid_argument("elevation must be grade_rate or literal, got " + s);
}

struct DataDir {
  RoadNetwork net;
  std::vector<TripRecord> trips;
  SplitPlan split;
};

DataDir load_data_dir(const std::string& dir) {
  DataDir d;
  d.net = load_network(dir + "/nodes.csv", dir + "/segments.csv");
  d.trips = load_trips(dir + "/trips.jsonl");
  d.split = SplitPlan::load(dir + "/split.json");
  return d;
}

void add_datagen_keys(SubConfig& sc) {
  sc.add_key("rows", "8", "grid rows");
  sc.add_key("cols", "8", "grid columns");
  sc.add_key("trips", "800", "number of simulated trips");
  sc.add_key("seed", "1", "generator seed");
  sc.add_key("n_repeats", "10", "train/validation split repeats");
  sc.add_key("label_fraction", "0.05", "fraction of trips with visible fuel labels");
  sc.add_key("split_seed", "1", "split plan seed");
}

DatagenConfig datagen_from(const KvConfig& kv) {
  DatagenConfig dg;
  dg.rows = static_cast<int>(kv.get_int("rows", 8));
  dg.cols = static_cast<int>(kv.get_int("cols", 8));
  dg.n_trips = static_cast<int>(kv.get_int("trips", 800));
  dg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  return dg;
}

void add_train_keys(SubConfig& sc) {
  sc.add_key("window", "1", "context window half-width w");
  sc.add_key("decoder", "physics", "physics | fc");
  sc.add_key("elevation", "grade_rate", "grade_rate | literal");
  sc.add_key("init_seed", "1", "parameter init seed");
  sc.add_key("batch_size", "512", "mini-batch size");
  sc.add_key("learning_rate", "0.0001", "Adam learning rate");
  sc.add_key("patience", "10", "early-stopping patience (epochs)");
  sc.add_key("max_epochs", "200", "epoch cap");
  sc.add_key("seed", "1", "shuffle seed");
  sc.add_key("omega_e", "0.2", "energy task weight");
  sc.add_key("omega_t", "0.8", "time task weight");
  sc.add_key("omega_jerk", "0.000001", "jerk penalty weight");
  sc.add_key("huber_delta", "1", "Huber threshold");
  sc.add_key("max_train_queries", "2000", "training query cap per repeat");
  sc.add_key("max_val_queries", "300", "validation query cap per repeat");
}

ModelConfig model_from(const KvConfig& kv) {
  ModelConfig mc;
  mc.window = static_cast<int>(kv.get_int("window", 1));
  mc.decoder = parse_decoder(kv.get_str("decoder", "physics"));
  mc.elevation = parse_elevation(kv.get_str("elevation", "grade_rate"));
  mc.init_seed = static_cast<std::uint64_t>(kv.get_int("init_seed", 1));
  return mc;
}

TrainConfig train_from(const KvConfig& kv) {
  TrainConfig tc;
  tc.batch_size = static_cast<int>(kv.get_int("batch_size", 512));
  tc.learning_rate = kv.get_double("learning_rate", 1e-4);
  tc.patience = static_cast<int>(kv.get_int("patience", 10));
  tc.max_epochs = static_cast<int>(kv.get_int("max_epochs", 200));
  tc.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  return tc;
}

LossWeights weights_from(const KvConfig& kv) {
  LossWeights w;
  w.omega_e = kv.get_double("omega_e", 0.2);
  w.omega_t = kv.get_double("omega_t", 0.8);
  w.omega_jerk = kv.get_double("omega_jerk", 1e-6);
  w.huber_delta = kv.get_double("huber_delta", 1.0);
  return w;
}

struct LoadedModel {
  EcoPinnModel model;
  EmbeddingTable embeddings;
  NormStats stats;
};

LoadedModel load_model(const KvConfig& kv, const RoadNetwork& net) {
  auto schema = CategoricalSchema::load(require(kv, "schema"));
  auto mc = ModelConfig::load(require(kv, "model_config"));
  LoadedModel lm{EcoPinnModel(mc, schema), load_embeddings(require(kv, "embeddings")),
                 NormStats::load(require(kv, "stats"))};
  lm.model.load_params(require(kv, "checkpoint"));
  check_embeddings_cover(lm.embeddings, net, kEmbeddingDim);
  return lm;
}

int cmd_gen_data(const SubConfig& sc) {
  KvConfig kv = sc.effective();
  auto dir = sc.make_run_dir("gen-data", kv);
  DatagenConfig dg = datagen_from(kv);
  auto net = gen_network(dg.rows, dg.cols, dg.seed, dg);
  auto sims = generate_trips(net, dg);
  std::vector<TripRecord> trips;
  for (auto& s : sims) trips.push_back(s.record);
  auto split = make_split(trips, static_cast<std::uint64_t>(kv.get_int("split_seed", 1)),
                          static_cast<int>(kv.get_int("n_repeats", 10)),
                          kv.get_double("label_fraction", 0.05));
  save_network(net, (dir / "nodes.csv").string(), (dir / "segments.csv").string());
  save_trips((dir / "trips.jsonl").string(), trips);
  save_profiles((dir / "profiles.jsonl").string(), sims);
  split.save((dir / "split.json").string());
  std::cout << dir.string() << "\n";
  return kExitOk;
}

int cmd_embed(const SubConfig& sc) {
  KvConfig kv = sc.effective();
  auto data_dir = require(kv, "data_dir");
  auto net = load_network(data_dir + "/nodes.csv", data_dir + "/segments.csv");
  WalkConfig wc;
  wc.walk_length = static_cast<int>(kv.get_int("walk_length", 20));
  wc.walks_per_node = static_cast<int>(kv.get_int("walks_per_node", 10));
  wc.context_size = static_cast<int>(kv.get_int("context_size", 10));
  wc.p = kv.get_double("p", 1.0);
  wc.q = kv.get_double("q", 1.0);
  wc.negatives_per_positive = static_cast<int>(kv.get_int("negatives", 1));
  wc.epochs = static_cast<int>(kv.get_int("epochs", 5));
  wc.learning_rate = kv.get_double("learning_rate", 0.025);
  wc.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  auto dir = sc.make_run_dir("embed", kv);
  auto emb = train_node2vec(line_graph(net), wc);
  save_embeddings(emb, (dir / "embeddings.csv").string());
  std::cout << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const SubConfig& sc) {
  KvConfig kv = sc.effective();
  auto dd = load_data_dir(require(kv, "data_dir"));
  auto emb = load_embeddings(require(kv, "embeddings"));
  check_embeddings_cover(emb, dd.net, kEmbeddingDim);
  const int repeat = static_cast<int>(kv.get_int("repeat", 0));
  if (repeat < 0 || repeat >= static_cast<int>(dd.split.repeats.size()))
    throw std::runtime_error("repeat " + std::to_string(repeat) + " not in split plan");

  auto rd = prepare_repeat(dd.net, dd.trips, dd.split.repeats[repeat],
                           static_cast<std::size_t>(kv.get_int("max_train_queries", 2000)),
                           static_cast<std::size_t>(kv.get_int("max_val_queries", 300)),
                           static_cast<std::uint64_t>(kv.get_int("seed", 1)), repeat);
  EcoPinnModel model(model_from(kv), rd.schema);
  auto dir = sc.make_run_dir("train", kv);
  auto res = train(model, dd.net, emb, rd.stats, rd.train_q, rd.val_q, train_from(kv),
                   weights_from(kv), (dir / "train_log.csv").string());
  model.save((dir / "checkpoint.txt").string(), (dir / "model_config.txt").string());
  rd.schema.save((dir / "schema.csv").string());
  rd.stats.save((dir / "stats.csv").string());
  std::cout << dir.string() << "\n"
            << "best_epoch=" << res.best_epoch
            << " val_energy_mape=" << fmt_double(res.best_val_energy_mape)
            << " val_time_mape=" << fmt_double(res.best_val_time_mape) << "\n";
  return kExitOk;
}

int cmd_evaluate(const SubConfig& sc) {
  KvConfig kv = sc.effective();
  auto dd = load_data_dir(require(kv, "data_dir"));
  auto lm = load_model(kv, dd.net);
  auto lengths = parse_lengths(kv.get_str("lengths", "1,10,20,50,100,200"));
  auto test_q = make_test_queries(dd.trips, dd.split.test_trip_ids, lengths,
                                  static_cast<int>(kv.get_int("max_test_windows", 2)));
  ExperimentResult res;
  const std::string method = kv.get_str("method", "eco_pinn");
  for (int len : lengths) res.mape[method][len];
  for (const auto& [len, qs] : test_q) {
    std::vector<double> pred, truth;
    for (const auto& q : qs) {
      auto [e, t] = lm.model.predict_path(dd.net, q.spec(), lm.embeddings, lm.stats);
      (void)t;
      pred.push_back(e);
      truth.push_back(q.path_fuel_units());
    }
    auto m = mape_over(pred, truth);
    if (m.n > 0) res.mape[method][len].push_back(m.mape);
  }
  auto dir = sc.make_run_dir("evaluate", kv);
  write_file((dir / "report.csv").string(), report_csv(res));
  std::cout << dir.string() << "\n" << report_csv(res);
  return kExitOk;
}

int cmd_baseline(const SubConfig& sc) {
  KvConfig kv = sc.effective();
  auto dd = load_data_dir(require(kv, "data_dir"));
  const int repeat = static_cast<int>(kv.get_int("repeat", 0));
  if (repeat < 0 || repeat >= static_cast<int>(dd.split.repeats.size()))
    throw std::runtime_error("repeat " + std::to_string(repeat) + " not in split plan");
  const auto& rep = dd.split.repeats[repeat];
  auto train_q = make_queries(dd.trips, rep.train_ids, rep.energy_labeled_ids);
  std::vector<EteQuery> labeled;
  for (const auto& q : train_q)
    if (q.has_fuel) labeled.push_back(q);
  LookupTable table;
  table.build(dd.net, labeled);
  auto lengths = parse_lengths(kv.get_str("lengths", "1,10,20,50,100,200"));
  auto test_q = make_test_queries(dd.trips, dd.split.test_trip_ids, lengths,
                                  static_cast<int>(kv.get_int("max_test_windows", 2)));
  ExperimentResult res;
  for (int len : lengths) res.mape["nrel_lookup"][len];
  for (const auto& [len, qs] : test_q) {
    std::vector<double> pred, truth;
    for (const auto& q : qs) {
      pred.push_back(table.predict_query(dd.net, q));
      truth.push_back(q.path_fuel_units());
    }
    auto m = mape_over(pred, truth);
    if (m.n > 0) res.mape["nrel_lookup"][len].push_back(m.mape);
  }
  auto dir = sc.make_run_dir("baseline", kv);
  write_file((dir / "report.csv").string(), report_csv(res));
  std::cout << dir.string() << "\n" << report_csv(res);
  return kExitOk;
}

int cmd_predict(const SubConfig& sc) {
  KvConfig kv = sc.effective();
  auto data_dir = require(kv, "data_dir");
  auto net = load_network(data_dir + "/nodes.csv", data_dir + "/segments.csv");
  auto lm = load_model(kv, net);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& line : read_lines(require(kv, "queries"))) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    QuerySpec q;
    q.path = j.at("path").get<std::vector<SegmentId>>();
    q.departure.day = j.at("day").get<int>();
    q.departure.slot = j.at("slot").get<int>();
    if (j.contains("mass_kg")) q.vehicle.mass_kg = j.at("mass_kg").get<double>();
    auto [e, t] = lm.model.predict_path(net, q, lm.embeddings, lm.stats);
    out.push_back({{"energy_fuel_units", e}, {"time_s", t}});
  }
  auto dir = sc.make_run_dir("predict", kv);
  write_file((dir / "predictions.json").string(), out.dump(2) + "\n");
  std::cout << dir.string() << "\n" << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_sweep(const SubConfig& sc) {
  KvConfig kv = sc.effective();
  ExperimentConfig cfg;
  cfg.datagen = datagen_from(kv);
  cfg.n_repeats = static_cast<int>(kv.get_int("n_repeats", 3));
  cfg.label_fraction = kv.get_double("label_fraction", 0.05);
  cfg.split_seed = static_cast<std::uint64_t>(kv.get_int("split_seed", 1));
  cfg.test_lengths = parse_lengths(kv.get_str("lengths", "20"));
  cfg.max_test_windows_per_trip = static_cast<int>(kv.get_int("max_test_windows", 2));
  cfg.max_train_queries = static_cast<std::size_t>(kv.get_int("max_train_queries", 2000));
  cfg.max_val_queries = static_cast<std::size_t>(kv.get_int("max_val_queries", 300));
  cfg.model = model_from(kv);
  cfg.train = train_from(kv);
  cfg.weights = weights_from(kv);
  cfg.walks.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));

  const std::string kind = require(kv, "kind");
  std::vector<double> values;
  for (const auto& tok : split_csv(require(kv, "values")))
    values.push_back(parse_double(tok, "values"));

  auto dir = sc.make_run_dir("sweep", kv);
  auto data = prepare_experiment(cfg);
  auto csv = run_sweep(cfg, data, kind, values);
  write_file((dir / "sweep.csv").string(), csv);
  std::cout << dir.string() << "\n" << csv;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eco-toll estimation pipeline"};
  app.require_subcommand(1);

  SubConfig gen, embed, trainc, evalc, baseline, predict, sweep;

  gen.add_common(app, "gen-data", "generate network, trips and split plan");
  add_datagen_keys(gen);

  embed.add_common(app, "embed", "train segment embeddings over the line graph");
  embed.add_key("data_dir", "", "gen-data run directory (required)");
  embed.add_key("walk_length", "20", "random walk length");
  embed.add_key("walks_per_node", "10", "walks per segment");
  embed.add_key("context_size", "10", "skip-gram context size");
  embed.add_key("p", "1", "return parameter");
  embed.add_key("q", "1", "in-out parameter");
  embed.add_key("negatives", "1", "negative samples per positive");
  embed.add_key("epochs", "5", "skip-gram epochs");
  embed.add_key("learning_rate", "0.025", "skip-gram learning rate");
  embed.add_key("seed", "1", "walk/training seed");

  trainc.add_common(app, "train", "train a model on one split repeat");
  trainc.add_key("data_dir", "", "gen-data run directory (required)");
  trainc.add_key("embeddings", "", "embeddings.csv path (required)");
  trainc.add_key("repeat", "0", "split repeat index");
  add_train_keys(trainc);

  evalc.add_common(app, "evaluate", "evaluate a checkpoint on the test split");
  evalc.add_key("data_dir", "", "gen-data run directory (required)");
  evalc.add_key("embeddings", "", "embeddings.csv path (required)");
  evalc.add_key("checkpoint", "", "checkpoint.txt path (required)");
  evalc.add_key("model_config", "", "model_config.txt path (required)");
  evalc.add_key("schema", "", "schema.csv path (required)");
  evalc.add_key("stats", "", "stats.csv path (required)");
  evalc.add_key("method", "eco_pinn", "method name for the report");
  evalc.add_key("lengths", "1,10,20,50,100,200", "test path lengths");
  evalc.add_key("max_test_windows", "2", "test windows per trip per length");

  baseline.add_common(app, "baseline", "lookup-table baseline report");
  baseline.add_key("data_dir", "", "gen-data run directory (required)");
  baseline.add_key("repeat", "0", "split repeat index");
  baseline.add_key("lengths", "1,10,20,50,100,200", "test path lengths");
  baseline.add_key("max_test_windows", "2", "test windows per trip per length");

  predict.add_common(app, "predict", "per-query energy/time from a checkpoint");
  predict.add_key("data_dir", "", "gen-data run directory (required)");
  predict.add_key("embeddings", "", "embeddings.csv path (required)");
  predict.add_key("checkpoint", "", "checkpoint.txt path (required)");
  predict.add_key("model_config", "", "model_config.txt path (required)");
  predict.add_key("schema", "", "schema.csv path (required)");
  predict.add_key("stats", "", "stats.csv path (required)");
  predict.add_key("queries", "", "JSONL query file: path, day, slot[, mass_kg] (required)");

  sweep.add_common(app, "sweep", "ablation sweeps over a shared corpus");
  add_datagen_keys(sweep);
  add_train_keys(sweep);
  sweep.add_key("kind", "", "omega_jerk | omega_e | window | decoder (required)");
  sweep.add_key("values", "", "comma-separated sweep values (required)");
  sweep.add_key("lengths", "20", "test path lengths");
  sweep.add_key("max_test_windows", "2", "test windows per trip per length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen.app->parsed()) return cmd_gen_data(gen);
    if (embed.app->parsed()) return cmd_embed(embed);
    if (trainc.app->parsed()) return cmd_train(trainc);
    if (evalc.app->parsed()) return cmd_evaluate(evalc);
    if (baseline.app->parsed()) return cmd_baseline(baseline);
    if (predict.app->parsed()) return cmd_predict(predict);
    if (sweep.app->parsed()) return cmd_sweep(sweep);
  } catch (const TrainingDivergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
