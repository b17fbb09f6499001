#include "ecopinn/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "ecopinn/textio.hpp"

namespace ecopinn {

using diff::Mat;
using diff::Tape;
using diff::Var;

void ModelConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "window=" << window << "\n";
  out << "profile_len=" << profile_len << "\n";
  out << "feature_dim=" << feature_dim << "\n";
  out << "ffn_hidden=" << ffn_hidden << "\n";
  out << "decoder=" << (decoder == DecoderKind::kPhysics ? "physics" : "fc") << "\n";
  out << "elevation=" << (elevation == ElevationMode::kGradeRate ? "grade_rate" : "literal")
      << "\n";
  out << "gravity=" << fmt_double(physics.g) << "\n";
  out << "air_density=" << fmt_double(physics.air_density) << "\n";
  out << "init_seed=" << init_seed << "\n";
  out << "init_velocity_mps=" << fmt_double(init_velocity_mps) << "\n";
}

ModelConfig ModelConfig::load(const std::string& path) {
  ModelConfig cfg;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path + ": bad config line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "window") cfg.window = static_cast<int>(parse_int(val, path));
    else if (key == "profile_len") cfg.profile_len = static_cast<int>(parse_int(val, path));
    else if (key == "feature_dim") cfg.feature_dim = static_cast<int>(parse_int(val, path));
    else if (key == "ffn_hidden") cfg.ffn_hidden = static_cast<int>(parse_int(val, path));
    else if (key == "decoder") cfg.decoder = (val == "fc") ? DecoderKind::kFc : DecoderKind::kPhysics;
    else if (key == "elevation")
      cfg.elevation = (val == "literal") ? ElevationMode::kLiteral : ElevationMode::kGradeRate;
    else if (key == "gravity") cfg.physics.g = parse_double(val, path);
    else if (key == "air_density") cfg.physics.air_density = parse_double(val, path);
    else if (key == "init_seed") cfg.init_seed = static_cast<std::uint64_t>(parse_int(val, path));
    else if (key == "init_velocity_mps") cfg.init_velocity_mps = parse_double(val, path);
    else throw std::runtime_error(path + ": unknown config key " + key);
  }
  return cfg;
}

Var delta_t(Var v, double length_m) {
  Tape& t = *v.tape;
  const int n = static_cast<int>(t.value(v).rows());
  if (length_m <= 0) throw std::invalid_argument("delta_t: length must be > 0");
  Var s = sum(slice_rows(v, 0, n - 1)) + sum(slice_rows(v, 1, n - 1));
  return t.scalar(2.0 * length_m) / s;
}

Var central_diff(Var x, Var dt) {
  Tape& t = *x.tape;
  const int n = static_cast<int>(t.value(x).rows());
  if (n < 3) throw std::invalid_argument("central_diff: need at least 3 samples");
  Var first = (slice_rows(x, 1, 1) - slice_rows(x, 0, 1)) / dt;
  Var interior = (slice_rows(x, 2, n - 2) - slice_rows(x, 0, n - 2)) / (dt * t.scalar(2.0));
  Var last = (slice_rows(x, n - 1, 1) - slice_rows(x, n - 2, 1)) / dt;
  return diff::concat_rows({first, interior, last});
}

Var power_profile(Var v, Var a, const VehicleParams& vehicle, double length_m,
                  double elev_change_m, const PhysicsConstants& pc, ElevationMode mode) {
  Tape& t = *v.tape;
  const double m_over_eta = vehicle.mass_kg / vehicle.powertrain_eff;
  const double aero = vehicle.frontal_area_m2 / (2.0 * vehicle.powertrain_eff) *
                      vehicle.drag_coeff * pc.air_density;
  Var rolling = mul(v, t.scalar(vehicle.rolling_coeff * pc.g));
  Var climb = (mode == ElevationMode::kGradeRate)
                  ? mul(v, t.scalar(pc.g * elev_change_m / length_m))
                  : add(mul(v, t.scalar(0.0)), t.scalar(pc.g * elev_change_m));
  Var traction = mul(a, v) + climb + rolling;
  Var v3 = mul(mul(v, v), v);
  return mul(traction, t.scalar(m_over_eta)) + mul(v3, t.scalar(aero));
}

Var energy_joules(Var p, Var dt) {
  Tape& t = *p.tape;
  const int n = static_cast<int>(t.value(p).rows());
  Var trap = (sum(slice_rows(p, 0, n - 1)) + sum(slice_rows(p, 1, n - 1))) * t.scalar(0.5);
  return dt * trap;
}

Var travel_time_s(Var dt, int profile_len) {
  return dt * dt.tape->scalar(static_cast<double>(profile_len - 1));
}

namespace {

Mat uniform_init(std::mt19937_64& rng, int rows, int cols, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
  return m;
}

}  // namespace

EcoPinnModel::EcoPinnModel(ModelConfig cfg, const CategoricalSchema& schema)
    : cfg_(cfg), schema_(schema) {
  const int dk = cfg_.feature_dim;
  const int hidden = cfg_.ffn_hidden;
  const int nv = cfg_.profile_len;
  std::mt19937_64 rng(cfg_.init_seed);

  params_.add("enc.mq", uniform_init(rng, dk, dk, dk));
  params_.add("enc.mk", uniform_init(rng, dk, dk, dk));
  params_.add("enc.mv", uniform_init(rng, dk, dk, dk));
  params_.add("enc.mo", uniform_init(rng, dk, dk, dk));
  params_.add("enc.ffn1_w", uniform_init(rng, dk, hidden, dk));
  params_.add("enc.ffn1_b", Mat::Zero(1, hidden));
  params_.add("enc.ffn2_w", uniform_init(rng, hidden, dk, hidden));
  params_.add("enc.ffn2_b", Mat::Zero(1, dk));
  params_.add("enc.ln1_gain", Mat::Ones(1, dk));
  params_.add("enc.ln1_bias", Mat::Zero(1, dk));
  params_.add("enc.ln2_gain", Mat::Ones(1, dk));
  params_.add("enc.ln2_bias", Mat::Zero(1, dk));
  params_.add("enc.head_w", uniform_init(rng, dk, nv, dk));
  // softplus(bias) ~ init velocity keeps the first dt sane
  const double b0 = std::log(std::expm1(cfg_.init_velocity_mps));
  params_.add("enc.head_b", Mat::Constant(1, nv, b0));

  const auto& dims = CategoricalSchema::feature_dims();
  for (int f = 0; f < kNumCatFeatures; ++f)
    params_.add(std::string("cat.") + CategoricalSchema::feature_names()[f],
                uniform_init(rng, schema_.vocab[f].rows(), dims[f], dims[f]));

  if (cfg_.decoder == DecoderKind::kFc) {
    params_.add("dec.fc_w", uniform_init(rng, nv, 2, nv));
    params_.add("dec.fc_b", Mat::Zero(1, 2));
  }
}

CatTables EcoPinnModel::cat_tables() const {
  CatTables tables;
  for (int f = 0; f < kNumCatFeatures; ++f)
    tables[f] = params_.at(std::string("cat.") + CategoricalSchema::feature_names()[f]).value;
  return tables;
}

std::vector<diff::Parameter*> EcoPinnModel::trainable() { return params_.all(); }

EcoPinnModel::Bound EcoPinnModel::bind(Tape& tape) const {
  Bound b;
  b.tape = &tape;
  b.model = this;
  auto& ps = const_cast<diff::ParamStore&>(params_);
  b.mq = tape.param(ps.at("enc.mq"));
  b.mk = tape.param(ps.at("enc.mk"));
  b.mv = tape.param(ps.at("enc.mv"));
  b.mo = tape.param(ps.at("enc.mo"));
  b.ffn1_w = tape.param(ps.at("enc.ffn1_w"));
  b.ffn1_b = tape.param(ps.at("enc.ffn1_b"));
  b.ffn2_w = tape.param(ps.at("enc.ffn2_w"));
  b.ffn2_b = tape.param(ps.at("enc.ffn2_b"));
  b.ln1_gain = tape.param(ps.at("enc.ln1_gain"));
  b.ln1_bias = tape.param(ps.at("enc.ln1_bias"));
  b.ln2_gain = tape.param(ps.at("enc.ln2_gain"));
  b.ln2_bias = tape.param(ps.at("enc.ln2_bias"));
  b.head_w = tape.param(ps.at("enc.head_w"));
  b.head_b = tape.param(ps.at("enc.head_b"));
  for (int f = 0; f < kNumCatFeatures; ++f)
    b.cat[f] = tape.param(ps.at(std::string("cat.") + CategoricalSchema::feature_names()[f]));
  if (cfg_.decoder == DecoderKind::kFc) {
    b.fc_w = tape.param(ps.at("dec.fc_w"));
    b.fc_b = tape.param(ps.at("dec.fc_b"));
  }
  return b;
}

Var EcoPinnModel::Bound::feature_row(const SubpathTensor& t, int row) const {
  Tape& tp = *tape;
  const auto& dims = CategoricalSchema::feature_dims();
  const int emb_dim = kEmbeddingDim;
  std::vector<Var> pieces;
  pieces.reserve(kNumCatFeatures + 2);
  pieces.push_back(tp.constant(t.X.block(row, 0, 1, emb_dim)));
  for (int f = 0; f < kNumCatFeatures; ++f)
    pieces.push_back(slice_row(cat[f], t.cat_rows[row][f]));
  pieces.push_back(tp.constant(t.X.block(row, t.X.cols() - kNumericDim, 1, kNumericDim)));
  (void)dims;
  return concat_cols(pieces);
}

Var EcoPinnModel::Bound::encode_window(const std::vector<Var>& rows, int center,
                                       const std::vector<bool>& mask) const {
  Tape& tp = *tape;
  const int dk = model->cfg_.feature_dim;
  Var x = rows[center];
  Var X = concat_rows(rows);

  Var q = matmul(x, mq);
  Var K = matmul(X, mk);
  Var V = matmul(X, mv);
  Var scores = matmul(q, transpose(K)) * tp.scalar(1.0 / std::sqrt(static_cast<double>(dk)));
  Var weights = softmax_masked_row(scores, mask);
  Var attn = matmul(matmul(weights, V), mo);

  Var h = layer_norm_row(attn + x, ln1_gain, ln1_bias);
  Var f = matmul(relu(matmul(h, ffn1_w) + ffn1_b), ffn2_w) + ffn2_b;
  Var h2 = layer_norm_row(h + f, ln2_gain, ln2_bias);
  Var out = matmul(h2, head_w) + head_b;  // 1 x |v|
  return transpose(softplus(out));
}

Var EcoPinnModel::Bound::encode(const SubpathTensor& t) const {
  const int l = static_cast<int>(t.X.rows());
  std::vector<Var> rows(l);
  for (int r = 0; r < l; ++r)
    rows[r] =
        t.mask[r] ? feature_row(t, r) : tape->constant(Mat::Zero(1, model->cfg_.feature_dim));
  return encode_window(rows, t.center_index, t.mask);
}

SegmentPrediction EcoPinnModel::Bound::decode(Var v, const VehicleParams& vehicle,
                                              double length_m, double elev_change_m) const {
  Tape& tp = *tape;
  const ModelConfig& cfg = model->cfg_;
  Var dt = delta_t(v, length_m);
  Var a = acceleration(v, dt);
  SegmentPrediction pred;
  pred.velocity_profile = v;
  pred.jerk_profile = jerk(a, dt);
  if (cfg.decoder == DecoderKind::kPhysics) {
    Var p = power_profile(v, a, vehicle, length_m, elev_change_m, cfg.physics, cfg.elevation);
    pred.energy_fuel_units = energy_joules(p, dt) * tp.scalar(1.0 / kJoulesPerFuelUnit);
    pred.time_s = travel_time_s(dt, cfg.profile_len);
  } else {
    Var out = matmul(transpose(v), fc_w) + fc_b;  // 1 x 2
    pred.energy_fuel_units = slice_row(transpose(out), 0);
    pred.time_s = slice_row(transpose(out), 1);
  }
  return pred;
}

SegmentPrediction EcoPinnModel::Bound::predict_segment(const SubpathTensor& t,
                                                       const VehicleParams& vehicle,
                                                       double length_m,
                                                       double elev_change_m) const {
  return decode(encode(t), vehicle, length_m, elev_change_m);
}

std::vector<SegmentPrediction> EcoPinnModel::Bound::predict_query(
    const std::vector<SubpathTensor>& tensors, const VehicleParams& vehicle,
    const RoadNetwork& net) const {
  Tape& tp = *tape;
  const ModelConfig& cfg = model->cfg_;
  const int n = static_cast<int>(tensors.size());
  const int w = cfg.window;

  // one feature row per path position, shared across overlapping windows
  std::vector<Var> pos_rows(n);
  for (int i = 0; i < n; ++i) pos_rows[i] = feature_row(tensors[i], tensors[i].center_index);
  Var zero_row = tp.constant(Mat::Zero(1, cfg.feature_dim));

  std::vector<SegmentPrediction> preds;
  preds.reserve(n);
  for (int i = 0; i < n; ++i) {
    const SubpathTensor& t = tensors[i];
    std::vector<Var> rows(2 * w + 1);
    for (int r = 0; r <= 2 * w; ++r) {
      const int j = i - w + r;
      rows[r] = (j >= 0 && j < n) ? pos_rows[j] : zero_row;
    }
    Var v = encode_window(rows, w, t.mask);
    const auto& seg = net.segment(t.center_segment);
    preds.push_back(decode(v, vehicle, seg.length_m, seg.elev_change_m));
  }
  return preds;
}

std::pair<double, double> EcoPinnModel::predict_path(const RoadNetwork& net, const QuerySpec& q,
                                                     const EmbeddingTable& emb,
                                                     const NormStats& stats) const {
  auto tensors = build_subpaths(q, cfg_.window, net, emb, schema_, cat_tables(), stats);
  Tape tape;
  auto bound = bind(tape);
  auto preds = bound.predict_query(tensors, q.vehicle, net);
  double energy = 0, time = 0;
  for (const auto& p : preds) {
    energy += tape.value(p.energy_fuel_units)(0, 0);
    time += tape.value(p.time_s)(0, 0);
  }
  return {energy, time};
}

void EcoPinnModel::save(const std::string& checkpoint_path, const std::string& config_path) const {
  diff::save_checkpoint(params_, checkpoint_path);
  cfg_.save(config_path);
}

void EcoPinnModel::load_params(const std::string& checkpoint_path) {
  diff::load_checkpoint(params_, checkpoint_path);
}

}  // namespace ecopinn
