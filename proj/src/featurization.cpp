#include "ecopinn/featurization.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "ecopinn/textio.hpp"

namespace ecopinn {

void VehicleParams::validate() const {
  if (mass_kg <= 0 || frontal_area_m2 <= 0 || drag_coeff <= 0 || rolling_coeff <= 0)
    throw std::invalid_argument("vehicle parameters must be positive");
  if (powertrain_eff <= 0 || powertrain_eff > 1)
    throw std::invalid_argument("powertrain efficiency must be in (0, 1]");
}

int time_slot(int hour, int minute) {
  if (hour < 0 || hour > 23 || minute < 0 || minute > 59)
    throw std::invalid_argument("invalid time " + std::to_string(hour) + ":" +
                                std::to_string(minute));
  return hour / 4;
}

namespace {
const std::array<const char*, kNumericDim> kNumericNames = {
    "mass", "speed_limit", "length", "turn_angle", "direction_angle", "elev_change"};
}

void NormStats::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "feature,mean,sd\n";
  for (int i = 0; i < kNumericDim; ++i)
    out << kNumericNames[i] << ',' << fmt_double(mean[i]) << ',' << fmt_double(sd[i]) << "\n";
}

NormStats NormStats::load(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "feature,mean,sd")
    throw std::runtime_error(path + ": bad normalization stats header");
  NormStats s;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv(lines[i]);
    if (f.size() != 3) throw std::runtime_error(path + ": bad stats row");
    for (int k = 0; k < kNumericDim; ++k) {
      if (f[0] == kNumericNames[k]) {
        s.mean[k] = parse_double(f[1], path);
        s.sd[k] = parse_double(f[2], path);
        seen.insert(f[0]);
      }
    }
  }
  if (seen.size() != kNumericDim)
    throw std::runtime_error(path + ": missing normalization statistics");
  return s;
}

NormStats NormStats::compute(const std::vector<Eigen::Matrix<double, kNumericDim, 1>>& rows) {
  if (rows.empty()) throw std::invalid_argument("NormStats::compute: no rows");
  NormStats s;
  s.mean.setZero();
  for (const auto& r : rows) s.mean += r;
  s.mean /= static_cast<double>(rows.size());
  Eigen::Matrix<double, kNumericDim, 1> var = Eigen::Matrix<double, kNumericDim, 1>::Zero();
  for (const auto& r : rows) var += (r - s.mean).cwiseProduct(r - s.mean);
  var /= static_cast<double>(rows.size());
  s.sd = var.cwiseSqrt().cwiseMax(1e-9);
  return s;
}

Eigen::Matrix<double, kNumericDim, 1> raw_numeric_features(const RoadNetwork& net,
                                                           const RoadSegment& seg,
                                                           const RoadSegment* next_seg,
                                                           const VehicleParams& vehicle) {
  Eigen::Matrix<double, kNumericDim, 1> f;
  f[0] = vehicle.mass_kg;
  f[1] = seg.speed_limit_kmh;
  f[2] = seg.length_m;
  f[3] = next_seg ? turn_angle(net, seg, *next_seg) : 0.0;
  f[4] = seg.direction_deg;
  f[5] = seg.elev_change_m;
  return f;
}

Eigen::Matrix<double, kNumericDim, 1> numeric_features(const RoadNetwork& net,
                                                       const RoadSegment& seg,
                                                       const RoadSegment* next_seg,
                                                       const VehicleParams& vehicle,
                                                       const NormStats& stats) {
  auto raw = raw_numeric_features(net, seg, next_seg, vehicle);
  return (raw - stats.mean).cwiseQuotient(stats.sd);
}

const std::array<const char*, kNumCatFeatures>& CategoricalSchema::feature_names() {
  static const std::array<const char*, kNumCatFeatures> names = {
      "road_type", "start_ep_type", "end_ep_type", "lane_count", "is_bridge", "day", "time_slot"};
  return names;
}

const std::array<int, kNumCatFeatures>& CategoricalSchema::feature_dims() {
  static const std::array<int, kNumCatFeatures> dims = {4, 4, 4, 2, 2, 2, 2};
  return dims;
}

int CategoricalSchema::total_dim() const {
  int d = 0;
  for (int x : feature_dims()) d += x;
  return d;
}

std::array<int, kNumCatFeatures> CategoricalSchema::rows_for(const RoadSegment& seg,
                                                             DepartureTime dep) const {
  return {vocab[0].row(seg.road_type),
          vocab[1].row(seg.start_ep_type),
          vocab[2].row(seg.end_ep_type),
          vocab[3].row(seg.lane_count),
          vocab[4].row(seg.is_bridge ? 1 : 0),
          vocab[5].row(dep.day),
          vocab[6].row(dep.slot)};
}

CategoricalSchema CategoricalSchema::build(const RoadNetwork& net,
                                           const std::vector<SegmentId>& training_segments) {
  CategoricalSchema s;
  std::array<std::set<int>, 5> seen;
  for (SegmentId id : training_segments) {
    const auto& seg = net.segment(id);
    seen[0].insert(seg.road_type);
    seen[1].insert(seg.start_ep_type);
    seen[2].insert(seg.end_ep_type);
    seen[3].insert(seg.lane_count);
    seen[4].insert(seg.is_bridge ? 1 : 0);
  }
  for (int f = 0; f < 5; ++f) {
    int row = 0;
    for (int code : seen[f]) s.vocab[f].row_of[code] = row++;
  }
  for (int d = 0; d < 7; ++d) s.vocab[5].row_of[d] = d;
  for (int d = 0; d < 6; ++d) s.vocab[6].row_of[d] = d;
  return s;
}

void CategoricalSchema::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "feature,category,row_index\n";
  for (int f = 0; f < kNumCatFeatures; ++f)
    for (const auto& [code, row] : vocab[f].row_of)
      out << feature_names()[f] << ',' << code << ',' << row << "\n";
}

CategoricalSchema CategoricalSchema::load(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "feature,category,row_index")
    throw std::runtime_error(path + ": bad vocab header");
  CategoricalSchema s;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv(lines[i]);
    if (f.size() != 3) throw std::runtime_error(path + ": bad vocab row");
    bool found = false;
    for (int k = 0; k < kNumCatFeatures; ++k) {
      if (f[0] == feature_names()[k]) {
        s.vocab[k].row_of[static_cast<int>(parse_int(f[1], path))] =
            static_cast<int>(parse_int(f[2], path));
        found = true;
      }
    }
    if (!found) throw std::runtime_error(path + ": unknown feature " + f[0]);
  }
  return s;
}

int feature_dim(const EmbeddingTable& emb, const CategoricalSchema& schema) {
  return emb.dim + schema.total_dim() + kNumericDim;
}

std::vector<SubpathTensor> build_subpaths(const QuerySpec& q, int window, const RoadNetwork& net,
                                          const EmbeddingTable& emb,
                                          const CategoricalSchema& schema,
                                          const CatTables& tables, const NormStats& stats) {
  if (q.path.empty()) throw std::invalid_argument("build_subpaths: empty path");
  q.vehicle.validate();
  const int n = static_cast<int>(q.path.size());
  const int l = 2 * window + 1;
  const int dim = feature_dim(emb, schema);
  const auto& dims = CategoricalSchema::feature_dims();

  // per-path-position feature rows, computed once
  std::vector<Eigen::RowVectorXd> rows(n);
  std::vector<std::array<int, kNumCatFeatures>> rows_cat(n);
  for (int i = 0; i < n; ++i) {
    const auto& seg = net.segment(q.path[i]);
    const RoadSegment* next = (i + 1 < n) ? &net.segment(q.path[i + 1]) : nullptr;
    if (next && !net.adjacent(seg.id, next->id))
      throw std::invalid_argument("path segments " + std::to_string(seg.id) + " -> " +
                                  std::to_string(next->id) + " are not adjacent");
    Eigen::RowVectorXd row(dim);
    row.segment(0, emb.dim) = emb.at(seg.id).transpose();
    rows_cat[i] = schema.rows_for(seg, q.departure);
    int off = emb.dim;
    for (int f = 0; f < kNumCatFeatures; ++f) {
      const Eigen::MatrixXd& tbl = tables[f];
      if (tbl.rows() != schema.vocab[f].rows() || tbl.cols() != dims[f])
        throw std::invalid_argument(std::string("categorical table ") +
                                    CategoricalSchema::feature_names()[f] + " has wrong shape");
      row.segment(off, dims[f]) = tbl.row(rows_cat[i][f]);
      off += dims[f];
    }
    row.segment(off, kNumericDim) =
        numeric_features(net, seg, next, q.vehicle, stats).transpose();
    rows[i] = row;
  }

  std::vector<SubpathTensor> out(n);
  for (int i = 0; i < n; ++i) {
    SubpathTensor& t = out[i];
    t.X = Eigen::MatrixXd::Zero(l, dim);
    t.mask.assign(l, false);
    t.center_index = window;
    t.center_segment = q.path[i];
    t.cat_rows.assign(l, {});
    t.row_segments.assign(l, -1);
    for (int r = 0; r < l; ++r) {
      const int j = i - window + r;
      if (j < 0 || j >= n) continue;
      t.X.row(r) = rows[j];
      t.mask[r] = true;
      t.cat_rows[r] = rows_cat[j];
      t.row_segments[r] = q.path[j];
    }
  }
  return out;
}

}  // namespace ecopinn
