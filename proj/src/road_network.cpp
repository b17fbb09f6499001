#include "ecopinn/road_network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "ecopinn/textio.hpp"

namespace ecopinn {

void RoadNetwork::add_node(NodeId id) {
  if (node_set_.insert(id).second) nodes_.push_back(id);
}

void RoadNetwork::add_segment(const RoadSegment& seg) {
  if (index_.count(seg.id))
    throw std::runtime_error("duplicate segment id " + std::to_string(seg.id));
  if (seg.length_m <= 0)
    throw std::runtime_error("segment " + std::to_string(seg.id) + ": length must be > 0");
  if (seg.speed_limit_kmh <= 0)
    throw std::runtime_error("segment " + std::to_string(seg.id) + ": speed limit must be > 0");
  if (seg.from_node == seg.to_node)
    throw std::runtime_error("segment " + std::to_string(seg.id) + ": self-loops are rejected");
  if (seg.direction_deg < 0 || seg.direction_deg >= 360)
    throw std::runtime_error("segment " + std::to_string(seg.id) +
                             ": direction must be in [0, 360)");
  index_[seg.id] = segments_.size();
  segments_.push_back(seg);
}

void RoadNetwork::finalize() {
  std::set<std::pair<NodeId, NodeId>> endpoint_pairs;
  for (const auto& s : segments_) {
    if (!node_set_.count(s.from_node))
      throw std::runtime_error("segment " + std::to_string(s.id) + ": unknown from_node " +
                               std::to_string(s.from_node));
    if (!node_set_.count(s.to_node))
      throw std::runtime_error("segment " + std::to_string(s.id) + ": unknown to_node " +
                               std::to_string(s.to_node));
    if (!endpoint_pairs.insert({s.from_node, s.to_node}).second)
      throw std::runtime_error("segment " + std::to_string(s.id) +
                               ": parallel duplicate segment rejected");
  }
  adjacency_.clear();
  std::unordered_map<NodeId, std::vector<SegmentId>> by_head;
  for (const auto& s : segments_) by_head[s.from_node].push_back(s.id);
  for (auto& [node, ids] : by_head) std::sort(ids.begin(), ids.end());
  for (const auto& s : segments_) {
    auto it = by_head.find(s.to_node);
    adjacency_[s.id] = (it == by_head.end()) ? std::vector<SegmentId>{} : it->second;
  }
}

const RoadSegment& RoadNetwork::segment(SegmentId id) const {
  auto it = index_.find(id);
  if (it == index_.end())
    throw std::out_of_range("unknown segment id " + std::to_string(id));
  return segments_[it->second];
}

const std::vector<SegmentId>& RoadNetwork::successors(SegmentId id) const {
  auto it = adjacency_.find(id);
  if (it == adjacency_.end())
    throw std::out_of_range("unknown segment id " + std::to_string(id));
  return it->second;
}

bool RoadNetwork::adjacent(SegmentId a, SegmentId b) const {
  const auto& succ = successors(a);
  return std::find(succ.begin(), succ.end(), b) != succ.end();
}

LineGraph line_graph(const RoadNetwork& net) {
  LineGraph lg;
  for (const auto& s : net.segments()) lg[s.id] = net.successors(s.id);
  return lg;
}

double fold_angle(double a_deg, double b_deg) {
  double d = std::fabs(b_deg - a_deg);
  d = std::fmod(d, 360.0);
  if (d > 180.0) d = 360.0 - d;
  return d;
}

double turn_angle(const RoadNetwork& net, const RoadSegment& a, const RoadSegment& b) {
  if (!net.adjacent(a.id, b.id))
    throw std::invalid_argument("turn_angle: segment " + std::to_string(b.id) +
                                " does not follow " + std::to_string(a.id));
  return fold_angle(a.direction_deg, b.direction_deg);
}

RoadNetwork load_network(const std::string& nodes_path, const std::string& segments_path) {
  RoadNetwork net;

  auto node_lines = read_lines(nodes_path);
  if (node_lines.empty() || node_lines[0] != "id")
    throw std::runtime_error(nodes_path + ": expected header 'id'");
  for (std::size_t i = 1; i < node_lines.size(); ++i) {
    if (node_lines[i].empty()) continue;
    net.add_node(parse_int(node_lines[i], nodes_path + ":" + std::to_string(i + 1)));
  }

  static const std::string kHeader =
      "id,from_node,to_node,length_m,speed_limit_kmh,elev_change_m,road_type,lane_count,"
      "is_bridge,start_ep_type,end_ep_type,direction_deg";
  auto seg_lines = read_lines(segments_path);
  if (seg_lines.empty() || seg_lines[0] != kHeader)
    throw std::runtime_error(segments_path + ": unexpected header");
  for (std::size_t i = 1; i < seg_lines.size(); ++i) {
    if (seg_lines[i].empty()) continue;
    const std::string ctx = segments_path + ":" + std::to_string(i + 1);
    auto f = split_csv(seg_lines[i]);
    if (f.size() != 12) throw std::runtime_error(ctx + ": expected 12 fields");
    RoadSegment s;
    s.id = parse_int(f[0], ctx);
    s.from_node = parse_int(f[1], ctx);
    s.to_node = parse_int(f[2], ctx);
    s.length_m = parse_double(f[3], ctx);
    s.speed_limit_kmh = parse_double(f[4], ctx);
    s.elev_change_m = parse_double(f[5], ctx);
    s.road_type = static_cast<int>(parse_int(f[6], ctx));
    s.lane_count = static_cast<int>(parse_int(f[7], ctx));
    s.is_bridge = parse_int(f[8], ctx) != 0;
    s.start_ep_type = static_cast<int>(parse_int(f[9], ctx));
    s.end_ep_type = static_cast<int>(parse_int(f[10], ctx));
    s.direction_deg = parse_double(f[11], ctx);
    try {
      net.add_segment(s);
    } catch (const std::exception& e) {
      throw std::runtime_error(ctx + ": " + e.what());
    }
  }
  net.finalize();
  return net;
}

void save_network(const RoadNetwork& net, const std::string& nodes_path,
                  const std::string& segments_path) {
  {
    std::ofstream out(nodes_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + nodes_path);
    out << "id\n";
    for (NodeId n : net.nodes()) out << n << "\n";
  }
  std::ofstream out(segments_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + segments_path);
  out << "id,from_node,to_node,length_m,speed_limit_kmh,elev_change_m,road_type,lane_count,"
         "is_bridge,start_ep_type,end_ep_type,direction_deg\n";
  for (const auto& s : net.segments()) {
    out << s.id << ',' << s.from_node << ',' << s.to_node << ',' << fmt_double(s.length_m) << ','
        << fmt_double(s.speed_limit_kmh) << ',' << fmt_double(s.elev_change_m) << ','
        << s.road_type << ',' << s.lane_count << ',' << (s.is_bridge ? 1 : 0) << ','
        << s.start_ep_type << ',' << s.end_ep_type << ',' << fmt_double(s.direction_deg) << "\n";
  }
}

}  // namespace ecopinn
