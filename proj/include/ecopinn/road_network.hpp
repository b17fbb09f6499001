#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace ecopinn {

using SegmentId = std::int64_t;
using NodeId = std::int64_t;

struct RoadSegment {
  SegmentId id = -1;
  NodeId from_node = -1;
  NodeId to_node = -1;
  double length_m = 0.0;        // > 0
  double speed_limit_kmh = 0.0; // > 0
  double elev_change_m = 0.0;   // signed
  int road_type = 0;
  int lane_count = 1;
  bool is_bridge = false;
  int start_ep_type = 0;
  int end_ep_type = 0;
  double direction_deg = 0.0;   // [0, 360)
};

/// Directed road graph. Immutable after load; shared concurrent reads are safe.
class RoadNetwork {
 public:
  void add_node(NodeId id);
  void add_segment(const RoadSegment& seg);
  /// Validates invariants and builds segment-successor adjacency.
  void finalize();

  const RoadSegment& segment(SegmentId id) const;
  bool has_segment(SegmentId id) const { return index_.count(id) > 0; }
  const std::vector<RoadSegment>& segments() const { return segments_; }
  const std::vector<NodeId>& nodes() const { return nodes_; }
  std::size_t segment_count() const { return segments_.size(); }

  /// Segments s with from_node(s) == to_node(id); i.e. line-graph successors.
  const std::vector<SegmentId>& successors(SegmentId id) const;
  bool adjacent(SegmentId a, SegmentId b) const;

 private:
  std::vector<RoadSegment> segments_;
  std::vector<NodeId> nodes_;
  std::unordered_map<SegmentId, std::size_t> index_;
  std::unordered_set<NodeId> node_set_;
  std::unordered_map<SegmentId, std::vector<SegmentId>> adjacency_;
};

/// Edge-to-vertex dual: one vertex per segment, edge (a,b) iff to_node(a) == from_node(b).
/// Ordered map keeps iteration deterministic.
using LineGraph = std::map<SegmentId, std::vector<SegmentId>>;

LineGraph line_graph(const RoadNetwork& net);

/// Absolute difference of direction angles folded into [0, 180].
/// Throws std::invalid_argument if b does not follow a.
double turn_angle(const RoadNetwork& net, const RoadSegment& a, const RoadSegment& b);

/// Fold of raw bearing difference into [0, 180]; no adjacency check.
double fold_angle(double a_deg, double b_deg);

/// Reads nodes.csv (`id`) and segments.csv
/// (`id,from_node,to_node,length_m,speed_limit_kmh,elev_change_m,road_type,lane_count,is_bridge,start_ep_type,end_ep_type,direction_deg`).
RoadNetwork load_network(const std::string& nodes_path, const std::string& segments_path);

void save_network(const RoadNetwork& net, const std::string& nodes_path,
                  const std::string& segments_path);

}  // namespace ecopinn
