#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "routerank/common.hpp"

namespace routerank {

enum class RoadClass : std::uint8_t { kHighway = 0, kArterial = 1, kCollector = 2, kLocal = 3 };

inline constexpr int kNumRoadClasses = 4;

std::string_view to_string(RoadClass rc);
RoadClass road_class_from_string(std::string_view s);

struct Node {
  NodeId id = 0;
  Vec2 pos;
};

struct Link {
  LinkId id = 0;
  NodeId from_node = 0;
  NodeId to_node = 0;
  double length = 0.0;       // meters
  int lanes = 1;
  RoadClass road_class = RoadClass::kLocal;
  double speed_limit = 0.0;  // m/s
  double toll = 0.0;
  std::vector<Vec2> geometry;
  bool light_at_end = false;
};

/// Ordered, connected sequence of links.
struct LinkPath {
  std::vector<LinkId> links;
  double total_length = 0.0;

  bool empty() const { return links.empty(); }
  std::size_t size() const { return links.size(); }
  friend bool operator==(const LinkPath&, const LinkPath&) = default;
};

class NetworkError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Directed road graph. Immutable after build().
///
/// Ids are external identifiers; the network also assigns dense indices
/// (position in nodes()/links()) used by the graph algorithms.
class RoadNetwork {
 public:
  RoadNetwork() = default;

  /// Validates and indexes the graph. Throws NetworkError on dangling node
  /// references, duplicate ids, non-positive lengths, self loops, or
  /// geometry that disagrees with the declared length by more than 1%.
  static RoadNetwork build(std::vector<Node> nodes, std::vector<Link> links);

  std::span<const Node> nodes() const { return nodes_; }
  std::span<const Link> links() const { return links_; }
  bool empty() const { return links_.empty(); }

  std::optional<std::size_t> node_index(NodeId id) const;
  std::optional<std::size_t> link_index(LinkId id) const;

  const Node& node(NodeId id) const;
  const Link& link(LinkId id) const;

  /// Outgoing link indices of the node at dense index `node_idx`.
  std::span<const std::size_t> out_links(std::size_t node_idx) const { return out_[node_idx]; }
  std::span<const std::size_t> out_links_of(NodeId id) const;

  std::size_t from_index(std::size_t link_idx) const { return link_from_[link_idx]; }
  std::size_t to_index(std::size_t link_idx) const { return link_to_[link_idx]; }

  /// Builds a LinkPath, verifying that every id exists and consecutive
  /// links share a node.
  LinkPath make_path(std::vector<LinkId> ids) const;

 private:
  std::vector<Node> nodes_;
  std::vector<Link> links_;
  std::unordered_map<NodeId, std::size_t> node_idx_;
  std::unordered_map<LinkId, std::size_t> link_idx_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::size_t> link_from_;
  std::vector<std::size_t> link_to_;
};

double polyline_length(std::span<const Vec2> pts);

// ---------------------------------------------------------------------------
// Grid overlay

inline constexpr int kNumPoiCategories = 8;

/// residential, commercial, office, school, hospital, transit, leisure, industrial
std::string_view poi_category_name(int i);

struct CellKey {
  std::int32_t cx = 0;
  std::int32_t cy = 0;
  friend bool operator==(CellKey, CellKey) = default;
  friend auto operator<=>(CellKey, CellKey) = default;
};

struct CellKeyHash {
  std::size_t operator()(CellKey k) const noexcept {
    return std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.cx)) << 32) |
                                      static_cast<std::uint32_t>(k.cy));
  }
};

struct CellRecord {
  bool water = false;
  bool green = false;
  std::array<std::uint32_t, kNumPoiCategories> poi_counts{};
  friend bool operator==(const CellRecord&, const CellRecord&) = default;
};

struct TerrainCell {
  CellKey key;
  CellRecord record;
};

/// Cells crossed by a polyline (supercover: a segment passing exactly
/// through a cell corner also claims both side cells). Cell coordinates
/// are floor(pos / cell_size). Returned in traversal order without repeats.
std::vector<CellKey> rasterize_polyline(std::span<const Vec2> pts, double cell_size);

class GridIndex {
 public:
  double cell_size() const { return cell_size_; }

  /// Terrain record of a cell; cells absent from the terrain spec are empty.
  const CellRecord& cell(CellKey key) const;

  /// Cells crossed by the link at dense index `link_idx`, in traversal order.
  std::span<const CellKey> link_cells(std::size_t link_idx) const { return link_cells_[link_idx]; }

  const std::unordered_map<CellKey, CellRecord, CellKeyHash>& terrain() const { return cells_; }

 private:
  friend GridIndex grid_overlay(const RoadNetwork&, double, std::span<const TerrainCell>);
  double cell_size_ = 0.0;
  std::unordered_map<CellKey, CellRecord, CellKeyHash> cells_;
  std::vector<std::vector<CellKey>> link_cells_;
};

GridIndex grid_overlay(const RoadNetwork& network, double cell_size, std::span<const TerrainCell> terrain);

// ---------------------------------------------------------------------------
// Candidate recall

struct WeightedPath {
  LinkPath path;
  double weight = 0.0;
};

/// Single-source shortest path by link weight (indexed by dense link index).
/// Returns an empty optional when `dest` is unreachable.
std::optional<WeightedPath> shortest_path(const RoadNetwork& network, NodeId origin, NodeId dest,
                                          std::span<const double> link_weights);

/// Shortest path that never uses a link whose entry in `banned_links` is
/// nonzero (indexed by dense link index).
std::optional<WeightedPath> shortest_path_avoiding(const RoadNetwork& network, NodeId origin, NodeId dest,
                                                   std::span<const double> link_weights,
                                                   std::span<const char> banned_links);

/// Yen's loop-free k shortest paths. Output is sorted by ascending weight,
/// ties broken by lexicographic link-id sequence. Empty when unreachable.
std::vector<WeightedPath> k_shortest_paths(const RoadNetwork& network, NodeId origin, NodeId dest, int k,
                                           std::span<const double> link_weights);

}  // namespace routerank
