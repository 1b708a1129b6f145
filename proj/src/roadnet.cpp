#include "routerank/roadnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <unordered_set>

namespace routerank {

std::string_view to_string(RoadClass rc) {
  switch (rc) {
    case RoadClass::kHighway: return "highway";
    case RoadClass::kArterial: return "arterial";
    case RoadClass::kCollector: return "collector";
    case RoadClass::kLocal: return "local";
  }
  return "local";
}

RoadClass road_class_from_string(std::string_view s) {
  if (s == "highway") return RoadClass::kHighway;
  if (s == "arterial") return RoadClass::kArterial;
  if (s == "collector") return RoadClass::kCollector;
  if (s == "local") return RoadClass::kLocal;
  throw SchemaError("unknown road class '" + std::string(s) + "'");
}

double polyline_length(std::span<const Vec2> pts) {
  double total = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) total += distance(pts[i - 1], pts[i]);
  return total;
}

RoadNetwork RoadNetwork::build(std::vector<Node> nodes, std::vector<Link> links) {
  RoadNetwork net;
  net.node_idx_.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!net.node_idx_.emplace(nodes[i].id, i).second)
      throw NetworkError("duplicate node id " + std::to_string(nodes[i].id));
  }
  net.out_.resize(nodes.size());
  net.link_from_.reserve(links.size());
  net.link_to_.reserve(links.size());
  net.link_idx_.reserve(links.size());
  for (std::size_t i = 0; i < links.size(); ++i) {
    const Link& l = links[i];
    const std::string tag = "link " + std::to_string(l.id);
    if (!net.link_idx_.emplace(l.id, i).second) throw NetworkError("duplicate link id " + std::to_string(l.id));
    auto from = net.node_idx_.find(l.from_node);
    auto to = net.node_idx_.find(l.to_node);
    if (from == net.node_idx_.end()) throw NetworkError(tag + ": dangling node " + std::to_string(l.from_node));
    if (to == net.node_idx_.end()) throw NetworkError(tag + ": dangling node " + std::to_string(l.to_node));
    if (l.from_node == l.to_node) throw NetworkError(tag + ": from_node equals to_node");
    if (!(l.length > 0.0)) throw NetworkError(tag + ": non-positive length");
    if (l.lanes < 1) throw NetworkError(tag + ": lanes must be >= 1");
    if (!(l.speed_limit > 0.0)) throw NetworkError(tag + ": non-positive speed limit");
    if (l.toll < 0.0) throw NetworkError(tag + ": negative toll");
    if (l.geometry.size() < 2) throw NetworkError(tag + ": geometry needs at least 2 points");
    if (std::abs(polyline_length(l.geometry) - l.length) > 0.01 * l.length)
      throw NetworkError(tag + ": geometry length deviates from declared length by more than 1%");
    net.link_from_.push_back(from->second);
    net.link_to_.push_back(to->second);
    net.out_[from->second].push_back(i);
  }
  net.nodes_ = std::move(nodes);
  net.links_ = std::move(links);
  return net;
}

std::optional<std::size_t> RoadNetwork::node_index(NodeId id) const {
  auto it = node_idx_.find(id);
  if (it == node_idx_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> RoadNetwork::link_index(LinkId id) const {
  auto it = link_idx_.find(id);
  if (it == link_idx_.end()) return std::nullopt;
  return it->second;
}

const Node& RoadNetwork::node(NodeId id) const {
  auto idx = node_index(id);
  if (!idx) throw InvalidArgument("unknown node id " + std::to_string(id));
  return nodes_[*idx];
}

const Link& RoadNetwork::link(LinkId id) const {
  auto idx = link_index(id);
  if (!idx) throw InvalidArgument("unknown link id " + std::to_string(id));
  return links_[*idx];
}

std::span<const std::size_t> RoadNetwork::out_links_of(NodeId id) const {
  auto idx = node_index(id);
  if (!idx) throw InvalidArgument("unknown node id " + std::to_string(id));
  return out_[*idx];
}

LinkPath RoadNetwork::make_path(std::vector<LinkId> ids) const {
  LinkPath path;
  std::optional<std::size_t> prev;
  for (LinkId id : ids) {
    auto idx = link_index(id);
    if (!idx) throw InvalidArgument("path references unknown link " + std::to_string(id));
    if (prev && link_to_[*prev] != link_from_[*idx])
      throw InvalidArgument("path is disconnected before link " + std::to_string(id));
    path.total_length += links_[*idx].length;
    prev = idx;
  }
  path.links = std::move(ids);
  return path;
}

// ---------------------------------------------------------------------------

std::string_view poi_category_name(int i) {
  static constexpr std::array<std::string_view, kNumPoiCategories> kNames = {
      "residential", "commercial", "office", "school", "hospital", "transit", "leisure", "industrial"};
  return kNames.at(static_cast<std::size_t>(i));
}

namespace {

std::int32_t cell_coord(double v, double cell_size) { return static_cast<std::int32_t>(std::floor(v / cell_size)); }

void rasterize_segment(Vec2 a, Vec2 b, double cs, std::vector<CellKey>& out,
                       std::unordered_set<CellKey, CellKeyHash>& seen) {
  auto emit = [&](std::int32_t cx, std::int32_t cy) {
    if (seen.insert({cx, cy}).second) out.push_back({cx, cy});
  };
  std::int32_t cx = cell_coord(a.x, cs);
  std::int32_t cy = cell_coord(a.y, cs);
  const std::int32_t ex = cell_coord(b.x, cs);
  const std::int32_t ey = cell_coord(b.y, cs);
  emit(cx, cy);

  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const std::int32_t sx = ex > cx ? 1 : (ex < cx ? -1 : 0);
  const std::int32_t sy = ey > cy ? 1 : (ey < cy ? -1 : 0);
  std::int64_t nx = std::abs(static_cast<std::int64_t>(ex) - cx);
  std::int64_t ny = std::abs(static_cast<std::int64_t>(ey) - cy);

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Parametric distance (t in [0,1]) to the next vertical / horizontal boundary.
  auto next_boundary = [&](double origin, double delta, std::int32_t c, std::int32_t s) {
    if (s == 0) return kInf;
    const double edge = (s > 0 ? static_cast<double>(c) + 1.0 : static_cast<double>(c)) * cs;
    return (edge - origin) / delta;
  };
  const double t_dx = sx != 0 ? cs / std::abs(dx) : kInf;
  const double t_dy = sy != 0 ? cs / std::abs(dy) : kInf;
  double t_max_x = next_boundary(a.x, dx, cx, sx);
  double t_max_y = next_boundary(a.y, dy, cy, sy);

  while (nx > 0 || ny > 0) {
    if (ny == 0 || (nx > 0 && t_max_x < t_max_y)) {
      cx += sx;
      t_max_x += t_dx;
      --nx;
    } else if (nx == 0 || t_max_y < t_max_x) {
      cy += sy;
      t_max_y += t_dy;
      --ny;
    } else {
      // Exact corner crossing: claim both side cells.
      emit(cx + sx, cy);
      emit(cx, cy + sy);
      cx += sx;
      cy += sy;
      t_max_x += t_dx;
      t_max_y += t_dy;
      --nx;
      --ny;
    }
    emit(cx, cy);
  }
}

}  // namespace

std::vector<CellKey> rasterize_polyline(std::span<const Vec2> pts, double cell_size) {
  if (!(cell_size > 0.0)) throw InvalidArgument("cell_size must be positive");
  std::vector<CellKey> out;
  std::unordered_set<CellKey, CellKeyHash> seen;
  if (pts.size() == 1) {
    out.push_back({cell_coord(pts[0].x, cell_size), cell_coord(pts[0].y, cell_size)});
    return out;
  }
  for (std::size_t i = 1; i < pts.size(); ++i) rasterize_segment(pts[i - 1], pts[i], cell_size, out, seen);
  return out;
}

const CellRecord& GridIndex::cell(CellKey key) const {
  static const CellRecord kEmpty{};
  auto it = cells_.find(key);
  return it == cells_.end() ? kEmpty : it->second;
}

GridIndex grid_overlay(const RoadNetwork& network, double cell_size, std::span<const TerrainCell> terrain) {
  if (!(cell_size > 0.0)) throw InvalidArgument("cell_size must be positive");
  if (network.empty()) throw InvalidArgument("grid overlay of an empty network");
  GridIndex grid;
  grid.cell_size_ = cell_size;
  grid.cells_.reserve(terrain.size());
  for (const TerrainCell& tc : terrain) {
    if (!grid.cells_.emplace(tc.key, tc.record).second)
      throw InvalidArgument("duplicate terrain cell (" + std::to_string(tc.key.cx) + "," +
                            std::to_string(tc.key.cy) + ")");
  }
  grid.link_cells_.reserve(network.links().size());
  for (const Link& l : network.links()) grid.link_cells_.push_back(rasterize_polyline(l.geometry, cell_size));
  return grid;
}

// ---------------------------------------------------------------------------

namespace {

struct SearchMasks {
  std::span<const char> banned_links;
  std::span<const char> banned_nodes;
};

/// Dijkstra on dense indices; returns link indices from origin to dest.
std::optional<std::vector<std::size_t>> dijkstra(const RoadNetwork& net, std::size_t origin, std::size_t dest,
                                                 std::span<const double> w, SearchMasks masks) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t n = net.nodes().size();
  std::vector<double> dist(n, kInf);
  std::vector<std::size_t> via(n, std::numeric_limits<std::size_t>::max());
  std::vector<char> done(n, 0);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[origin] = 0.0;
  heap.push({0.0, origin});
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (done[u]) continue;
    done[u] = 1;
    if (u == dest) break;
    for (std::size_t li : net.out_links(u)) {
      if (!masks.banned_links.empty() && masks.banned_links[li]) continue;
      const std::size_t v = net.to_index(li);
      if (done[v] || (!masks.banned_nodes.empty() && masks.banned_nodes[v])) continue;
      const double nd = d + w[li];
      if (nd < dist[v]) {
        dist[v] = nd;
        via[v] = li;
        heap.push({nd, v});
      }
    }
  }
  if (!done[dest]) return std::nullopt;
  std::vector<std::size_t> rev;
  for (std::size_t v = dest; v != origin; v = net.from_index(via[v])) rev.push_back(via[v]);
  std::reverse(rev.begin(), rev.end());
  return rev;
}

WeightedPath to_weighted(const RoadNetwork& net, std::span<const std::size_t> idx, std::span<const double> w) {
  WeightedPath wp;
  wp.path.links.reserve(idx.size());
  for (std::size_t li : idx) {
    const Link& l = net.links()[li];
    wp.path.links.push_back(l.id);
    wp.path.total_length += l.length;
    wp.weight += w[li];
  }
  return wp;
}

std::pair<std::size_t, std::size_t> endpoints(const RoadNetwork& net, NodeId origin, NodeId dest,
                                              std::span<const double> w) {
  if (w.size() != net.links().size()) throw InvalidArgument("link weight vector size mismatch");
  auto o = net.node_index(origin);
  auto d = net.node_index(dest);
  if (!o) throw InvalidArgument("unknown origin node " + std::to_string(origin));
  if (!d) throw InvalidArgument("unknown destination node " + std::to_string(dest));
  return {*o, *d};
}

}  // namespace

std::optional<WeightedPath> shortest_path(const RoadNetwork& network, NodeId origin, NodeId dest,
                                          std::span<const double> link_weights) {
  return shortest_path_avoiding(network, origin, dest, link_weights, {});
}

std::optional<WeightedPath> shortest_path_avoiding(const RoadNetwork& network, NodeId origin, NodeId dest,
                                                   std::span<const double> link_weights,
                                                   std::span<const char> banned_links) {
  auto [o, d] = endpoints(network, origin, dest, link_weights);
  if (o == d) return WeightedPath{};
  auto idx = dijkstra(network, o, d, link_weights, {banned_links, {}});
  if (!idx) return std::nullopt;
  return to_weighted(network, *idx, link_weights);
}

namespace {
constexpr std::size_t kMaxBoundaryTies = 256;
}  // namespace

std::vector<WeightedPath> k_shortest_paths(const RoadNetwork& network, NodeId origin, NodeId dest, int k,
                                           std::span<const double> link_weights) {
  if (origin == dest) throw InvalidArgument("k_shortest_paths: origin equals destination");
  if (k < 1) throw InvalidArgument("k_shortest_paths: k must be >= 1");
  auto [o, d] = endpoints(network, origin, dest, link_weights);

  struct Candidate {
    double weight;
    std::vector<LinkId> ids;
    std::vector<std::size_t> idx;
    bool operator<(const Candidate& other) const {
      if (weight != other.weight) return weight < other.weight;
      return ids < other.ids;
    }
  };
  auto make_candidate = [&](std::vector<std::size_t> idx) {
    Candidate c{0.0, {}, std::move(idx)};
    c.ids.reserve(c.idx.size());
    for (std::size_t li : c.idx) {
      c.weight += link_weights[li];
      c.ids.push_back(network.links()[li].id);
    }
    return c;
  };

  auto first = dijkstra(network, o, d, link_weights, {});
  if (!first) return {};

  std::vector<Candidate> accepted;
  accepted.push_back(make_candidate(std::move(*first)));
  std::set<Candidate> pending;
  std::set<std::vector<LinkId>> known{accepted.front().ids};

  std::vector<char> banned_links(network.links().size(), 0);
  std::vector<char> banned_nodes(network.nodes().size(), 0);

  // Past the k-th path keep accepting exact weight ties so the cut at k
  // follows the lexicographic order; bounded for degenerate lattices.
  const std::size_t k_size = static_cast<std::size_t>(k);
  const std::size_t limit = k_size + kMaxBoundaryTies;
  while (accepted.size() < limit) {
    const std::vector<std::size_t> prev = accepted.back().idx;
    for (std::size_t i = 0; i < prev.size(); ++i) {
      const std::size_t spur = network.from_index(prev[i]);
      std::span<const std::size_t> root(prev.data(), i);

      std::vector<std::size_t> touched_links;
      for (const Candidate& a : accepted) {
        if (a.idx.size() > i && std::equal(root.begin(), root.end(), a.idx.begin())) {
          banned_links[a.idx[i]] = 1;
          touched_links.push_back(a.idx[i]);
        }
      }
      for (std::size_t li : root) banned_nodes[network.from_index(li)] = 1;

      auto spur_path = dijkstra(network, spur, d, link_weights, {banned_links, banned_nodes});

      for (std::size_t li : touched_links) banned_links[li] = 0;
      for (std::size_t li : root) banned_nodes[network.from_index(li)] = 0;

      if (!spur_path) continue;
      std::vector<std::size_t> total(root.begin(), root.end());
      total.insert(total.end(), spur_path->begin(), spur_path->end());
      Candidate c = make_candidate(std::move(total));
      if (known.insert(c.ids).second) pending.insert(std::move(c));
    }
    if (pending.empty()) break;
    if (accepted.size() >= k_size && pending.begin()->weight > accepted[k_size - 1].weight) break;
    accepted.push_back(std::move(pending.extract(pending.begin()).value()));
  }

  std::stable_sort(accepted.begin(), accepted.end());
  if (accepted.size() > k_size) accepted.resize(k_size);
  std::vector<WeightedPath> out;
  out.reserve(accepted.size());
  for (const Candidate& c : accepted) out.push_back(to_weighted(network, c.idx, link_weights));
  return out;
}

}  // namespace routerank
