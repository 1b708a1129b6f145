#pragma once

#include <vector>

#include "routerank/roadnet.hpp"

namespace fixtures {

using namespace routerank;

inline Link straight_link(LinkId id, const Node& a, const Node& b, double speed = 10.0, int lanes = 2) {
  Link l;
  l.id = id;
  l.from_node = a.id;
  l.to_node = b.id;
  l.length = distance(a.pos, b.pos);
  l.lanes = lanes;
  l.road_class = RoadClass::kCollector;
  l.speed_limit = speed;
  l.geometry = {a.pos, b.pos};
  return l;
}

// rows x cols lattice, both directions on every edge. Node id = r * cols + c.
inline RoadNetwork lattice(int rows, int cols, double spacing = 100.0) {
  std::vector<Node> nodes;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) nodes.push_back({r * cols + c, {c * spacing, r * spacing}});
  std::vector<Link> links;
  LinkId next = 0;
  auto both = [&](int a, int b) {
    links.push_back(straight_link(next++, nodes[a], nodes[b]));
    links.push_back(straight_link(next++, nodes[b], nodes[a]));
  };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) both(r * cols + c, r * cols + c + 1);
      if (r + 1 < rows) both(r * cols + c, (r + 1) * cols + c);
    }
  return RoadNetwork::build(std::move(nodes), std::move(links));
}

}  // namespace fixtures
