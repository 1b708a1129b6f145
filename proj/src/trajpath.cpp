#include "routerank/trajpath.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <unordered_set>

namespace routerank {

void validate(const Trajectory& traj) {
  if (traj.points.size() < 2) throw InvalidArgument("trajectory needs at least 2 points");
  for (std::size_t i = 1; i < traj.points.size(); ++i) {
    if (!(traj.points[i].t > traj.points[i - 1].t))
      throw InvalidArgument("trajectory timestamps not strictly increasing at point " + std::to_string(i));
  }
}

Projection project_onto(std::span<const Vec2> polyline, Vec2 p) {
  Projection best{std::numeric_limits<double>::infinity(), 0.0};
  double walked = 0.0;
  for (std::size_t i = 1; i < polyline.size(); ++i) {
    const Vec2 a = polyline[i - 1];
    const Vec2 ab = polyline[i] - a;
    const double len2 = dot(ab, ab);
    const double seg_len = std::sqrt(len2);
    double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double d = distance(p, a + ab * t);
    if (d < best.distance) best = {d, walked + t * seg_len};
    walked += seg_len;
  }
  return best;
}

namespace {

struct Attempt {
  bool ok = false;
  std::size_t fail_index = 0;
  double cost = 0.0;
  std::vector<std::size_t> links;  // dense link indices
  std::vector<std::size_t> point_link;
  double offset = 0.0;  // along-link position of the last point on the current link
};

// Moving backwards along a link costs the squared distance moved back, which
// breaks the tie between a link and its reverse twin.
double backtrack_cost(double prev, double now) { return now < prev ? (prev - now) * (prev - now) : 0.0; }

bool is_u_turn(const RoadNetwork& net, std::size_t a, std::size_t b) {
  return net.from_index(a) == net.to_index(b) && net.to_index(a) == net.from_index(b);
}

Attempt extend(const RoadNetwork& net, const Trajectory& traj, std::size_t seed, const MapMatchConfig& cfg) {
  Attempt at;
  at.links.push_back(seed);
  at.point_link.reserve(traj.points.size());
  const auto links = net.links();

  for (std::size_t i = 0; i < traj.points.size(); ++i) {
    const Vec2 p = traj.points[i].pos;
    const std::size_t cur = at.links.back();
    const Projection pr_cur = project_onto(links[cur].geometry, p);
    const double d_cur = pr_cur.distance;
    if (i == 0) {
      if (d_cur > cfg.search_radius) {
        at.fail_index = 0;
        return at;
      }
      at.point_link.push_back(0);
      at.cost += d_cur * d_cur;
      at.offset = pr_cur.offset;
      continue;
    }

    // Successors one and two links ahead.
    double best_d = std::numeric_limits<double>::infinity();
    double runner_up = std::numeric_limits<double>::infinity();  // best via a different first hop
    std::optional<std::size_t> best_via;
    std::size_t best_link = 0;
    for (std::size_t s1 : net.out_links(net.to_index(cur))) {
      if (is_u_turn(net, cur, s1)) continue;
      double hop_best = std::numeric_limits<double>::infinity();
      std::optional<std::size_t> hop_via;
      std::size_t hop_link = s1;
      const double d1 = project_onto(links[s1].geometry, p).distance;
      if (d1 < hop_best) hop_best = d1;
      for (std::size_t s2 : net.out_links(net.to_index(s1))) {
        if (is_u_turn(net, s1, s2) || s2 == cur) continue;
        const double d2 = project_onto(links[s2].geometry, p).distance;
        if (d2 < hop_best) {
          hop_best = d2;
          hop_via = s1;
          hop_link = s2;
        }
      }
      if (hop_best < best_d) {
        runner_up = best_d;
        best_d = hop_best;
        best_via = hop_via;
        best_link = hop_link;
      } else {
        runner_up = std::min(runner_up, hop_best);
      }
    }
    // Near a junction two branches can be about equally close; keep the
    // current link until the choice is clear.
    const bool ambiguous = runner_up <= best_d + cfg.switch_margin;

    if (d_cur <= cfg.search_radius && (d_cur <= best_d + cfg.switch_margin || ambiguous)) {
      at.point_link.push_back(at.links.size() - 1);
      at.cost += d_cur * d_cur + backtrack_cost(at.offset, pr_cur.offset);
      at.offset = std::max(at.offset, pr_cur.offset);
    } else if (best_d <= cfg.search_radius) {
      if (best_via) at.links.push_back(*best_via);
      at.links.push_back(best_link);
      at.point_link.push_back(at.links.size() - 1);
      at.cost += best_d * best_d;
      at.offset = project_onto(links[best_link].geometry, p).offset;
    } else {
      at.fail_index = i;
      return at;
    }
  }
  at.cost += cfg.link_penalty * static_cast<double>(at.links.size());
  at.ok = true;
  return at;
}

}  // namespace

MatchResult map_match(const Trajectory& traj, const RoadNetwork& network, const MapMatchConfig& config) {
  validate(traj);
  if (network.empty()) throw InvalidArgument("map_match on an empty network");

  const Vec2 first = traj.points.front().pos;
  std::optional<Attempt> best;
  std::size_t furthest_fail = 0;
  const auto links = network.links();
  for (std::size_t li = 0; li < links.size(); ++li) {
    if (project_onto(links[li].geometry, first).distance > config.search_radius) continue;
    Attempt at = extend(network, traj, li, config);
    if (!at.ok) {
      furthest_fail = std::max(furthest_fail, at.fail_index);
      continue;
    }
    if (!best || at.cost < best->cost) best = std::move(at);
  }
  if (!best) {
    throw UnmatchedPointError(furthest_fail, "no link within " + std::to_string(config.search_radius) +
                                                 " m of point " + std::to_string(furthest_fail));
  }

  std::vector<LinkId> ids;
  ids.reserve(best->links.size());
  for (std::size_t li : best->links) ids.push_back(links[li].id);
  return {network.make_path(std::move(ids)), std::move(best->point_link)};
}

double inconsistency_rate(const RoadNetwork& network, const LinkPath& traj_path, const LinkPath& candidate) {
  if (traj_path.empty() || !(traj_path.total_length > 0.0))
    throw InvalidArgument("inconsistency_rate: empty trajectory path");
  const std::unordered_set<LinkId> cand_links(candidate.links.begin(), candidate.links.end());
  std::unordered_set<LinkId> counted;
  // Summed in trajectory order so the result is independent of candidate
  // link order.
  double shared = 0.0;
  for (LinkId id : traj_path.links) {
    if (cand_links.contains(id) && counted.insert(id).second) shared += network.link(id).length;
  }
  const double ir = 1.0 - shared / traj_path.total_length;
  return std::clamp(ir, 0.0, 1.0);
}

int binarize_label(double ir, double tau) {
  if (!(ir >= 0.0 && ir <= 1.0)) throw InvalidArgument("binarize_label: ir outside [0,1]");
  if (!(tau >= 0.0 && tau < 1.0)) throw InvalidArgument("binarize_label: tau outside [0,1)");
  return ir <= tau ? 1 : 0;
}

}  // namespace routerank
