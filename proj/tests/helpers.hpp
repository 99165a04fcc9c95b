#pragma once

// Test-only oracles, deliberately implemented by different routes than the
// library: graph search instead of LCA arithmetic, recursive flood fill
// instead of BFS labeling, pixel counting instead of area arithmetic.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "boxes.hpp"
#include "rng.hpp"

namespace ckfr::testing {

struct RandomTree {
  std::string text;                       // tree file content
  std::vector<std::string> names;         // node names, index 0 = root
  std::vector<std::pair<int, int>> edges; // (parent, child)
  std::vector<double> weights;            // per edge
};

inline RandomTree make_random_tree(int node_count, Pcg32& rng, bool unit_weights = false) {
  RandomTree t;
  std::ostringstream os;
  os << "root\n";
  t.names.push_back("root");
  for (int i = 1; i < node_count; ++i) {
    const int parent = static_cast<int>(rng.next_below(static_cast<uint32_t>(i)));
    const double w = unit_weights ? 1.0 : 0.25 + 2.0 * rng.next_double();
    const std::string name = "v" + std::to_string(i);
    os << t.names[static_cast<size_t>(parent)] << "\t" << name << "\t" << w << "\n";
    t.names.push_back(name);
    t.edges.emplace_back(parent, i);
    t.weights.push_back(w);
  }
  t.text = os.str();
  return t;
}

// Dijkstra over the undirected weighted graph.
inline double graph_search_distance(const RandomTree& t, int a, int b) {
  const int n = static_cast<int>(t.names.size());
  std::vector<std::vector<std::pair<int, double>>> adj(static_cast<size_t>(n));
  for (size_t e = 0; e < t.edges.size(); ++e) {
    adj[static_cast<size_t>(t.edges[e].first)].push_back({t.edges[e].second, t.weights[e]});
    adj[static_cast<size_t>(t.edges[e].second)].push_back({t.edges[e].first, t.weights[e]});
  }
  std::vector<double> dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[static_cast<size_t>(a)] = 0.0;
  pq.push({0.0, a});
  while (!pq.empty()) {
    const auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[static_cast<size_t>(u)]) continue;
    for (const auto& [v, w] : adj[static_cast<size_t>(u)]) {
      if (d + w < dist[static_cast<size_t>(v)]) {
        dist[static_cast<size_t>(v)] = d + w;
        pq.push({d + w, v});
      }
    }
  }
  return dist[static_cast<size_t>(b)];
}

// Recursive flood fill, 4-connected, on mask(y, x) = values[y * w + x] >= tau.
inline void flood_visit(const std::vector<double>& values, int h, int w, double tau, int y, int x,
                        std::vector<char>& seen, Box& box) {
  if (y < 0 || y >= h || x < 0 || x >= w) return;
  const size_t at = static_cast<size_t>(y) * w + x;
  if (seen[at] || values[at] < tau) return;
  seen[at] = 1;
  box.x0 = std::min(box.x0, x);
  box.y0 = std::min(box.y0, y);
  box.x1 = std::max(box.x1, x + 1);
  box.y1 = std::max(box.y1, y + 1);
  flood_visit(values, h, w, tau, y - 1, x, seen, box);
  flood_visit(values, h, w, tau, y + 1, x, seen, box);
  flood_visit(values, h, w, tau, y, x - 1, seen, box);
  flood_visit(values, h, w, tau, y, x + 1, seen, box);
}

inline std::vector<Box> flood_fill_boxes(const std::vector<double>& values, int h, int w,
                                         double tau) {
  std::vector<Box> out;
  std::vector<char> seen(static_cast<size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t at = static_cast<size_t>(y) * w + x;
      if (!seen[at] && values[at] >= tau) {
        Box box{x, y, x + 1, y + 1};
        flood_visit(values, h, w, tau, y, x, seen, box);
        out.push_back(box);
      }
    }
  return out;
}

// IoU by counting pixels on a bounded grid.
inline double pixel_count_iou(const Box& a, const Box& b) {
  const int x_lo = std::min(a.x0, b.x0), x_hi = std::max(a.x1, b.x1);
  const int y_lo = std::min(a.y0, b.y0), y_hi = std::max(a.y1, b.y1);
  int64_t inter = 0, uni = 0;
  for (int y = y_lo; y < y_hi; ++y)
    for (int x = x_lo; x < x_hi; ++x) {
      const bool in_a = x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1;
      const bool in_b = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
      inter += (in_a && in_b) ? 1 : 0;
      uni += (in_a || in_b) ? 1 : 0;
    }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Brute-force localization scorer: re-derives components and compares every
// candidate/ground-truth pair by pixel-count IoU.
inline double exhaustive_max_box_acc(
    const std::vector<std::pair<std::vector<double>, std::vector<Box>>>& maps_and_gt, int h, int w,
    double tau, double delta) {
  int64_t hits = 0;
  for (const auto& [values, gt] : maps_and_gt) {
    const auto candidates = flood_fill_boxes(values, h, w, tau);
    bool hit = false;
    for (const auto& c : candidates)
      for (const auto& g : gt) {
        if (pixel_count_iou(c, g) >= delta) hit = true;
      }
    hits += hit ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(maps_and_gt.size());
}

inline std::vector<double> random_vector(size_t m, Pcg32& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(m);
  for (auto& x : v) x = rng.next_range(lo, hi);
  return v;
}

}  // namespace ckfr::testing
