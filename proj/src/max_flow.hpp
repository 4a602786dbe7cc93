#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <queue>
#include <vector>

namespace classdrift::detail {

// Dinic's algorithm on real capacities.  Residuals below `eps` count as
// saturated.
class MaxFlow {
 public:
  explicit MaxFlow(std::size_t nodes, double eps = 1e-15)
      : adj_(nodes), level_(nodes), next_(nodes), eps_(eps) {}

  // Returns the edge id, usable with flow().
  std::size_t add_edge(std::size_t from, std::size_t to, double cap) {
    adj_[from].push_back(edges_.size());
    edges_.push_back({to, cap, 0.0});
    adj_[to].push_back(edges_.size());
    edges_.push_back({from, 0.0, 0.0});
    return edges_.size() - 2;
  }

  double flow(std::size_t edge) const { return edges_[edge].flow; }

  double run(std::size_t source, std::size_t sink) {
    double total = 0.0;
    while (build_levels(source, sink)) {
      std::fill(next_.begin(), next_.end(), 0);
      while (true) {
        const double pushed = augment(source, sink, std::numeric_limits<double>::infinity());
        if (pushed <= eps_) break;
        total += pushed;
      }
    }
    return total;
  }

 private:
  struct Edge {
    std::size_t to;
    double cap;
    double flow;
  };

  double residual(std::size_t e) const { return edges_[e].cap - edges_[e].flow; }

  bool build_levels(std::size_t source, std::size_t sink) {
    std::fill(level_.begin(), level_.end(), -1);
    std::queue<std::size_t> queue;
    level_[source] = 0;
    queue.push(source);
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop();
      for (std::size_t e : adj_[u]) {
        const std::size_t v = edges_[e].to;
        if (level_[v] < 0 && residual(e) > eps_) {
          level_[v] = level_[u] + 1;
          queue.push(v);
        }
      }
    }
    return level_[sink] >= 0;
  }

  double augment(std::size_t u, std::size_t sink, double limit) {
    if (u == sink) return limit;
    for (std::size_t& i = next_[u]; i < adj_[u].size(); ++i) {
      const std::size_t e = adj_[u][i];
      const std::size_t v = edges_[e].to;
      if (level_[v] != level_[u] + 1 || residual(e) <= eps_) continue;
      const double pushed = augment(v, sink, std::min(limit, residual(e)));
      if (pushed > eps_) {
        edges_[e].flow += pushed;
        edges_[e ^ 1].flow -= pushed;
        return pushed;
      }
    }
    return 0.0;
  }

  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<int> level_;
  std::vector<std::size_t> next_;
  double eps_;
};

}  // namespace classdrift::detail
