#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "bvap/metrics.hpp"

namespace bvap {

namespace {

// Transportation simplex over a spanning-tree basis. Rows are nodes
// 0..m-1, columns m..m+n-1; every basic cell is a tree edge.
class Transport {
 public:
  Transport(std::span<const double> a, std::span<const double> b, std::span<const double> c)
      : m_(a.size()), n_(b.size()), cost_(c), adj_(m_ + n_), u_(m_), v_(n_) {
    initial_basis(a, b);
  }

  double solve() {
    const std::size_t cells = m_ * n_;
    const std::size_t block = std::max<std::size_t>(std::max(m_, n_), 64);
    const std::size_t cap = 50 * cells + 1000;
    std::size_t cursor = 0;
    for (std::size_t iter = 0;; ++iter) {
      if (iter > cap) throw std::runtime_error("transport: iteration limit reached");
      potentials();
      // Partial pricing: best candidate inside the first block that has one.
      std::size_t best = cells;
      double best_rc = -kTol;
      for (std::size_t scanned = 0; scanned < cells;) {
        const std::size_t stop = std::min(cells, scanned + block);
        for (; scanned < stop; ++scanned) {
          const std::size_t k = (cursor + scanned) % cells;
          const std::size_t i = k / n_, j = k % n_;
          const double rc = cost_[k] - u_[i] - v_[j];
          if (rc < best_rc) {
            best_rc = rc;
            best = k;
          }
        }
        if (best != cells) break;
      }
      if (best == cells) break;
      cursor = best + 1;
      pivot(best / n_, best % n_);
    }
    double total = 0.0;
    for (const auto& e : edges_)
      if (e.alive) total += e.flow * cost_[e.i * n_ + e.j];
    return total;
  }

 private:
  static constexpr double kTol = 1e-12;

  struct Edge {
    std::size_t i, j;
    double flow;
    bool alive;
  };

  void add_edge(std::size_t i, std::size_t j, double flow) {
    const std::size_t id = edges_.size();
    edges_.push_back({i, j, flow, true});
    adj_[i].push_back(id);
    adj_[m_ + j].push_back(id);
  }

  void remove_edge(std::size_t id) {
    edges_[id].alive = false;
    for (const std::size_t node : {edges_[id].i, m_ + edges_[id].j}) {
      auto& list = adj_[node];
      list.erase(std::find(list.begin(), list.end(), id));
    }
  }

  std::size_t other(std::size_t id, std::size_t node) const {
    const Edge& e = edges_[id];
    return node == e.i ? m_ + e.j : e.i;
  }

  // North-west corner rule; advancing one index at a time keeps exactly
  // m + n - 1 basic cells even under degeneracy.
  void initial_basis(std::span<const double> a, std::span<const double> b) {
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    while (true) {
      const double f = std::min(sa[i], sb[j]);
      add_edge(i, j, f);
      sa[i] -= f;
      sb[j] -= f;
      if (i == m_ - 1 && j == n_ - 1) break;
      if (j == n_ - 1 || (i < m_ - 1 && sa[i] <= sb[j])) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  void potentials() {
    std::vector<char> seen(m_ + n_, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    u_[0] = 0.0;
    while (!stack.empty()) {
      const std::size_t node = stack.back();
      stack.pop_back();
      for (const std::size_t id : adj_[node]) {
        const std::size_t next = other(id, node);
        if (seen[next]) continue;
        seen[next] = 1;
        const Edge& e = edges_[id];
        const double c = cost_[e.i * n_ + e.j];
        if (next >= m_) {
          v_[next - m_] = c - u_[e.i];
        } else {
          u_[next] = c - v_[e.j];
        }
        stack.push_back(next);
      }
    }
  }

  // Tree path from row p to column q; entering cell (p,q) closes the cycle.
  void pivot(std::size_t p, std::size_t q) {
    std::vector<std::size_t> via(m_ + n_, std::numeric_limits<std::size_t>::max());
    std::vector<char> seen(m_ + n_, 0);
    std::vector<std::size_t> queue{p};
    seen[p] = 1;
    for (std::size_t h = 0; h < queue.size() && !seen[m_ + q]; ++h) {
      const std::size_t node = queue[h];
      for (const std::size_t id : adj_[node]) {
        const std::size_t next = other(id, node);
        if (seen[next]) continue;
        seen[next] = 1;
        via[next] = id;
        queue.push_back(next);
      }
    }
    std::vector<std::size_t> path;  // from q back to p
    for (std::size_t node = m_ + q; node != p;) {
      const std::size_t id = via[node];
      path.push_back(id);
      node = other(id, node);
    }
    // Edges alternate -, +, -, ... starting at the one touching column q.
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = path.front();
    for (std::size_t k = 0; k < path.size(); k += 2)
      if (edges_[path[k]].flow < theta) {
        theta = edges_[path[k]].flow;
        leave = path[k];
      }
    for (std::size_t k = 0; k < path.size(); ++k) {
      double& f = edges_[path[k]].flow;
      f = std::max(0.0, f + (k % 2 == 0 ? -theta : theta));
    }
    remove_edge(leave);
    add_edge(p, q, theta);
  }

  std::size_t m_, n_;
  std::span<const double> cost_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<double> u_, v_;
};

std::vector<double> block_sum(const Tensor& map, int g) {
  const Shape& s = map.shape();
  std::vector<double> out(static_cast<std::size_t>(g * g), 0.0);
  const auto v = map.values();
  for (std::int64_t y = 0; y < s.h; ++y)
    for (std::int64_t x = 0; x < s.w; ++x) {
      const double val = v[y * s.w + x];
      if (val < 0.0) throw std::invalid_argument("emd: negative mass");
      out[(y * g / s.h) * g + x * g / s.w] += val;
    }
  double total = 0.0;
  for (const double m : out) total += m;
  if (!(total > 0.0)) throw std::domain_error("emd: map has zero mass");
  for (double& m : out) m /= total;
  return out;
}

}  // namespace

double transport_cost(std::span<const double> supply, std::span<const double> demand,
                      std::span<const double> cost) {
  if (supply.empty() || demand.empty()) throw std::invalid_argument("transport: empty side");
  if (cost.size() != supply.size() * demand.size())
    throw std::invalid_argument("transport: cost table has the wrong size");
  double ts = 0.0, td = 0.0;
  for (const double v : supply) {
    if (!(v >= 0.0)) throw std::invalid_argument("transport: negative or NaN supply");
    ts += v;
  }
  for (const double v : demand) {
    if (!(v >= 0.0)) throw std::invalid_argument("transport: negative or NaN demand");
    td += v;
  }
  if (std::abs(ts - td) > 1e-9 * std::max(1.0, ts))
    throw std::invalid_argument("transport: supply and demand totals differ");
  return Transport(supply, demand, cost).solve();
}

double emd(const Tensor& m, const Tensor& z, int grid) {
  if (m.shape() != z.shape())
    throw std::invalid_argument("emd: shapes " + m.shape().str() + " and " + z.shape().str());
  if (m.shape().n != 1 || m.shape().c != 1)
    throw std::invalid_argument("emd: expected a (1,1,H,W) map, got " + m.shape().str());
  if (grid < 1 || grid > 32) throw std::invalid_argument("emd: grid must lie in [1, 32]");
  const int g = static_cast<int>(std::min<std::int64_t>({grid, m.shape().h, m.shape().w}));
  const auto a = block_sum(m, g);
  const auto b = block_sum(z, g);

  std::vector<int> rows, cols;
  std::vector<double> sa, sb;
  for (int k = 0; k < g * g; ++k) {
    if (a[k] > 0.0) {
      rows.push_back(k);
      sa.push_back(a[k]);
    }
    if (b[k] > 0.0) {
      cols.push_back(k);
      sb.push_back(b[k]);
    }
  }
  // Rounding leaves the two totals a few ulps apart; absorb it in the demand.
  double ta = 0.0, tb = 0.0;
  for (const double x : sa) ta += x;
  for (const double x : sb) tb += x;
  for (double& x : sb) x *= ta / tb;

  const double diag = g > 1 ? std::sqrt(2.0) * (g - 1) : 1.0;
  std::vector<double> cost(rows.size() * cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double dx = rows[i] % g - cols[j] % g;
      const double dy = rows[i] / g - cols[j] / g;
      cost[i * cols.size() + j] = std::sqrt(dx * dx + dy * dy) / diag;
    }
  return std::max(0.0, transport_cost(sa, sb, cost));
}

}  // namespace bvap
