#include "plfp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "plfp/error.hpp"

namespace plfp {

int FilterBank::live_count() const {
  int n = 0;
  for (char a : alive) n += a ? 1 : 0;
  return n;
}

std::vector<int> FilterBank::live_indices() const {
  std::vector<int> idx;
  idx.reserve(alive.size());
  for (int i = 0; i < rows; ++i)
    if (alive[static_cast<std::size_t>(i)]) idx.push_back(i);
  return idx;
}

FilterBank make_bank(int layer_id, int rows, int cols, std::vector<double> values) {
  check(rows >= 1 && cols >= 1, "bank: need at least one row and one column");
  check(values.size() == static_cast<std::size_t>(rows) * cols, "bank: ", rows, "x", cols,
        " shape does not match ", values.size(), " values");
  FilterBank b;
  b.layer_id = layer_id;
  b.rows = rows;
  b.cols = cols;
  b.values = std::move(values);
  b.alive.assign(static_cast<std::size_t>(rows), 1);
  return b;
}

FilterBank bank_from_layer(const ToyModel& m, int layer) {
  check(layer >= 0 && layer < static_cast<int>(m.layers.size()), "bank: layer ", layer,
        " out of range");
  const std::size_t li = static_cast<std::size_t>(layer);
  check(m.layers[li].kind == LayerKind::conv, "bank: layer ", layer, " is ",
        layer_kind_name(m.layers[li].kind), ", not conv");
  const Tensor& w = m.params[li];
  const int rows = w.dim(0);
  const int cols = static_cast<int>(w.numel()) / rows;
  return make_bank(layer, rows, cols, w.data);
}

void NeighborGraph::remove(int graph_index) {
  check(graph_index >= 0 && graph_index < n, "graph: node ", graph_index, " out of range");
  const int m = n - 1;
  std::vector<double> next(static_cast<std::size_t>(m) * m);
  for (int i = 0, ti = 0; i < n; ++i) {
    if (i == graph_index) continue;
    for (int j = 0, tj = 0; j < n; ++j) {
      if (j == graph_index) continue;
      next[static_cast<std::size_t>(ti) * m + tj] = at(i, j);
      ++tj;
    }
    ++ti;
  }
  dist = std::move(next);
  id_map.erase(id_map.begin() + graph_index);
  n = m;
}

NeighborGraph pairwise_distance(const FilterBank& bank) {
  const std::vector<int> live = bank.live_indices();
  check(!live.empty(), "pairwise_distance: no live filters");
  NeighborGraph g;
  g.n = static_cast<int>(live.size());
  g.id_map = live;
  g.dist.assign(static_cast<std::size_t>(g.n) * g.n, 0.0);
  for (int i = 0; i < g.n; ++i) {
    for (int j = i + 1; j < g.n; ++j) {
      const double d = l2_dist(bank.row(live[static_cast<std::size_t>(i)]),
                               bank.row(live[static_cast<std::size_t>(j)]),
                               static_cast<std::size_t>(bank.cols));
      g.dist[static_cast<std::size_t>(i) * g.n + j] = d;
      g.dist[static_cast<std::size_t>(j) * g.n + i] = d;
    }
  }
  return g;
}

double local_power(const NeighborGraph& g, int graph_index, int k) {
  check(graph_index >= 0 && graph_index < g.n, "local_power: node ", graph_index, " out of range");
  check(k >= 1 && k <= g.n - 1, "local_power: k=", k, " outside [1,", g.n - 1, "]");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(g.n) - 1);
  for (int j = 0; j < g.n; ++j)
    if (j != graph_index) d.push_back(g.at(graph_index, j));
  std::sort(d.begin(), d.end());
  double sum = 0.0;
  for (int t = 0; t < k; ++t) sum += d[static_cast<std::size_t>(t)];
  return sum / k;
}

double global_distance_sum(const NeighborGraph& g, int graph_index) {
  double sum = 0.0;
  for (int j = 0; j < g.n; ++j) sum += g.at(graph_index, j);
  return sum;
}

SelectionResult select_filters(const FilterBank& bank, double prune_rate, int k) {
  check(prune_rate >= 0.0 && prune_rate < 1.0, "select_filters: prune rate ", prune_rate,
        " outside [0,1)");
  check(k >= 1, "select_filters: k must be >= 1, got ", k);
  const int live = bank.live_count();
  check(live >= 1, "select_filters: no live filters");
  const int m = static_cast<int>(prune_rate * live);
  SelectionResult result;
  if (m == 0) return result;
  check(m <= live - (k + 1), "select_filters: pruning ", m, " of ", live,
        " filters leaves too few for k=", k, " neighbors");

  NeighborGraph g = pairwise_distance(bank);
  std::vector<double> power;
  for (int step = 0; step < m; ++step) {
    power.resize(static_cast<std::size_t>(g.n));
    for (int i = 0; i < g.n; ++i) power[static_cast<std::size_t>(i)] = local_power(g, i, k);
    double min_power = power[0];
    for (int i = 1; i < g.n; ++i) min_power = std::min(min_power, power[static_cast<std::size_t>(i)]);

    // tie set: every filter sharing the minimum local power exactly
    int best = -1;
    double best_global = 0.0;
    for (int i = 0; i < g.n; ++i) {
      if (power[static_cast<std::size_t>(i)] != min_power) continue;
      const double global = global_distance_sum(g, i);
      if (best < 0 || global < best_global) {
        best = i;
        best_global = global;
      }
      // remaining ties fall to the lowest original index, which is the
      // first graph index reached since id_map is increasing
    }
    result.pruned.push_back(g.id_map[static_cast<std::size_t>(best)]);
    result.scores_at_selection.push_back(power[static_cast<std::size_t>(best)]);
    g.remove(best);
  }
  return result;
}

double greedy_objective(const SelectionResult& r) {
  double sum = 0.0;
  for (double s : r.scores_at_selection) sum += s;
  return sum;
}

double mean_knn_distance(const FilterBank& bank, int k) {
  const int live = bank.live_count();
  check(live >= k + 1, "mean_knn_distance: need at least ", k + 1, " live filters, have ", live);
  NeighborGraph g = pairwise_distance(bank);
  double sum = 0.0;
  for (int i = 0; i < g.n; ++i) sum += local_power(g, i, k);
  return sum / g.n;
}

double distribution_divergence(const FilterBank& original, const FilterBank& surviving, int k) {
  check(original.cols == surviving.cols, "distribution_divergence: row length mismatch (",
        original.cols, " vs ", surviving.cols, ")");
  check(surviving.live_count() >= k + 1, "distribution_divergence: fewer than ", k + 1,
        " survivors");
  // survivors must be rows of the original bank
  for (int s : surviving.live_indices()) {
    bool found = false;
    for (int o : original.live_indices()) {
      if (std::memcmp(surviving.row(s), original.row(o),
                      static_cast<std::size_t>(original.cols) * sizeof(double)) == 0) {
        found = true;
        break;
      }
    }
    check(found, "distribution_divergence: surviving row ", s, " is not a row of the original bank");
  }
  const double before = mean_knn_distance(original, k);
  check(before > 0.0, "distribution_divergence: original bank has zero mean k-NN distance");
  const double after = mean_knn_distance(surviving, k);
  return std::abs(after - before) / before;
}

}  // namespace plfp
