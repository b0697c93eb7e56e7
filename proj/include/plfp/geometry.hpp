#pragma once

#include <vector>

#include "plfp/model.hpp"

namespace plfp {

// One conv layer's weights viewed as C_out row vectors of length
// L = C_in*K*K, with a liveness mask for rows that are still present.
struct FilterBank {
  int layer_id = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // rows x cols, row-major
  std::vector<char> alive;     // per row

  const double* row(int r) const { return values.data() + static_cast<std::size_t>(r) * cols; }
  double* row(int r) { return values.data() + static_cast<std::size_t>(r) * cols; }
  int live_count() const;
  std::vector<int> live_indices() const;
};

FilterBank make_bank(int layer_id, int rows, int cols, std::vector<double> values);
FilterBank bank_from_layer(const ToyModel& m, int layer);

// Symmetric pairwise L2 distances over the live rows of a bank.
// id_map translates graph indices back to original filter indices.
struct NeighborGraph {
  int n = 0;
  std::vector<double> dist;  // n x n
  std::vector<int> id_map;

  double at(int i, int j) const { return dist[static_cast<std::size_t>(i) * n + j]; }
  void remove(int graph_index);
};

NeighborGraph pairwise_distance(const FilterBank& bank);

// Mean distance to the k nearest neighbors in the current graph.
double local_power(const NeighborGraph& g, int graph_index, int k);

// Summed distance to every live node (the tie-break score).
double global_distance_sum(const NeighborGraph& g, int graph_index);

struct SelectionResult {
  std::vector<int> pruned;                  // original indices, in selection order
  std::vector<double> scores_at_selection;  // criterion score of each pick at pick time
};

// Iterative greedy selection: repeatedly pick the filter with the smallest
// local power, breaking ties by the smallest global distance sum (then by
// the lowest original index), and delete it from the graph before the next
// round. Selects floor(prune_rate * live_count) filters.
SelectionResult select_filters(const FilterBank& bank, double prune_rate, int k);

// Diagnostic value of a finished selection: the sum of the local powers the
// pruned filters had at the moment they were chosen.
double greedy_objective(const SelectionResult& r);

// Mean over live filters of their local power at the given k.
double mean_knn_distance(const FilterBank& bank, int k);

// Relative change in mean k-NN distance after pruning:
// |mean_knn(surviving) - mean_knn(original)| / mean_knn(original).
double distribution_divergence(const FilterBank& original, const FilterBank& surviving, int k);

}  // namespace plfp
