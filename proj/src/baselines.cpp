#include "plfp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "plfp/error.hpp"
#include "plfp/rng.hpp"

namespace plfp {

Criterion parse_criterion(const std::string& name, int k, std::uint64_t seed) {
  Criterion c;
  c.k = k;
  c.seed = seed;
  if (name == "local") c.kind = CriterionKind::local_geometry;
  else if (name == "l1") c.kind = CriterionKind::l1_norm;
  else if (name == "median") c.kind = CriterionKind::geometric_median;
  else if (name == "center") c.kind = CriterionKind::center_distance;
  else if (name == "random") c.kind = CriterionKind::random_uniform;
  else fail("criterion: unknown name '", name, "' (expected local|l1|median|center|random)");
  return c;
}

std::string criterion_name(const Criterion& c) {
  switch (c.kind) {
    case CriterionKind::local_geometry: return "local";
    case CriterionKind::l1_norm: return "l1";
    case CriterionKind::geometric_median: return "median";
    case CriterionKind::center_distance: return "center";
    case CriterionKind::random_uniform: return "random";
  }
  return "?";
}

namespace {

int pruned_count(const FilterBank& bank, double prune_rate) {
  check(prune_rate >= 0.0 && prune_rate < 1.0, "selection: prune rate ", prune_rate,
        " outside [0,1)");
  return static_cast<int>(prune_rate * bank.live_count());
}

// Ascending stable sort by score, index as final tie-break; take the first m.
SelectionResult take_smallest(const std::vector<int>& ids, const std::vector<double>& score, int m) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&score](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  SelectionResult r;
  for (int t = 0; t < m; ++t) {
    r.pruned.push_back(ids[order[static_cast<std::size_t>(t)]]);
    r.scores_at_selection.push_back(score[order[static_cast<std::size_t>(t)]]);
  }
  return r;
}

}  // namespace

SelectionResult select_by_l1(const FilterBank& bank, double prune_rate) {
  const int m = pruned_count(bank, prune_rate);
  if (m == 0) return {};
  const std::vector<int> live = bank.live_indices();
  std::vector<double> norms(live.size());
  for (std::size_t i = 0; i < live.size(); ++i) {
    const double* row = bank.row(live[i]);
    double s = 0.0;
    for (int c = 0; c < bank.cols; ++c) s += std::abs(row[c]);
    norms[i] = s;
  }
  return take_smallest(live, norms, m);
}

std::vector<double> geometric_median(const FilterBank& bank, double tol, int max_iters) {
  const std::vector<int> live = bank.live_indices();
  check(!live.empty(), "geometric_median: no live filters");
  const int cols = bank.cols;
  std::vector<double> x(static_cast<std::size_t>(cols), 0.0);
  for (int i : live) {
    const double* row = bank.row(i);
    for (int c = 0; c < cols; ++c) x[static_cast<std::size_t>(c)] += row[c];
  }
  for (double& v : x) v /= static_cast<double>(live.size());

  const double eps = 1e-12;  // shift for points coincident with the estimate
  std::vector<double> next(static_cast<std::size_t>(cols));
  for (int iter = 0; iter < max_iters; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    double weight_sum = 0.0;
    for (int i : live) {
      const double* row = bank.row(i);
      double d = l2_dist(row, x.data(), static_cast<std::size_t>(cols));
      if (d < eps) d = eps;
      const double w = 1.0 / d;
      weight_sum += w;
      for (int c = 0; c < cols; ++c) next[static_cast<std::size_t>(c)] += w * row[c];
    }
    for (double& v : next) v /= weight_sum;
    const double step = l2_dist(next.data(), x.data(), static_cast<std::size_t>(cols));
    x = next;
    if (step < tol) return x;
  }
  fail("geometric_median: Weiszfeld iteration did not converge after ", max_iters, " steps");
}

namespace {

SelectionResult select_closest_to(const FilterBank& bank, const std::vector<double>& center, int m) {
  const std::vector<int> live = bank.live_indices();
  std::vector<double> dist(live.size());
  for (std::size_t i = 0; i < live.size(); ++i)
    dist[i] = l2_dist(bank.row(live[i]), center.data(), static_cast<std::size_t>(bank.cols));
  return take_smallest(live, dist, m);
}

}  // namespace

SelectionResult select_by_geometric_median(const FilterBank& bank, double prune_rate) {
  const int m = pruned_count(bank, prune_rate);
  if (m == 0) return {};
  return select_closest_to(bank, geometric_median(bank), m);
}

SelectionResult select_by_center_distance(const FilterBank& bank, double prune_rate) {
  const int m = pruned_count(bank, prune_rate);
  if (m == 0) return {};
  const std::vector<int> live = bank.live_indices();
  std::vector<double> mean(static_cast<std::size_t>(bank.cols), 0.0);
  for (int i : live) {
    const double* row = bank.row(i);
    for (int c = 0; c < bank.cols; ++c) mean[static_cast<std::size_t>(c)] += row[c];
  }
  for (double& v : mean) v /= static_cast<double>(live.size());
  return select_closest_to(bank, mean, m);
}

SelectionResult select_random(const FilterBank& bank, double prune_rate, std::uint64_t seed) {
  const int m = pruned_count(bank, prune_rate);
  if (m == 0) return {};
  std::vector<int> pool = bank.live_indices();
  Rng rng(seed);
  SelectionResult r;
  for (int t = 0; t < m; ++t) {
    const int pick = rng.uniform_int(static_cast<int>(pool.size()));
    r.pruned.push_back(pool[static_cast<std::size_t>(pick)]);
    r.scores_at_selection.push_back(0.0);
    pool.erase(pool.begin() + pick);
  }
  return r;
}

SelectionResult select_filters_by(const FilterBank& bank, const Criterion& c, double prune_rate) {
  switch (c.kind) {
    case CriterionKind::local_geometry: return select_filters(bank, prune_rate, c.k);
    case CriterionKind::l1_norm: return select_by_l1(bank, prune_rate);
    case CriterionKind::geometric_median: return select_by_geometric_median(bank, prune_rate);
    case CriterionKind::center_distance: return select_by_center_distance(bank, prune_rate);
    case CriterionKind::random_uniform: return select_random(bank, prune_rate, c.seed);
  }
  fail("criterion: invalid kind");
}

}  // namespace plfp
