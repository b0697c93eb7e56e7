#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plfp/geometry.hpp"

namespace plfp {

enum class CriterionKind { local_geometry, l1_norm, geometric_median, center_distance, random_uniform };

// A filter-selection rule. All rules share the SelectionResult contract so
// the scheduler and the metrics can drive any of them interchangeably.
struct Criterion {
  CriterionKind kind = CriterionKind::local_geometry;
  int k = 1;               // neighbor count, local_geometry only
  std::uint64_t seed = 0;  // random_uniform only
};

Criterion parse_criterion(const std::string& name, int k, std::uint64_t seed);
std::string criterion_name(const Criterion& c);

// Smallest l1 row norms first; ties broken by lowest index.
SelectionResult select_by_l1(const FilterBank& bank, double prune_rate);

// Weiszfeld iteration over the live rows. Throws on non-convergence.
std::vector<double> geometric_median(const FilterBank& bank, double tol = 1e-9,
                                     int max_iters = 1000);

// Rows closest to the geometric median first.
SelectionResult select_by_geometric_median(const FilterBank& bank, double prune_rate);

// Rows closest to the coordinate-wise mean first.
SelectionResult select_by_center_distance(const FilterBank& bank, double prune_rate);

// Uniform sample without replacement.
SelectionResult select_random(const FilterBank& bank, double prune_rate, std::uint64_t seed);

// Dispatch on criterion kind.
SelectionResult select_filters_by(const FilterBank& bank, const Criterion& c, double prune_rate);

}  // namespace plfp
