#pragma once

#include <string>
#include <vector>

#include "plfp/model.hpp"

namespace plfp {

struct PlanLayer {
  int layer = 0;
  double rate = 0.0;
  std::string criterion = "local";
  int k = 1;
  std::vector<int> selected;  // original filter indices, selection order
};

struct PruningPlan {
  std::vector<PlanLayer> layers;
};

// Human-readable plan text, e.g.
//   plfp-plan v1
//   layer 0 criterion local k 1 rate 0.5 selected 3 7 1
std::string plan_to_string(const PruningPlan& plan);
PruningPlan plan_from_string(const std::string& text);
void save_plan(const PruningPlan& plan, const std::string& path);
PruningPlan load_plan(const std::string& path);

// Indices must be valid, unique, and must not touch the embedding layer.
void validate_plan_against(const PruningPlan& plan, const ToyModel& m);

}  // namespace plfp
