#pragma once

#include <string>
#include <vector>

#include "plfp/plan.hpp"

namespace plfp {

struct LayerEpochRecord {
  int layer = 0;
  std::vector<int> selected;   // current selection, selection order
  std::vector<double> norms;   // l2 norm of every filter row
  int below_threshold = 0;     // selected filters already at (numerical) zero
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::vector<LayerEpochRecord> layers;
};

struct PruneTrace {
  std::vector<EpochRecord> epochs;
  PruningPlan final_plan;
};

// One line-delimited JSON record per epoch, stable field order.
std::string record_to_json_line(const EpochRecord& rec);
void save_trace(const PruneTrace& trace, const std::string& path);
std::vector<EpochRecord> load_trace_records(const std::string& path);

}  // namespace plfp
