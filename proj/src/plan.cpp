#include "plfp/plan.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "plfp/error.hpp"

namespace plfp {

namespace {
constexpr const char* kHeader = "plfp-plan v1";

std::string format_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", rate);
  return buf;
}
}  // namespace

std::string plan_to_string(const PruningPlan& plan) {
  std::ostringstream os;
  os << kHeader << "\n";
  for (const PlanLayer& l : plan.layers) {
    os << "layer " << l.layer << " criterion " << l.criterion << " k " << l.k << " rate "
       << format_rate(l.rate) << " selected";
    for (int i : l.selected) os << " " << i;
    os << "\n";
  }
  return os.str();
}

PruningPlan plan_from_string(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  check(static_cast<bool>(std::getline(is, line)), "plan: empty input");
  check(line == kHeader, "plan: bad header '", line, "'");
  PruningPlan plan;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    PlanLayer l;
    auto expect = [&](const char* key) {
      check(static_cast<bool>(ls >> word) && word == key, "plan: expected '", key, "' in line '",
            line, "'");
    };
    expect("layer");
    check(static_cast<bool>(ls >> l.layer), "plan: missing layer index in '", line, "'");
    expect("criterion");
    check(static_cast<bool>(ls >> l.criterion), "plan: missing criterion in '", line, "'");
    expect("k");
    check(static_cast<bool>(ls >> l.k), "plan: missing k in '", line, "'");
    expect("rate");
    check(static_cast<bool>(ls >> l.rate), "plan: missing rate in '", line, "'");
    expect("selected");
    int idx;
    while (ls >> idx) l.selected.push_back(idx);
    plan.layers.push_back(std::move(l));
  }
  return plan;
}

void save_plan(const PruningPlan& plan, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "plan: cannot write '", path, "'");
  out << plan_to_string(plan);
}

PruningPlan load_plan(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "plan: cannot open '", path, "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return plan_from_string(text);
}

void validate_plan_against(const PruningPlan& plan, const ToyModel& m) {
  const int emb = embedding_layer(m);
  std::set<int> seen_layers;
  for (const PlanLayer& l : plan.layers) {
    check(l.layer >= 0 && l.layer < static_cast<int>(m.layers.size()), "plan: layer ", l.layer,
          " out of range");
    check(seen_layers.insert(l.layer).second, "plan: duplicate entry for layer ", l.layer);
    const LayerSpec& spec = m.layers[static_cast<std::size_t>(l.layer)];
    check(spec.kind == LayerKind::conv, "plan: layer ", l.layer, " is ",
          layer_kind_name(spec.kind), ", only conv layers can be pruned");
    check(l.layer != emb || l.selected.empty(), "plan: layer ", l.layer,
          " defines the embedding dimension and cannot be pruned");
    std::set<int> seen;
    for (int idx : l.selected) {
      check(idx >= 0 && idx < spec.c_out, "plan: filter ", idx, " out of range [0,", spec.c_out,
            ") at layer ", l.layer);
      check(seen.insert(idx).second, "plan: duplicate filter ", idx, " at layer ", l.layer);
    }
  }
}

}  // namespace plfp
