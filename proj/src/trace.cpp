#include "plfp/trace.hpp"

#include <fstream>

#include "json.hpp"

#include "plfp/error.hpp"

namespace plfp {

namespace {
using ordered_json = nlohmann::ordered_json;
}

std::string record_to_json_line(const EpochRecord& rec) {
  ordered_json j;
  j["epoch"] = rec.epoch;
  j["loss"] = rec.loss;
  j["layers"] = ordered_json::array();
  for (const LayerEpochRecord& l : rec.layers) {
    ordered_json lj;
    lj["layer"] = l.layer;
    lj["selected"] = l.selected;
    lj["norms"] = l.norms;
    lj["below_threshold"] = l.below_threshold;
    j["layers"].push_back(std::move(lj));
  }
  return j.dump();
}

void save_trace(const PruneTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "trace: cannot write '", path, "'");
  for (const EpochRecord& rec : trace.epochs) out << record_to_json_line(rec) << "\n";
}

std::vector<EpochRecord> load_trace_records(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "trace: cannot open '", path, "'");
  std::vector<EpochRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      fail("trace: bad record line ", records.size() + 1, ": ", e.what());
    }
    EpochRecord rec;
    rec.epoch = j.at("epoch").get<int>();
    rec.loss = j.at("loss").get<double>();
    for (const auto& lj : j.at("layers")) {
      LayerEpochRecord l;
      l.layer = lj.at("layer").get<int>();
      l.selected = lj.at("selected").get<std::vector<int>>();
      l.norms = lj.at("norms").get<std::vector<double>>();
      l.below_threshold = lj.at("below_threshold").get<int>();
      rec.layers.push_back(std::move(l));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace plfp
