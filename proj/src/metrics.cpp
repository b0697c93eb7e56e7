#include "plfp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"

#include "plfp/error.hpp"

namespace plfp {

namespace {

using ordered_json = nlohmann::ordered_json;

ArchLayer layer_from_json(const ordered_json& j) {
  ArchLayer l;
  l.name = j.at("name").get<std::string>();
  l.kind = j.at("kind").get<std::string>();
  check(l.kind == "conv" || l.kind == "linear" || l.kind == "pool",
        "arch: layer '", l.name, "' has unknown kind '", l.kind, "'");
  l.c_in = j.at("c_in").get<int>();
  l.c_out = j.at("c_out").get<int>();
  l.k = j.value("k", 1);
  l.stride = j.value("stride", 1);
  l.out_h = j.value("out_h", 1);
  l.out_w = j.value("out_w", 1);
  l.bias = j.value("bias", false);
  l.prunable = j.value("prunable", true);
  l.prune_rate = j.value("prune_rate", 0.0);
  if (j.contains("inputs"))
    for (const auto& in : j.at("inputs")) l.inputs.push_back(in.get<std::string>());
  return l;
}

ordered_json layer_to_json(const ArchLayer& l) {
  ordered_json j;
  j["name"] = l.name;
  j["kind"] = l.kind;
  j["c_in"] = l.c_in;
  j["c_out"] = l.c_out;
  j["k"] = l.k;
  j["stride"] = l.stride;
  j["out_h"] = l.out_h;
  j["out_w"] = l.out_w;
  if (l.bias) j["bias"] = true;
  if (!l.prunable) j["prunable"] = false;
  if (l.prune_rate != 0.0) j["prune_rate"] = l.prune_rate;
  j["inputs"] = l.inputs;
  return j;
}

const ArchLayer* find_layer(const ArchSpec& arch, const std::string& name) {
  for (const ArchLayer& l : arch.layers)
    if (l.name == name) return &l;
  return nullptr;
}

}  // namespace

ArchSpec load_arch(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "arch: cannot open '", path, "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("arch: failed to parse '", path, "': ", e.what());
  }
  ArchSpec arch;
  arch.name = j.value("name", "");
  arch.input_c = j.value("input_c", 3);
  arch.input_h = j.value("input_h", 224);
  arch.input_w = j.value("input_w", 224);
  for (const auto& lj : j.at("layers")) arch.layers.push_back(layer_from_json(lj));
  if (j.contains("groups"))
    for (const auto& gj : j.at("groups")) {
      std::vector<std::string> group;
      for (const auto& n : gj) group.push_back(n.get<std::string>());
      arch.groups.push_back(std::move(group));
    }
  validate_arch(arch);
  return arch;
}

void save_arch(const ArchSpec& arch, const std::string& path) {
  ordered_json j;
  j["name"] = arch.name;
  j["input_c"] = arch.input_c;
  j["input_h"] = arch.input_h;
  j["input_w"] = arch.input_w;
  j["layers"] = ordered_json::array();
  for (const ArchLayer& l : arch.layers) j["layers"].push_back(layer_to_json(l));
  j["groups"] = arch.groups;
  std::ofstream out(path);
  check(out.good(), "arch: cannot write '", path, "'");
  out << j.dump(2) << "\n";
}

void validate_arch(const ArchSpec& arch) {
  std::set<std::string> seen;
  for (const ArchLayer& l : arch.layers) {
    check(!l.name.empty(), "arch: unnamed layer");
    check(seen.insert(l.name).second, "arch: duplicate layer name '", l.name, "'");
    check(l.c_in >= 1 && l.c_out >= 1, "arch: layer '", l.name, "' has non-positive channels");
    for (const std::string& in : l.inputs)
      check(find_layer(arch, in) != nullptr, "arch: layer '", l.name,
            "' references unknown input '", in, "'");
    // channel consistency along every edge
    if (l.inputs.empty()) {
      if (l.kind != "linear")
        check(l.c_in == arch.input_c, "arch: layer '", l.name, "' expects ", l.c_in,
              " channels but the network input has ", arch.input_c);
    } else {
      for (const std::string& in : l.inputs) {
        const ArchLayer* p = find_layer(arch, in);
        check(p->c_out == l.c_in, "arch: edge ", in, " -> ", l.name, " carries ", p->c_out,
              " channels but the consumer expects ", l.c_in);
      }
    }
    if (l.kind == "pool")
      check(l.c_in == l.c_out, "arch: pool layer '", l.name, "' must preserve channels");
    // spatial consistency: convs keep ceil(in/stride) ("same" padding), pools
    // floor(in/stride); out_h == 1 marks a global reduction and is exempt
    if (l.kind != "linear" && !(l.out_h == 1 && l.out_w == 1)) {
      const int in_h = l.inputs.empty() ? arch.input_h : find_layer(arch, l.inputs.front())->out_h;
      const int in_w = l.inputs.empty() ? arch.input_w : find_layer(arch, l.inputs.front())->out_w;
      check(l.stride >= 1, "arch: layer '", l.name, "' has stride ", l.stride);
      const int want_h = l.kind == "conv" ? (in_h + l.stride - 1) / l.stride : in_h / l.stride;
      const int want_w = l.kind == "conv" ? (in_w + l.stride - 1) / l.stride : in_w / l.stride;
      check(l.out_h == want_h && l.out_w == want_w, "arch: layer '", l.name, "' declares ",
            l.out_h, "x", l.out_w, " output but stride ", l.stride, " over ", in_h, "x", in_w,
            " gives ", want_h, "x", want_w);
    }
  }
  for (const auto& group : arch.groups) {
    check(group.size() >= 2, "arch: group with fewer than two members");
    const ArchLayer* first = find_layer(arch, group.front());
    check(first != nullptr, "arch: group references unknown layer '", group.front(), "'");
    for (const std::string& name : group) {
      const ArchLayer* l = find_layer(arch, name);
      check(l != nullptr, "arch: group references unknown layer '", name, "'");
      check(l->c_out == first->c_out, "arch: group member '", name, "' has ", l->c_out,
            " output channels, expected ", first->c_out);
    }
  }
}

std::int64_t count_flops(const ArchSpec& arch) {
  std::int64_t total = 0;
  for (const ArchLayer& l : arch.layers) {
    if (l.kind == "conv") {
      total += 2ll * l.c_in * l.k * l.k * l.c_out * l.out_h * l.out_w;
    } else if (l.kind == "linear") {
      total += 2ll * l.c_in * l.c_out;
    }
    // pooling is free under this convention
  }
  return total;
}

std::int64_t count_params(const ArchSpec& arch) {
  std::int64_t total = 0;
  for (const ArchLayer& l : arch.layers) {
    if (l.kind == "conv") {
      total += static_cast<std::int64_t>(l.c_out) * l.c_in * l.k * l.k;
    } else if (l.kind == "linear") {
      total += static_cast<std::int64_t>(l.c_in) * l.c_out + (l.bias ? l.c_out : 0);
    }
  }
  return total;
}

namespace {

ArchSpec apply_rates(const ArchSpec& arch, const std::vector<double>& rates) {
  ArchSpec out = arch;
  // group lookup: layer name -> group index
  std::map<std::string, std::size_t> group_of;
  for (std::size_t gi = 0; gi < arch.groups.size(); ++gi)
    for (const std::string& n : arch.groups[gi]) group_of[n] = gi;
  std::vector<bool> group_prunable(arch.groups.size(), true);
  std::vector<double> group_rate(arch.groups.size(), 0.0);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const ArchLayer& l = arch.layers[i];
    auto it = group_of.find(l.name);
    if (it == group_of.end()) continue;
    if (!l.prunable || l.kind == "pool") group_prunable[it->second] = false;
    group_rate[it->second] = std::max(group_rate[it->second], rates[i]);
  }

  // shrink output channels
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    ArchLayer& l = out.layers[i];
    if (l.kind == "pool") continue;
    double rate = rates[i];
    bool prunable = l.prunable;
    auto it = group_of.find(l.name);
    if (it != group_of.end()) {
      prunable = group_prunable[it->second];
      rate = group_rate[it->second];
    }
    if (!prunable || rate <= 0.0) continue;
    check(rate < 1.0, "arch: prune rate ", rate, " outside [0,1) at layer '", l.name, "'");
    const int m = static_cast<int>(rate * l.c_out);
    l.c_out -= m;
  }
  // propagate input channels from producers; pools mirror their producer
  for (ArchLayer& l : out.layers) {
    if (l.inputs.empty()) {
      if (l.kind != "linear") l.c_in = out.input_c;
      continue;
    }
    const ArchLayer* p = find_layer(out, l.inputs.front());
    for (const std::string& in : l.inputs) {
      const ArchLayer* q = find_layer(out, in);
      check(q->c_out == p->c_out, "arch: pruned producers of '", l.name,
            "' disagree on channel count");
    }
    l.c_in = p->c_out;
    if (l.kind == "pool") l.c_out = l.c_in;
  }
  validate_arch(out);
  return out;
}

}  // namespace

ArchSpec apply_uniform_rate(const ArchSpec& arch, double prune_rate) {
  check(prune_rate >= 0.0 && prune_rate < 1.0, "arch: uniform prune rate ", prune_rate,
        " outside [0,1)");
  return apply_rates(arch, std::vector<double>(arch.layers.size(), prune_rate));
}

ArchSpec apply_layer_rates(const ArchSpec& arch) {
  std::vector<double> rates;
  rates.reserve(arch.layers.size());
  for (const ArchLayer& l : arch.layers) rates.push_back(l.prune_rate);
  return apply_rates(arch, rates);
}

ArchSpec arch_from_model(const ToyModel& m, int c, int h, int w) {
  validate_model(m);
  ArchSpec arch;
  arch.name = "toy";
  arch.input_c = c;
  arch.input_h = h;
  arch.input_w = w;
  std::string prev;
  int cur_c = c, cur_h = h, cur_w = w;
  const int emb = embedding_layer(m);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    ArchLayer a;
    a.name = "layer" + std::to_string(i);
    if (!prev.empty()) a.inputs.push_back(prev);
    switch (l.kind) {
      case LayerKind::conv:
        a.kind = "conv";
        a.c_in = cur_c;
        a.c_out = l.c_out;
        a.k = l.k;
        a.out_h = cur_h;
        a.out_w = cur_w;
        a.prunable = static_cast<int>(i) != emb;
        cur_c = l.c_out;
        break;
      case LayerKind::relu:
        continue;  // free, not part of the accounting
      case LayerKind::maxpool:
        a.kind = "pool";
        a.c_in = a.c_out = cur_c;
        a.k = 2;
        a.stride = 2;
        cur_h /= 2;
        cur_w /= 2;
        a.out_h = cur_h;
        a.out_w = cur_w;
        a.prunable = false;
        break;
      case LayerKind::global_maxpool:
        a.kind = "pool";
        a.c_in = a.c_out = cur_c;
        a.k = 0;
        a.stride = 0;
        cur_h = cur_w = 1;
        a.out_h = a.out_w = 1;
        a.prunable = false;
        break;
      case LayerKind::linear:
        a.kind = "linear";
        a.c_in = cur_c;
        a.c_out = l.c_out;
        a.prunable = static_cast<int>(i) != emb;
        cur_c = l.c_out;
        break;
    }
    prev = a.name;
    arch.layers.push_back(std::move(a));
  }
  validate_arch(arch);
  return arch;
}

namespace {

struct Ranked {
  double dist;
  std::size_t index;
};

// Ascending distance, gallery index breaking exact ties.
std::vector<Ranked> rank_gallery(const RetrievalEval& eval, const EvalItem& query) {
  std::vector<Ranked> ranked;
  ranked.reserve(eval.gallery.size());
  for (std::size_t g = 0; g < eval.gallery.size(); ++g) {
    const EvalItem& item = eval.gallery[g];
    if (query.id >= 0 && item.id == query.id) continue;
    check(same_shape(item.embedding, query.embedding), "retrieval: embedding dims differ (",
          shape_str(item.embedding), " vs ", shape_str(query.embedding), ")");
    ranked.push_back({l2_dist(item.embedding.data.data(), query.embedding.data.data(),
                              query.embedding.numel()),
                      g});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.index < b.index;
  });
  return ranked;
}

}  // namespace

double mean_average_precision(const RetrievalEval& eval) {
  check(!eval.queries.empty(), "mAP: no queries");
  check(!eval.gallery.empty(), "mAP: empty gallery");
  double sum_ap = 0.0;
  for (const EvalItem& q : eval.queries) {
    const std::vector<Ranked> ranked = rank_gallery(eval, q);
    int hits = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (eval.gallery[ranked[r].index].label == q.label) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    check(hits > 0, "mAP: query class ", q.label, " absent from gallery");
    sum_ap += ap / hits;
  }
  return sum_ap / static_cast<double>(eval.queries.size());
}

double rank_at(const RetrievalEval& eval, int k) {
  check(!eval.queries.empty(), "rank@k: no queries");
  check(k >= 1 && static_cast<std::size_t>(k) <= eval.gallery.size(), "rank@k: k=", k,
        " exceeds gallery size ", eval.gallery.size());
  int correct = 0;
  for (const EvalItem& q : eval.queries) {
    const std::vector<Ranked> ranked = rank_gallery(eval, q);
    const std::size_t top = std::min(static_cast<std::size_t>(k), ranked.size());
    for (std::size_t r = 0; r < top; ++r) {
      if (eval.gallery[ranked[r].index].label == q.label) {
        ++correct;
        break;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(eval.queries.size());
}

double embedding_drift(const ToyModel& a, const ToyModel& b, const std::vector<Tensor>& probes) {
  check(embedding_dim(a) == embedding_dim(b), "drift: embedding dims differ (", embedding_dim(a),
        " vs ", embedding_dim(b), ")");
  check(!probes.empty(), "drift: empty probe set");
  double sum = 0.0;
  for (const Tensor& x : probes) {
    const Tensor ea = embed(a, x);
    const Tensor eb = embed(b, x);
    sum += l2_dist(ea.data.data(), eb.data.data(), ea.numel());
  }
  return sum / static_cast<double>(probes.size());
}

}  // namespace plfp
