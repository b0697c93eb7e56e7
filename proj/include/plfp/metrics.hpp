#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plfp/model.hpp"

namespace plfp {

// One layer of a network shape description used for FLOPs / parameter
// accounting. `inputs` lists producer layer names; an empty list means the
// network input feeds this layer.
struct ArchLayer {
  std::string name;
  std::string kind;  // conv | linear | pool
  int c_in = 0;
  int c_out = 0;
  int k = 1;
  int stride = 1;
  int out_h = 1;
  int out_w = 1;
  bool bias = false;      // linear only; conv parameters never count a bias
  bool prunable = true;   // output channels may be reduced
  double prune_rate = 0.0;  // shipped per-layer rate (used by apply_layer_rates)
  std::vector<std::string> inputs;
};

struct ArchSpec {
  std::string name;
  int input_c = 3;
  int input_h = 224;
  int input_w = 224;
  std::vector<ArchLayer> layers;
  // Output-channel groups that must keep identical channel counts (layers
  // whose outputs merge through elementwise adds). A group is prunable only
  // when every member is prunable, and all members shrink together.
  std::vector<std::vector<std::string>> groups;
};

ArchSpec load_arch(const std::string& path);
void save_arch(const ArchSpec& arch, const std::string& path);
void validate_arch(const ArchSpec& arch);

// conv: 2*C_in*K^2*C_out*H_out*W_out, linear: 2*C_in*C_out, pool: 0.
std::int64_t count_flops(const ArchSpec& arch);
// conv: C_out*C_in*K^2, linear: C_in*C_out (+C_out when bias), pool: 0.
std::int64_t count_params(const ArchSpec& arch);

// Uniform output-channel pruning: every prunable layer keeps
// C_out - floor(P*C_out) channels; grouped layers shrink together only when
// the whole group is prunable; input channel counts are re-derived from the
// producers. Spatial sizes are untouched.
ArchSpec apply_uniform_rate(const ArchSpec& arch, double prune_rate);

// Same propagation, but using each layer's shipped prune_rate field.
ArchSpec apply_layer_rates(const ArchSpec& arch);

// Shape description of a toy model applied to input [c, h, w].
ArchSpec arch_from_model(const ToyModel& m, int c, int h, int w);

// Retrieval evaluation over fixed embeddings. Gallery entries whose id
// equals the query id are skipped (a query never retrieves its own copy);
// the default id -1 never matches.
struct EvalItem {
  Tensor embedding;
  int label = 0;
  int id = -1;
};

struct RetrievalEval {
  std::vector<EvalItem> gallery;
  std::vector<EvalItem> queries;
};

double mean_average_precision(const RetrievalEval& eval);
double rank_at(const RetrievalEval& eval, int k);

// Mean Euclidean distance between the two models' embeddings over a probe set.
double embedding_drift(const ToyModel& a, const ToyModel& b, const std::vector<Tensor>& probes);

}  // namespace plfp
