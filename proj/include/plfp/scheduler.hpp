#pragma once

#include <functional>
#include <map>

#include "plfp/baselines.hpp"
#include "plfp/dataset.hpp"
#include "plfp/error.hpp"
#include "plfp/trace.hpp"

namespace plfp {

// Progressive weight-decreasing schedule: at every re-selection event the
// chosen filters are multiplied by gamma, then the model is fine-tuned for
// one epoch; filters that stay selected decay geometrically while
// de-selected ones keep training at full scale.
struct DecaySchedule {
  double gamma = 0.3;
  int epochs = 1;
  int reselect_every = 1;
  // A filter counts as numerically zero when its row norm falls below
  // zero_threshold times the median norm of the layer's surviving filters.
  double zero_threshold = 1e-6;
  std::map<int, double> prune_rates;  // layer index -> P
  int k = 1;
};

// gamma = 0.01 for P <= 0.5 and 0.3 above.
double default_gamma(double prune_rate);

void validate_schedule(const DecaySchedule& s, const ToyModel& m);

// One fine-tuning epoch configuration. Batches are drawn deterministically
// from seed and the epoch number.
struct FineTune {
  double lr = 0.05;
  double momentum = 0.0;
  int batch_size = 8;
  int batches_per_epoch = 20;
  LossSpec loss{LossKind::triplet, 0.5};
  std::uint64_t seed = 1;
};

// Mean loss over one epoch of SGD (with optional momentum kept in
// `velocity`; pass an empty vector to start from rest).
double fine_tune_epoch(ToyModel& m, const RetrievalTask& task, const FineTune& ft, int epoch,
                       std::vector<Tensor>& velocity);

struct ProgressiveResult {
  ToyModel model;  // compacted
  PruneTrace trace;
};

// Thrown when the training loss diverges; carries the completed epochs.
struct TrainingDiverged : Error {
  TrainingDiverged(const std::string& msg, PruneTrace t) : Error(msg), trace(std::move(t)) {}
  PruneTrace trace;
};

// The decreasing-fine-tune loop: per epoch (at re-selection boundaries)
// select with the criterion on the current weights and scale the selection
// by gamma, then fine-tune one epoch. After the last epoch the current
// selection is zeroed outright and the zero filters are removed
// structurally. With gamma = 0, one epoch and no data this reduces exactly
// to one-shot hard pruning.
ProgressiveResult progressive_prune(const ToyModel& m, const DecaySchedule& schedule,
                                    const Criterion& criterion, const RetrievalTask* data,
                                    const FineTune& ft,
                                    const std::function<void(const EpochRecord&)>& on_epoch = {});

// Hard prune: select once on the current weights, zero, compact.
ProgressiveResult one_shot_prune(const ToyModel& m, const std::map<int, double>& prune_rates,
                                 const Criterion& criterion, double zero_threshold = 1e-6);

// Applies a stored plan: zero the planned filters, compact.
ToyModel apply_plan(const ToyModel& m, const PruningPlan& plan, double zero_threshold = 1e-6);

// Removes planned output channels and the matching input slices of the
// consuming layer. Every planned filter must already be numerically zero.
ToyModel compact(const ToyModel& m, const PruningPlan& plan, double zero_threshold = 1e-6);

struct SweepPoint {
  int layer = 0;
  double rate = 0.0;
  double map = 0.0;
};

// Per-layer pruning sensitivity: one-shot prune a single layer at each
// rate, fine-tune briefly, evaluate, restore. Points with an empty
// selection report the unmodified model.
std::vector<SweepPoint> sensitivity_sweep(const ToyModel& m, int layer,
                                          const std::vector<double>& rates,
                                          const Criterion& criterion, const RetrievalTask& task,
                                          const FineTune& ft, int ft_epochs);

}  // namespace plfp
