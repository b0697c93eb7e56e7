#include "plfp/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "plfp/error.hpp"

namespace plfp {

double default_gamma(double prune_rate) { return prune_rate <= 0.5 ? 0.01 : 0.3; }

void validate_schedule(const DecaySchedule& s, const ToyModel& m) {
  check(s.gamma >= 0.0 && s.gamma <= 1.0, "schedule: gamma ", s.gamma, " outside [0,1]");
  check(s.epochs >= 1, "schedule: epochs must be >= 1");
  check(s.reselect_every >= 1, "schedule: reselect_every must be >= 1");
  check(s.zero_threshold > 0.0, "schedule: zero_threshold must be positive");
  check(s.k >= 1, "schedule: k must be >= 1");
  check(!s.prune_rates.empty(), "schedule: no layers to prune");
  const int emb = embedding_layer(m);
  for (const auto& [layer, rate] : s.prune_rates) {
    check(layer >= 0 && layer < static_cast<int>(m.layers.size()), "schedule: layer ", layer,
          " out of range");
    check(m.layers[static_cast<std::size_t>(layer)].kind == LayerKind::conv, "schedule: layer ",
          layer, " is not a conv layer");
    check(layer != emb, "schedule: layer ", layer,
          " defines the embedding dimension and cannot be pruned");
    check(rate >= 0.0 && rate < 1.0, "schedule: prune rate ", rate, " outside [0,1)");
  }
}

double fine_tune_epoch(ToyModel& m, const RetrievalTask& task, const FineTune& ft, int epoch,
                       std::vector<Tensor>& velocity) {
  check(ft.lr >= 0.0, "fine_tune: negative learning rate");
  check(ft.batch_size >= 1 && ft.batches_per_epoch >= 1, "fine_tune: bad batch configuration");
  Rng rng(Rng::mix(ft.seed, static_cast<std::uint64_t>(epoch)));
  bool stale = velocity.size() != m.params.size();
  for (std::size_t i = 0; !stale && i < m.params.size(); ++i)
    stale = velocity[i].shape != m.params[i].shape;
  if (stale) {  // fresh start, e.g. after structural compaction
    velocity.assign(m.params.size(), Tensor());
    for (std::size_t i = 0; i < m.params.size(); ++i)
      if (!m.params[i].empty()) velocity[i] = Tensor(m.params[i].shape);
  }
  double total = 0.0;
  std::vector<Tensor> grads;
  for (int b = 0; b < ft.batches_per_epoch; ++b) {
    const Batch batch = sample_batch(task, ft.loss.kind, ft.batch_size, rng);
    total += batch_gradients(m, batch, ft.loss, grads);
    if (ft.momentum == 0.0) {
      sgd_update(m, grads, ft.lr);
    } else {
      for (std::size_t i = 0; i < m.params.size(); ++i) {
        if (m.params[i].empty()) continue;
        for (std::size_t t = 0; t < m.params[i].numel(); ++t) {
          velocity[i].data[t] = ft.momentum * velocity[i].data[t] + grads[i].data[t];
          m.params[i].data[t] -= ft.lr * velocity[i].data[t];
        }
      }
    }
  }
  return total / ft.batches_per_epoch;
}

namespace {

std::vector<double> filter_norms(const ToyModel& m, int layer) {
  const Tensor& w = m.params[static_cast<std::size_t>(layer)];
  const int c_out = m.layers[static_cast<std::size_t>(layer)].c_out;
  const std::size_t row_len = w.numel() / static_cast<std::size_t>(c_out);
  std::vector<double> norms(static_cast<std::size_t>(c_out));
  for (int f = 0; f < c_out; ++f)
    norms[static_cast<std::size_t>(f)] =
        l2_norm(w.data.data() + static_cast<std::size_t>(f) * row_len, row_len);
  return norms;
}

// Absolute zero threshold for one layer: relative threshold times the
// median norm of the filters that are not planned for removal.
double layer_zero_threshold(const ToyModel& m, int layer, const std::vector<int>& planned,
                            double relative) {
  std::vector<double> norms = filter_norms(m, layer);
  std::vector<double> survivors;
  survivors.reserve(norms.size());
  for (int f = 0; f < static_cast<int>(norms.size()); ++f) {
    if (std::find(planned.begin(), planned.end(), f) == planned.end())
      survivors.push_back(norms[static_cast<std::size_t>(f)]);
  }
  check(!survivors.empty(), "compact: layer ", layer, " would lose every filter");
  std::sort(survivors.begin(), survivors.end());
  const double median = survivors[survivors.size() / 2];
  return relative * median;
}

void zero_rows(ToyModel& m, int layer, const std::vector<int>& rows) {
  Tensor& w = m.params[static_cast<std::size_t>(layer)];
  const int c_out = m.layers[static_cast<std::size_t>(layer)].c_out;
  const std::size_t row_len = w.numel() / static_cast<std::size_t>(c_out);
  for (int f : rows)
    std::fill_n(w.data.begin() + static_cast<std::ptrdiff_t>(f) * static_cast<std::ptrdiff_t>(row_len),
                row_len, 0.0);
}

PruningPlan plan_from_selections(const std::map<int, double>& rates,
                                 const std::map<int, SelectionResult>& selections,
                                 const Criterion& criterion) {
  PruningPlan plan;
  for (const auto& [layer, rate] : rates) {
    PlanLayer pl;
    pl.layer = layer;
    pl.rate = rate;
    pl.criterion = criterion_name(criterion);
    pl.k = criterion.kind == CriterionKind::local_geometry ? criterion.k : 0;
    const auto it = selections.find(layer);
    if (it != selections.end()) pl.selected = it->second.pruned;
    plan.layers.push_back(std::move(pl));
  }
  return plan;
}

// Drops the given rows of a [rows x row_len] weight payload.
Tensor drop_rows(const Tensor& w, int rows, const std::vector<int>& remove) {
  const std::size_t row_len = w.numel() / static_cast<std::size_t>(rows);
  std::vector<char> keep(static_cast<std::size_t>(rows), 1);
  for (int r : remove) keep[static_cast<std::size_t>(r)] = 0;
  std::vector<int> shape = w.shape;
  shape[0] = rows - static_cast<int>(remove.size());
  Tensor out(shape);
  std::size_t off = 0;
  for (int r = 0; r < rows; ++r) {
    if (!keep[static_cast<std::size_t>(r)]) continue;
    std::copy_n(w.data.begin() + static_cast<std::ptrdiff_t>(r) * static_cast<std::ptrdiff_t>(row_len),
                row_len, out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += row_len;
  }
  return out;
}

// Drops input-channel slices (axis 1) of a conv [Co,Ci,K,K] or linear
// [Co,Ci] weight tensor.
Tensor drop_input_slices(const Tensor& w, const std::vector<int>& remove) {
  const int co = w.dim(0), ci = w.dim(1);
  const std::size_t inner = w.numel() / (static_cast<std::size_t>(co) * ci);
  std::vector<char> keep(static_cast<std::size_t>(ci), 1);
  for (int r : remove) keep[static_cast<std::size_t>(r)] = 0;
  std::vector<int> shape = w.shape;
  shape[1] = ci - static_cast<int>(remove.size());
  Tensor out(shape);
  std::size_t off = 0;
  for (int o = 0; o < co; ++o)
    for (int c = 0; c < ci; ++c) {
      if (!keep[static_cast<std::size_t>(c)]) continue;
      std::copy_n(w.data.begin() +
                      static_cast<std::ptrdiff_t>((static_cast<std::size_t>(o) * ci + c) * inner),
                  inner, out.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += inner;
    }
  return out;
}

}  // namespace

ToyModel compact(const ToyModel& m, const PruningPlan& plan, double zero_threshold) {
  validate_model(m);
  validate_plan_against(plan, m);
  check(zero_threshold > 0.0, "compact: zero threshold must be positive");
  const int emb = embedding_layer(m);
  ToyModel out = m;
  for (const PlanLayer& pl : plan.layers) {
    if (pl.selected.empty()) continue;
    check(pl.layer != emb, "compact: layer ", pl.layer,
          " defines the embedding dimension and cannot be pruned");
    const double threshold = layer_zero_threshold(out, pl.layer, pl.selected, zero_threshold);
    const std::vector<double> norms = filter_norms(out, pl.layer);
    std::string offenders;
    for (int f : pl.selected) {
      if (norms[static_cast<std::size_t>(f)] > threshold)
        offenders += (offenders.empty() ? "" : ", ") + std::to_string(f);
    }
    check(offenders.empty(), "compact: layer ", pl.layer, " filters {", offenders,
          "} have norms above the zero threshold ", threshold);

    const std::size_t li = static_cast<std::size_t>(pl.layer);
    out.params[li] = drop_rows(out.params[li], out.layers[li].c_out, pl.selected);
    out.layers[li].c_out -= static_cast<int>(pl.selected.size());

    // propagate into the consumer: the next parameterized layer
    bool resolved = false;
    for (std::size_t j = li + 1; j < out.layers.size(); ++j) {
      const LayerKind kind = out.layers[j].kind;
      if (kind == LayerKind::relu || kind == LayerKind::maxpool ||
          kind == LayerKind::global_maxpool)
        continue;  // channel-preserving
      out.params[j] = drop_input_slices(out.params[j], pl.selected);
      out.layers[j].c_in -= static_cast<int>(pl.selected.size());
      resolved = true;
      break;
    }
    check(resolved, "compact: no consumer found for pruned layer ", pl.layer);
  }
  validate_model(out);
  return out;
}

ToyModel apply_plan(const ToyModel& m, const PruningPlan& plan, double zero_threshold) {
  validate_plan_against(plan, m);
  ToyModel zeroed = m;
  for (const PlanLayer& pl : plan.layers) zero_rows(zeroed, pl.layer, pl.selected);
  return compact(zeroed, plan, zero_threshold);
}

ProgressiveResult one_shot_prune(const ToyModel& m, const std::map<int, double>& prune_rates,
                                 const Criterion& criterion, double zero_threshold) {
  DecaySchedule s;
  s.gamma = 0.0;
  s.epochs = 1;
  s.zero_threshold = zero_threshold;
  s.prune_rates = prune_rates;
  s.k = std::max(1, criterion.k);
  validate_schedule(s, m);
  std::map<int, SelectionResult> selections;
  for (const auto& [layer, rate] : prune_rates) {
    Criterion c = criterion;
    if (c.kind == CriterionKind::random_uniform)
      c.seed = Rng::mix(criterion.seed, static_cast<std::uint64_t>(layer));
    selections[layer] = select_filters_by(bank_from_layer(m, layer), c, rate);
  }
  const PruningPlan plan = plan_from_selections(prune_rates, selections, criterion);
  ToyModel zeroed = m;
  for (const PlanLayer& pl : plan.layers) zero_rows(zeroed, pl.layer, pl.selected);
  ProgressiveResult result{compact(zeroed, plan, zero_threshold), {}};
  result.trace.final_plan = plan;
  return result;
}

ProgressiveResult progressive_prune(const ToyModel& m, const DecaySchedule& schedule,
                                    const Criterion& criterion, const RetrievalTask* data,
                                    const FineTune& ft,
                                    const std::function<void(const EpochRecord&)>& on_epoch) {
  validate_model(m);
  validate_schedule(schedule, m);
  ToyModel model = m;
  PruneTrace trace;
  std::map<int, SelectionResult> selections;
  std::vector<Tensor> velocity;

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    if (epoch % schedule.reselect_every == 0) {
      for (const auto& [layer, rate] : schedule.prune_rates) {
        Criterion c = criterion;
        if (c.kind == CriterionKind::random_uniform)
          c.seed = Rng::mix(criterion.seed, static_cast<std::uint64_t>(epoch) * 1000003ull +
                                                static_cast<std::uint64_t>(layer));
        SelectionResult sel = select_filters_by(bank_from_layer(model, layer), c, rate);
        for (int f : sel.pruned) scale_filter_inplace(model, layer, f, schedule.gamma);
        selections[layer] = std::move(sel);
      }
    }

    double loss = 0.0;
    if (data != nullptr && ft.batches_per_epoch > 0) {
      try {
        loss = fine_tune_epoch(model, *data, ft, epoch, velocity);
      } catch (const Error& e) {
        throw TrainingDiverged(detail::concat("progressive_prune: aborted at epoch ", epoch, ": ",
                                              e.what()),
                               std::move(trace));
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss;
    for (const auto& [layer, rate] : schedule.prune_rates) {
      LayerEpochRecord lr;
      lr.layer = layer;
      lr.selected = selections[layer].pruned;
      lr.norms = filter_norms(model, layer);
      const double threshold =
          layer_zero_threshold(model, layer, lr.selected, schedule.zero_threshold);
      for (int f : lr.selected)
        if (lr.norms[static_cast<std::size_t>(f)] <= threshold) ++lr.below_threshold;
      rec.layers.push_back(std::move(lr));
    }
    trace.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  // final hard removal of the last selection
  const PruningPlan plan = plan_from_selections(schedule.prune_rates, selections, criterion);
  for (const PlanLayer& pl : plan.layers) zero_rows(model, pl.layer, pl.selected);
  ProgressiveResult result{compact(model, plan, schedule.zero_threshold), std::move(trace)};
  result.trace.final_plan = plan;
  return result;
}

std::vector<SweepPoint> sensitivity_sweep(const ToyModel& m, int layer,
                                          const std::vector<double>& rates,
                                          const Criterion& criterion, const RetrievalTask& task,
                                          const FineTune& ft, int ft_epochs) {
  validate_model(m);
  check(ft_epochs >= 0, "sweep: negative fine-tune budget");
  std::vector<SweepPoint> curve;
  for (double rate : rates) {
    check(rate >= 0.0 && rate < 1.0, "sweep: rate ", rate, " outside [0,1)");
    ToyModel work = m;  // every point starts from the original model
    const SelectionResult sel =
        select_filters_by(bank_from_layer(work, layer), criterion, rate);
    if (!sel.pruned.empty()) {
      std::map<int, double> one_layer{{layer, rate}};
      std::map<int, SelectionResult> selections{{layer, sel}};
      const PruningPlan plan = plan_from_selections(one_layer, selections, criterion);
      for (const PlanLayer& pl : plan.layers) zero_rows(work, pl.layer, pl.selected);
      work = compact(work, plan);
      std::vector<Tensor> velocity;
      for (int e = 0; e < ft_epochs; ++e) fine_tune_epoch(work, task, ft, e, velocity);
    }
    curve.push_back({layer, rate, evaluate_map(work, task)});
  }
  return curve;
}

}  // namespace plfp
