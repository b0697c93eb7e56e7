// Command-line surface of the pruning toolkit:
//   plfp train | plan | prune | sweep | evaluate | compare
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "plfp/archive.hpp"
#include "plfp/baselines.hpp"
#include "plfp/dataset.hpp"
#include "plfp/error.hpp"
#include "plfp/geometry.hpp"
#include "plfp/metrics.hpp"
#include "plfp/model.hpp"
#include "plfp/plan.hpp"
#include "plfp/scheduler.hpp"
#include "plfp/trace.hpp"

namespace {

using namespace plfp;
using ordered_json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct TrainFlags {
  double lr = 0.05;
  double momentum = 0.0;
  int batch_size = 8;
  int batches = 20;
  std::string loss = "triplet";
  double margin = 0.5;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", lr, "SGD learning rate");
    cmd->add_option("--momentum", momentum, "SGD momentum");
    cmd->add_option("--batch-size", batch_size, "items per batch");
    cmd->add_option("--batches", batches, "batches per epoch");
    cmd->add_option("--loss", loss, "loss kind: triplet|contrastive");
    cmd->add_option("--margin", margin, "loss margin");
  }

  FineTune fine_tune(std::uint64_t seed) const {
    FineTune ft;
    ft.lr = lr;
    ft.momentum = momentum;
    ft.batch_size = batch_size;
    ft.batches_per_epoch = batches;
    ft.loss = parse_loss(loss, margin);
    ft.seed = seed;
    return ft;
  }
};

std::map<int, double> uniform_rates(const ToyModel& m, double rate) {
  std::map<int, double> rates;
  for (int layer : prunable_conv_layers(m)) rates[layer] = rate;
  check(!rates.empty(), "model has no prunable conv layers");
  return rates;
}

void write_records(const std::string& path, const std::vector<ordered_json>& records) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write '", path, "'");
  for (const auto& r : records) out << r.dump() << "\n";
}

// ----------------------------------------------------------------- train --

struct TrainCmd {
  std::string data, model_spec = "conv:12:3,relu,pool,conv:24:3,relu,conv:32:3,gpool";
  std::string out;
  int epochs = 10;
  std::uint64_t seed = 1;
  TrainFlags flags;

  void run() const {
    const DatasetSpec spec = load_dataset_spec(data);
    const RetrievalTask task = generate_dataset(spec);
    ToyModel model = make_model(parse_model_spec(model_spec, spec.channels), seed);
    const FineTune ft = flags.fine_tune(seed);
    std::vector<Tensor> velocity;
    for (int e = 0; e < epochs; ++e) {
      const double loss = fine_tune_epoch(model, task, ft, e, velocity);
      std::cout << "epoch " << e << " loss " << fmt(loss) << "\n";
    }
    save_archive(model, out);
    std::cout << "map " << fmt(evaluate_map(model, task)) << "\n";
    std::cout << "saved " << out << "\n";
  }
};

// ------------------------------------------------------------------ plan --

struct PlanCmd {
  std::string archive, out, criterion = "local";
  double rate = 0.5;
  int k = 1;
  std::uint64_t seed = 1;
  std::vector<int> layers;

  void run() const {
    const ToyModel model = load_archive(archive);
    const Criterion c = parse_criterion(criterion, k, seed);
    std::vector<int> targets = layers.empty() ? prunable_conv_layers(model) : layers;
    PruningPlan plan;
    for (int layer : targets) {
      Criterion layer_c = c;
      if (layer_c.kind == CriterionKind::random_uniform)
        layer_c.seed = Rng::mix(seed, static_cast<std::uint64_t>(layer));
      const FilterBank bank = bank_from_layer(model, layer);
      const SelectionResult sel = select_filters_by(bank, layer_c, rate);
      PlanLayer pl;
      pl.layer = layer;
      pl.rate = rate;
      pl.criterion = criterion;
      pl.k = c.kind == CriterionKind::local_geometry ? k : 0;
      pl.selected = sel.pruned;
      plan.layers.push_back(pl);
      double lo = 0.0, hi = 0.0;
      if (!sel.scores_at_selection.empty()) {
        lo = hi = sel.scores_at_selection.front();
        for (double s : sel.scores_at_selection) {
          lo = std::min(lo, s);
          hi = std::max(hi, s);
        }
      }
      std::cout << "layer " << layer << " m " << sel.pruned.size() << " score_min " << fmt(lo)
                << " score_max " << fmt(hi) << "\n";
    }
    validate_plan_against(plan, model);
    save_plan(plan, out);
    std::cout << "saved " << out << "\n";
  }
};

// ----------------------------------------------------------------- prune --

struct PruneCmd {
  std::string archive, out, plan_path, criterion = "local", data, trace_path, plan_out;
  std::vector<std::string> layer_rates;  // "layer:rate" overrides
  double rate = -1.0;
  int k = 1;
  double gamma = -1.0;  // default derived from rate
  int epochs = 1;
  int reselect_every = 1;
  double zero_threshold = 1e-6;
  std::uint64_t seed = 1;
  TrainFlags flags;

  void run() const {
    const ToyModel model = load_archive(archive);

    if (!plan_path.empty()) {
      const PruningPlan plan = load_plan(plan_path);
      ToyModel pruned = apply_plan(model, plan, zero_threshold);
      PruneTrace trace;
      trace.final_plan = plan;
      if (!data.empty()) {
        const RetrievalTask task = generate_dataset(load_dataset_spec(data));
        const FineTune ft = flags.fine_tune(seed);
        std::vector<Tensor> velocity;
        for (int e = 0; e < epochs; ++e) {
          EpochRecord rec;
          rec.epoch = e;
          rec.loss = fine_tune_epoch(pruned, task, ft, e, velocity);
          trace.epochs.push_back(rec);
        }
      }
      if (!trace_path.empty()) save_trace(trace, trace_path);
      if (!plan_out.empty()) save_plan(plan, plan_out);
      save_archive(pruned, out);
      std::cout << "saved " << out << "\n";
      return;
    }

    check(rate >= 0.0 || !layer_rates.empty(),
          "prune: --rate or --layer-rate is required without --plan");
    std::map<int, double> rates;
    if (rate >= 0.0) rates = uniform_rates(model, rate);
    double max_rate = rate >= 0.0 ? rate : 0.0;
    for (const std::string& spec : layer_rates) {
      const std::size_t colon = spec.find(':');
      check(colon != std::string::npos, "prune: --layer-rate wants layer:rate, got '", spec, "'");
      try {
        const int layer = std::stoi(spec.substr(0, colon));
        const double r = std::stod(spec.substr(colon + 1));
        rates[layer] = r;
        max_rate = std::max(max_rate, r);
      } catch (const std::exception&) {
        fail("prune: bad --layer-rate '", spec, "'");
      }
    }
    DecaySchedule schedule;
    schedule.gamma = gamma >= 0.0 ? gamma : default_gamma(max_rate);
    schedule.epochs = epochs;
    schedule.reselect_every = reselect_every;
    schedule.zero_threshold = zero_threshold;
    schedule.prune_rates = rates;
    schedule.k = k;
    const Criterion c = parse_criterion(criterion, k, seed);

    std::optional<RetrievalTask> task;
    if (!data.empty()) task = generate_dataset(load_dataset_spec(data));
    const FineTune ft = flags.fine_tune(seed);

    std::ofstream trace_out;
    if (!trace_path.empty()) {
      trace_out.open(trace_path, std::ios::binary);
      check(trace_out.good(), "cannot write '", trace_path, "'");
    }
    auto on_epoch = [&trace_out](const EpochRecord& rec) {
      if (trace_out.is_open()) trace_out << record_to_json_line(rec) << "\n" << std::flush;
    };

    const ProgressiveResult result =
        progressive_prune(model, schedule, c, task ? &*task : nullptr, ft, on_epoch);
    if (!plan_out.empty()) save_plan(result.trace.final_plan, plan_out);
    save_archive(result.model, out);
    std::cout << "epochs " << result.trace.epochs.size() << "\n";
    std::cout << "saved " << out << "\n";
  }
};

// ----------------------------------------------------------------- sweep --

struct SweepCmd {
  std::string archive, data, out, criterion = "local", rates_csv = "0,0.2,0.4,0.6,0.8";
  int k = 1;
  int ft_epochs = 2;
  std::uint64_t seed = 1;
  std::vector<int> layers;
  TrainFlags flags;

  void run() const {
    const ToyModel model = load_archive(archive);
    const RetrievalTask task = generate_dataset(load_dataset_spec(data));
    const Criterion c = parse_criterion(criterion, k, seed);
    const FineTune ft = flags.fine_tune(seed);
    std::vector<double> rates;
    {
      std::istringstream is(rates_csv);
      std::string tok;
      while (std::getline(is, tok, ',')) {
        try {
          rates.push_back(std::stod(tok));
        } catch (const std::exception&) {
          fail("sweep: bad rate '", tok, "'");
        }
      }
      check(!rates.empty(), "sweep: no rates given");
    }
    std::vector<int> targets = layers.empty() ? prunable_conv_layers(model) : layers;
    std::vector<ordered_json> records;
    for (int layer : targets) {
      const std::vector<SweepPoint> curve =
          sensitivity_sweep(model, layer, rates, c, task, ft, ft_epochs);
      for (const SweepPoint& point : curve) {
        std::cout << "layer " << point.layer << " rate " << fmt(point.rate) << " map "
                  << fmt(point.map) << "\n";
        ordered_json j;
        j["layer"] = point.layer;
        j["rate"] = point.rate;
        j["map"] = point.map;
        records.push_back(std::move(j));
      }
    }
    if (!out.empty()) write_records(out, records);
  }
};

// -------------------------------------------------------------- evaluate --

struct EvaluateCmd {
  std::string archive, data, baseline, out;

  void run() const {
    const ToyModel model = load_archive(archive);
    const DatasetSpec spec = load_dataset_spec(data);
    const RetrievalTask task = generate_dataset(spec);
    const RetrievalEval eval = embed_task(model, task);

    const ArchSpec arch = arch_from_model(model, spec.channels, spec.height, spec.width);
    const ToyModel base = baseline.empty() ? model : load_archive(baseline);
    const ArchSpec base_arch = arch_from_model(base, spec.channels, spec.height, spec.width);

    const double map = mean_average_precision(eval);
    const auto flops = count_flops(arch);
    const auto params = count_params(arch);
    const auto base_flops = count_flops(base_arch);
    const auto base_params = count_params(base_arch);

    ordered_json j;
    j["map"] = map;
    std::cout << "map " << fmt(map) << "\n";
    for (int k : {1, 5, 10}) {
      if (static_cast<std::size_t>(k) > eval.gallery.size()) continue;
      const double r = rank_at(eval, k);
      std::cout << "rank@" << k << " " << fmt(r) << "\n";
      j["rank@" + std::to_string(k)] = r;
    }
    const double flops_down = 1.0 - static_cast<double>(flops) / static_cast<double>(base_flops);
    const double params_down =
        1.0 - static_cast<double>(params) / static_cast<double>(base_params);
    std::cout << "flops " << flops << "\n";
    std::cout << "params " << params << "\n";
    std::cout << "flops_down " << fmt(flops_down) << "\n";
    std::cout << "params_down " << fmt(params_down) << "\n";
    j["flops"] = flops;
    j["params"] = params;
    j["flops_down"] = flops_down;
    j["params_down"] = params_down;
    if (!out.empty()) write_records(out, {j});
  }
};

// --------------------------------------------------------------- compare --

struct CompareCmd {
  std::string archive, data, criteria_csv = "local,l1", out;
  double rate = 0.9;
  int k = 1;
  double gamma = -1.0;
  int epochs = 10;
  bool soft = false;  // drive hard criteria through the gamma=0 schedule instead
  std::uint64_t seed = 1;
  TrainFlags flags;

  void run() const {
    const ToyModel model = load_archive(archive);
    const DatasetSpec spec = load_dataset_spec(data);
    const RetrievalTask task = generate_dataset(spec);
    const FineTune ft = flags.fine_tune(seed);
    const std::map<int, double> rates = uniform_rates(model, rate);
    const std::vector<Tensor> probes = probe_images(task);
    const ArchSpec base_arch = arch_from_model(model, spec.channels, spec.height, spec.width);
    const auto base_flops = count_flops(base_arch);
    const auto base_params = count_params(base_arch);

    std::vector<std::string> names;
    {
      std::istringstream is(criteria_csv);
      std::string tok;
      while (std::getline(is, tok, ',')) names.push_back(tok);
      check(names.size() >= 2, "compare: need at least two criteria");
    }

    std::cout << "criterion map rank1 flops_down params_down drift\n";
    std::vector<ordered_json> records;
    for (const std::string& name : names) {
      const Criterion c = parse_criterion(name, k, seed);
      // median/center stand in for the soft-pruning methods and run through
      // the gamma=0 masking schedule; l1 and random are hard baselines
      // (one-shot prune, identical fine-tune budget) unless --soft is given
      const bool schedule_driven = c.kind == CriterionKind::local_geometry || soft ||
                                   c.kind == CriterionKind::geometric_median ||
                                   c.kind == CriterionKind::center_distance;
      ToyModel pruned;
      if (schedule_driven) {
        DecaySchedule schedule;
        schedule.gamma = c.kind == CriterionKind::local_geometry
                             ? (gamma >= 0.0 ? gamma : default_gamma(rate))
                             : 0.0;
        schedule.epochs = epochs;
        schedule.prune_rates = rates;
        schedule.k = k;
        pruned = progressive_prune(model, schedule, c, &task, ft).model;
      } else {
        pruned = one_shot_prune(model, rates, c).model;
        std::vector<Tensor> velocity;
        for (int e = 0; e < epochs; ++e) fine_tune_epoch(pruned, task, ft, e, velocity);
      }
      const RetrievalEval eval = embed_task(pruned, task);
      const ArchSpec arch = arch_from_model(pruned, spec.channels, spec.height, spec.width);
      const double map = mean_average_precision(eval);
      const double rank1 = rank_at(eval, 1);
      const double flops_down =
          1.0 - static_cast<double>(count_flops(arch)) / static_cast<double>(base_flops);
      const double params_down =
          1.0 - static_cast<double>(count_params(arch)) / static_cast<double>(base_params);
      const double drift = embedding_drift(model, pruned, probes);
      std::cout << name << " " << fmt(map) << " " << fmt(rank1) << " " << fmt(flops_down) << " "
                << fmt(params_down) << " " << fmt(drift) << "\n";
      ordered_json j;
      j["criterion"] = name;
      j["map"] = map;
      j["rank1"] = rank1;
      j["flops_down"] = flops_down;
      j["params_down"] = params_down;
      j["drift"] = drift;
      records.push_back(std::move(j));
    }
    if (!out.empty()) write_records(out, records);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"progressive local filter pruning toolkit"};
  app.require_subcommand(1);

  TrainCmd train;
  CLI::App* t = app.add_subcommand("train", "train a toy model on a synthetic retrieval task");
  t->add_option("--data", train.data, "dataset spec (json)")->required();
  t->add_option("--model", train.model_spec, "layer list, e.g. conv:12:3,relu,pool,gpool");
  t->add_option("--epochs", train.epochs, "training epochs");
  t->add_option("--seed", train.seed, "rng seed")->envname("PLFP_SEED");
  t->add_option("--out", train.out, "output weight archive")->required();
  train.flags.attach(t);

  PlanCmd plan;
  CLI::App* p = app.add_subcommand("plan", "select filters per layer and write a plan");
  p->add_option("--archive", plan.archive, "weight archive")->required();
  p->add_option("--criterion", plan.criterion, "local|l1|median|center|random");
  p->add_option("--rate", plan.rate, "prune rate in [0,1)");
  p->add_option("--k", plan.k, "neighbor count for the local criterion");
  p->add_option("--seed", plan.seed, "rng seed")->envname("PLFP_SEED");
  p->add_option("--layer", plan.layers, "layer index (repeatable; default: all prunable)");
  p->add_option("--out", plan.out, "output plan file")->required();

  PruneCmd prune;
  CLI::App* pr = app.add_subcommand("prune", "progressively prune (or apply a stored plan)");
  pr->add_option("--archive", prune.archive, "weight archive")->required();
  CLI::Option* plan_opt =
      pr->add_option("--plan", prune.plan_path, "stored plan to apply as a hard prune");
  plan_opt->excludes(pr->add_option("--criterion", prune.criterion,
                                    "local|l1|median|center|random"));
  plan_opt->excludes(pr->add_option("--rate", prune.rate, "uniform prune rate in [0,1)"));
  plan_opt->excludes(pr->add_option("--layer-rate", prune.layer_rates,
                                    "per-layer rate override, layer:rate (repeatable)"));
  pr->add_option("--k", prune.k, "neighbor count for the local criterion");
  pr->add_option("--gamma", prune.gamma, "decay factor in [0,1]; default 0.01 (P<=0.5) or 0.3");
  pr->add_option("--epochs", prune.epochs, "decreasing-fine-tune epochs");
  pr->add_option("--reselect-every", prune.reselect_every, "epochs between re-selections");
  pr->add_option("--zero-threshold", prune.zero_threshold,
                 "relative weight-norm threshold for converged filters");
  pr->add_option("--data", prune.data, "dataset spec for fine-tuning (omit for no training)");
  pr->add_option("--seed", prune.seed, "rng seed")->envname("PLFP_SEED");
  pr->add_option("--trace", prune.trace_path, "write per-epoch records here");
  pr->add_option("--plan-out", prune.plan_out, "write the final plan here");
  pr->add_option("--out", prune.out, "output weight archive")->required();
  prune.flags.attach(pr);

  SweepCmd sweep;
  CLI::App* sw = app.add_subcommand("sweep", "per-layer pruning sensitivity curves");
  sw->add_option("--archive", sweep.archive, "weight archive")->required();
  sw->add_option("--data", sweep.data, "dataset spec (json)")->required();
  sw->add_option("--criterion", sweep.criterion, "local|l1|median|center|random");
  sw->add_option("--k", sweep.k, "neighbor count for the local criterion");
  sw->add_option("--rates", sweep.rates_csv, "comma-separated prune rates");
  sw->add_option("--layer", sweep.layers, "layer index (repeatable; default: all prunable)");
  sw->add_option("--ft-epochs", sweep.ft_epochs, "fine-tune epochs per point");
  sw->add_option("--seed", sweep.seed, "rng seed")->envname("PLFP_SEED");
  sw->add_option("--out", sweep.out, "write (layer, rate, map) records here");
  sweep.flags.attach(sw);

  EvaluateCmd evaluate;
  CLI::App* ev = app.add_subcommand("evaluate", "retrieval metrics and cost accounting");
  ev->add_option("--archive", evaluate.archive, "weight archive")->required();
  ev->add_option("--data", evaluate.data, "dataset spec (json)")->required();
  ev->add_option("--baseline", evaluate.baseline, "unpruned reference archive");
  ev->add_option("--out", evaluate.out, "write a metrics record here");

  CompareCmd compare;
  CLI::App* cp = app.add_subcommand("compare", "run several criteria under one budget");
  cp->add_option("--archive", compare.archive, "weight archive")->required();
  cp->add_option("--data", compare.data, "dataset spec (json)")->required();
  cp->add_option("--criteria", compare.criteria_csv, "comma-separated criterion names");
  cp->add_option("--rate", compare.rate, "uniform prune rate in [0,1)");
  cp->add_option("--k", compare.k, "neighbor count for the local criterion");
  cp->add_option("--gamma", compare.gamma, "decay factor for the local criterion");
  cp->add_option("--epochs", compare.epochs, "fine-tune budget for every arm");
  cp->add_flag("--soft", compare.soft, "drive hard criteria through the gamma=0 schedule");
  cp->add_option("--seed", compare.seed, "rng seed")->envname("PLFP_SEED");
  cp->add_option("--out", compare.out, "write one record per criterion here");
  compare.flags.attach(cp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (t->parsed()) train.run();
    if (p->parsed()) plan.run();
    if (pr->parsed()) prune.run();
    if (sw->parsed()) sweep.run();
    if (ev->parsed()) evaluate.run();
    if (cp->parsed()) compare.run();
  } catch (const std::exception& e) {
    std::cerr << "plfp: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
