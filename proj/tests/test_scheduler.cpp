#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "plfp/archive.hpp"
#include "plfp/error.hpp"
#include "plfp/scheduler.hpp"

using namespace plfp;

namespace {

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

DatasetSpec tiny_spec(std::uint64_t seed) {
  DatasetSpec spec;
  spec.seed = seed;
  spec.classes = 6;
  spec.samples_per_class = 12;
  spec.queries_per_class = 3;
  spec.channels = 1;
  spec.height = 10;
  spec.width = 10;
  spec.proto_dim = 10;
  spec.noise = 0.3;
  return spec;
}

FineTune tiny_ft(std::uint64_t seed) {
  FineTune ft;
  ft.lr = 0.05;
  ft.batch_size = 6;
  ft.batches_per_epoch = 8;
  ft.seed = seed;
  return ft;
}

}  // namespace

TEST_CASE("default gamma follows the prune rate") {
  CHECK(default_gamma(0.1) == doctest::Approx(0.01));
  CHECK(default_gamma(0.5) == doctest::Approx(0.01));
  CHECK(default_gamma(0.9) == doctest::Approx(0.3));
}

TEST_CASE("gamma=0 with one epoch and no data equals one-shot hard pruning, byte for byte") {
  for (const char* crit : {"local", "l1", "median"}) {
    const ToyModel m =
        make_model(parse_model_spec("conv:8:3,relu,pool,conv:12:3,relu,conv:16:3,gpool", 1), 42);
    const Criterion c = parse_criterion(crit, 1, 7);
    DecaySchedule s;
    s.gamma = 0.0;
    s.epochs = 1;
    s.prune_rates = {{0, 0.5}, {3, 0.5}};
    s.k = 1;
    const ProgressiveResult progressive = progressive_prune(m, s, c, nullptr, tiny_ft(1));
    const ProgressiveResult oneshot = one_shot_prune(m, s.prune_rates, c);
    CHECK(model_digest(progressive.model) == model_digest(oneshot.model));
    save_archive(progressive.model, "sched_a.plfw");
    save_archive(oneshot.model, "sched_b.plfw");
    CHECK(file_bytes("sched_a.plfw") == file_bytes("sched_b.plfw"));
  }
}

TEST_CASE("gamma=1: the loop never shrinks norms by scaling; only the final removal prunes") {
  const ToyModel m =
      make_model(parse_model_spec("conv:8:3,relu,pool,conv:12:3,relu,conv:16:3,gpool", 1), 11);
  DecaySchedule s;
  s.gamma = 1.0;
  s.epochs = 4;
  s.prune_rates = {{0, 0.5}};
  s.k = 1;
  const Criterion c = parse_criterion("local", 1, 0);
  const ProgressiveResult r = progressive_prune(m, s, c, nullptr, tiny_ft(1));

  // without training, every epoch's norms equal the original ones
  const FilterBank original = bank_from_layer(m, 0);
  std::vector<double> expected;
  for (int f = 0; f < 8; ++f) expected.push_back(l2_norm(original.row(f), 9));
  REQUIRE(r.trace.epochs.size() == 4);
  for (const EpochRecord& rec : r.trace.epochs) {
    REQUIRE(rec.layers.size() == 1);
    for (int f = 0; f < 8; ++f)
      CHECK(rec.layers[0].norms[static_cast<std::size_t>(f)] ==
            expected[static_cast<std::size_t>(f)]);
  }
  // and the end state is exactly the one-shot result
  CHECK(model_digest(r.model) == model_digest(one_shot_prune(m, s.prune_rates, c).model));
}

TEST_CASE("compact") {
  SUBCASE("empty plan leaves the model untouched") {
    const ToyModel m = make_model(parse_model_spec("conv:4:3,relu,conv:6:3,gpool", 1), 5);
    PruningPlan plan;
    plan.layers.push_back({0, 0.0, "local", 1, {}});
    CHECK(model_digest(compact(m, plan)) == model_digest(m));
  }
  SUBCASE("masked and compacted models agree on 100 random inputs") {
    const ToyModel m =
        make_model(parse_model_spec("conv:5:3,relu,pool,conv:7:3,relu,gpool", 1), 19);
    ToyModel masked = m;
    scale_filter_inplace(masked, 0, 1, 0.0);
    scale_filter_inplace(masked, 0, 3, 0.0);
    PruningPlan plan;
    plan.layers.push_back({0, 0.4, "local", 1, {3, 1}});
    const ToyModel slim = compact(masked, plan);
    CHECK(slim.layers[0].c_out == 3);
    CHECK(slim.layers[3].c_in == 3);
    for (int t = 0; t < 100; ++t) {
      const Tensor x = testutil::random_image(1, 8, 8, 900 + static_cast<std::uint64_t>(t));
      const Tensor a = embed(masked, x);
      const Tensor b = embed(slim, x);
      REQUIRE(a.numel() == b.numel());
      for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-9);
    }
  }
  SUBCASE("pruning a conv feeding a linear head drops the matching columns") {
    const ToyModel m =
        make_model(parse_model_spec("conv:6:3,relu,gpool,linear:5", 1), 23);
    ToyModel masked = m;
    scale_filter_inplace(masked, 0, 4, 0.0);
    PruningPlan plan;
    plan.layers.push_back({0, 0.2, "local", 1, {4}});
    const ToyModel slim = compact(masked, plan);
    CHECK(slim.layers[0].c_out == 5);
    CHECK(slim.layers[3].c_in == 5);
    for (int t = 0; t < 20; ++t) {
      const Tensor x = testutil::random_image(1, 6, 6, 300 + static_cast<std::uint64_t>(t));
      const Tensor a = embed(masked, x);
      const Tensor b = embed(slim, x);
      for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-9);
    }
  }
  SUBCASE("the embedding layer is rejected") {
    const ToyModel m = make_model(parse_model_spec("conv:4:3,relu,conv:6:3,gpool", 1), 5);
    PruningPlan plan;
    plan.layers.push_back({2, 0.2, "local", 1, {0}});
    CHECK_THROWS_AS(compact(m, plan), Error);
  }
  SUBCASE("filters above the zero threshold are listed as offenders") {
    const ToyModel m = make_model(parse_model_spec("conv:4:3,relu,conv:6:3,gpool", 1), 5);
    PruningPlan plan;
    plan.layers.push_back({0, 0.25, "local", 1, {2}});  // never zeroed
    CHECK_THROWS_WITH_AS(compact(m, plan), doctest::Contains("{2}"), Error);
  }
}

TEST_CASE("trace is complete and the final plan equals the last selection") {
  const RetrievalTask task = generate_dataset(tiny_spec(3));
  const ToyModel m =
      make_model(parse_model_spec("conv:8:3,relu,pool,conv:12:3,relu,conv:16:3,gpool", 1), 8);
  DecaySchedule s;
  s.gamma = 0.3;
  s.epochs = 5;
  s.prune_rates = {{0, 0.5}, {3, 0.5}};
  s.k = 1;
  int callbacks = 0;
  const ProgressiveResult r = progressive_prune(m, s, parse_criterion("local", 1, 0), &task,
                                                tiny_ft(5),
                                                [&callbacks](const EpochRecord&) { ++callbacks; });
  CHECK(callbacks == 5);
  REQUIRE(r.trace.epochs.size() == 5);
  for (int e = 0; e < 5; ++e) CHECK(r.trace.epochs[static_cast<std::size_t>(e)].epoch == e);
  REQUIRE(r.trace.final_plan.layers.size() == 2);
  const EpochRecord& last = r.trace.epochs.back();
  for (const PlanLayer& pl : r.trace.final_plan.layers) {
    bool found = false;
    for (const LayerEpochRecord& lr : last.layers) {
      if (lr.layer != pl.layer) continue;
      found = true;
      CHECK(lr.selected == pl.selected);
    }
    CHECK(found);
  }
  // the compacted model lost the planned filters
  CHECK(r.model.layers[0].c_out == 4);
  CHECK(r.model.layers[3].c_out == 6);
}

TEST_CASE("de-selected filters recover norm while training (gamma near 1)") {
  const RetrievalTask task = generate_dataset(tiny_spec(17));
  bool observed = false;
  for (std::uint64_t seed = 1; seed <= 12 && !observed; ++seed) {
    const ToyModel m =
        make_model(parse_model_spec("conv:6:3,relu,pool,conv:10:3,relu,conv:12:3,gpool", 1), seed);
    DecaySchedule s;
    s.gamma = 0.9;
    s.epochs = 8;
    s.prune_rates = {{0, 0.34}};
    s.k = 1;
    FineTune ft = tiny_ft(seed);
    ft.lr = 0.08;
    const ProgressiveResult r =
        progressive_prune(m, s, parse_criterion("local", 1, 0), &task, ft);
    for (std::size_t e = 0; e + 1 < r.trace.epochs.size() && !observed; ++e) {
      const auto& cur = r.trace.epochs[e].layers[0];
      const auto& next = r.trace.epochs[e + 1].layers[0];
      for (int f : cur.selected) {
        const bool still =
            std::find(next.selected.begin(), next.selected.end(), f) != next.selected.end();
        if (!still && next.norms[static_cast<std::size_t>(f)] >
                          cur.norms[static_cast<std::size_t>(f)]) {
          observed = true;
          break;
        }
      }
    }
  }
  CHECK(observed);
}

TEST_CASE("the harness trains with the contrastive loss as well") {
  const RetrievalTask task = generate_dataset(tiny_spec(21));
  ToyModel m = make_model(parse_model_spec("conv:6:3,relu,pool,conv:10:3,relu,gpool", 1), 13);
  FineTune ft = tiny_ft(21);
  ft.loss = {LossKind::contrastive, 0.85};
  std::vector<Tensor> velocity;
  double first = 0.0, last = 0.0;
  for (int e = 0; e < 8; ++e) {
    last = fine_tune_epoch(m, task, ft, e, velocity);
    if (e == 0) first = last;
  }
  CHECK(last < first);  // the pair loss actually decreases
  for (const Tensor& p : m.params)
    if (!p.empty()) CHECK(all_finite(p));
  CHECK(evaluate_map(m, task) > 0.0);
}

TEST_CASE("negative margins are rejected") {
  ToyModel m = make_model(parse_model_spec("conv:4:3,relu,gpool", 1), 3);
  Batch batch;
  batch.triplets.push_back({testutil::random_image(1, 6, 6, 1), testutil::random_image(1, 6, 6, 2),
                            testutil::random_image(1, 6, 6, 3)});
  CHECK_THROWS_AS(train_step(m, batch, {LossKind::triplet, -0.5}, 0.1), Error);
  CHECK_THROWS_AS(parse_loss("triplet", -1.0), Error);
}

TEST_CASE("progressive decay matches or beats one-shot pruning at P=0.5 (median of 5 seeds)") {
  std::vector<double> progressive_map, oneshot_map;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    DatasetSpec spec;
    spec.seed = 500 + seed;
    spec.classes = 8;
    spec.samples_per_class = 20;
    spec.queries_per_class = 4;
    spec.channels = 1;
    spec.height = 10;
    spec.width = 10;
    spec.proto_dim = 12;
    spec.noise = 0.25;
    const RetrievalTask task = generate_dataset(spec);
    ToyModel model = make_model(
        parse_model_spec("conv:8:3,relu,pool,conv:16:3,relu,conv:24:3,gpool", 1), 7 + seed);
    FineTune ft;
    ft.lr = 0.05;
    ft.batch_size = 6;
    ft.batches_per_epoch = 10;
    ft.seed = seed;
    std::vector<Tensor> velocity;
    for (int e = 0; e < 15; ++e) fine_tune_epoch(model, task, ft, e, velocity);

    FineTune prune_ft = ft;
    prune_ft.lr = 0.02;
    DecaySchedule s;
    s.gamma = 0.3;
    s.epochs = 30;
    s.prune_rates = {{0, 0.5}, {3, 0.5}};
    s.k = 1;
    progressive_map.push_back(evaluate_map(
        progressive_prune(model, s, parse_criterion("local", 1, 0), &task, prune_ft).model, task));

    ToyModel oneshot = one_shot_prune(model, s.prune_rates, parse_criterion("local", 1, 0)).model;
    std::vector<Tensor> v2;
    for (int e = 0; e < 30; ++e) fine_tune_epoch(oneshot, task, prune_ft, e, v2);
    oneshot_map.push_back(evaluate_map(oneshot, task));
  }
  CHECK(testutil::median(progressive_map) >= testutil::median(oneshot_map));
}

TEST_CASE("aborted training preserves the completed epochs") {
  const RetrievalTask task = generate_dataset(tiny_spec(4));
  ToyModel m =
      make_model(parse_model_spec("conv:6:3,relu,pool,conv:8:3,relu,conv:12:3,gpool", 1), 2);
  DecaySchedule s;
  s.gamma = 0.5;
  s.epochs = 6;
  s.prune_rates = {{0, 0.3}};
  s.k = 1;
  FineTune ft = tiny_ft(2);
  ft.lr = 1e150;  // guaranteed divergence in the first epoch
  try {
    progressive_prune(m, s, parse_criterion("local", 1, 0), &task, ft);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.trace.epochs.empty());  // epoch 0 never completed
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
}

TEST_CASE("sensitivity sweep") {
  const RetrievalTask task = generate_dataset(tiny_spec(9));
  ToyModel m =
      make_model(parse_model_spec("conv:8:3,relu,pool,conv:12:3,relu,conv:16:3,gpool", 1), 31);
  std::vector<Tensor> velocity;
  FineTune ft = tiny_ft(9);
  for (int e = 0; e < 10; ++e) fine_tune_epoch(m, task, ft, e, velocity);
  const double baseline = evaluate_map(m, task);
  const std::uint64_t digest_before = model_digest(m);

  const std::vector<double> rates = {0.0, 0.2, 0.4, 0.6, 0.8};
  const std::vector<SweepPoint> curve =
      sensitivity_sweep(m, 0, rates, parse_criterion("local", 1, 0), task, ft, 1);

  SUBCASE("rate zero reproduces the baseline exactly and nothing leaks between points") {
    REQUIRE(curve.size() == 5);
    CHECK(curve[0].map == baseline);
    CHECK(model_digest(m) == digest_before);
  }
  SUBCASE("some layer degrades monotone-ish (rank correlation <= 0)") {
    double best_rho = 1.0;
    for (int layer : prunable_conv_layers(m)) {
      const std::vector<SweepPoint> c =
          sensitivity_sweep(m, layer, rates, parse_criterion("local", 1, 0), task, ft, 1);
      // Spearman with average ranks over the 5 points
      std::vector<double> maps;
      for (const SweepPoint& p : c) maps.push_back(p.map);
      std::vector<double> rank(5);
      for (int i = 0; i < 5; ++i) {
        double less = 0, equals = 0;
        for (int j = 0; j < 5; ++j) {
          if (maps[static_cast<std::size_t>(j)] < maps[static_cast<std::size_t>(i)]) ++less;
          if (maps[static_cast<std::size_t>(j)] == maps[static_cast<std::size_t>(i)]) ++equals;
        }
        rank[static_cast<std::size_t>(i)] = less + 0.5 * (equals - 1);
      }
      const double mean_rank = 2.0;
      double num = 0, da = 0, db = 0;
      for (int i = 0; i < 5; ++i) {
        const double a = i - mean_rank;  // rates are already sorted ascending
        const double b = rank[static_cast<std::size_t>(i)] - mean_rank;
        num += a * b;
        da += a * a;
        db += b * b;
      }
      const double rho = db == 0.0 ? 0.0 : num / std::sqrt(da * db);
      best_rho = std::min(best_rho, rho);
    }
    CHECK(best_rho <= 0.0);
  }
}
