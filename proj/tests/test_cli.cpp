#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <string>

#include "plfp/archive.hpp"
#include "plfp/dataset.hpp"
#include "plfp/metrics.hpp"
#include "plfp/plan.hpp"

using namespace plfp;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = 0;
  std::string output;  // stdout
};

CliResult run_cli(const std::string& args, const std::string& dir,
                  const std::string& env = "") {
  const std::string out_file = dir + "/stdout.txt";
  const std::string cmd = "cd " + dir + " && " + env + " " + PLFP_CLI + " " + args + " > " +
                          out_file + " 2> stderr.txt";
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WEXITSTATUS(rc);
  std::ifstream in(out_file, std::ios::binary);
  r.output.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// A fresh work dir with a dataset spec and a lightly trained archive.
struct Workspace {
  std::string dir;

  explicit Workspace(const std::string& name) {
    dir = (fs::current_path() / ("cli_" + name)).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    DatasetSpec spec;
    spec.seed = 5;
    spec.classes = 6;
    spec.samples_per_class = 12;
    spec.queries_per_class = 3;
    spec.channels = 1;
    spec.height = 10;
    spec.width = 10;
    spec.proto_dim = 10;
    spec.noise = 0.3;
    save_dataset_spec(spec, dir + "/ds.json");
    const CliResult r = run_cli(
        "train --data ds.json --model conv:8:3,relu,pool,conv:12:3,relu,conv:16:3,gpool "
        "--epochs 6 --batches 8 --batch-size 6 --seed 3 --out model.plfw",
        dir);
    REQUIRE(r.exit_code == 0);
  }
};

}  // namespace

TEST_CASE("plan: rate zero yields empty selections and exit 0") {
  Workspace ws("plan0");
  const CliResult r = run_cli("plan --archive model.plfw --rate 0 --out plan.txt", ws.dir);
  CHECK(r.exit_code == 0);
  const PruningPlan plan = load_plan(ws.dir + "/plan.txt");
  REQUIRE(plan.layers.size() == 2);
  for (const PlanLayer& l : plan.layers) CHECK(l.selected.empty());
}

TEST_CASE("plan: repeated runs are byte-identical") {
  Workspace ws("plandet");
  REQUIRE(run_cli("plan --archive model.plfw --rate 0.5 --k 1 --out p1.txt", ws.dir).exit_code == 0);
  REQUIRE(run_cli("plan --archive model.plfw --rate 0.5 --k 1 --out p2.txt", ws.dir).exit_code == 0);
  CHECK(slurp(ws.dir + "/p1.txt") == slurp(ws.dir + "/p2.txt"));
}

TEST_CASE("plan reproduces the 3-filter hand case") {
  Workspace ws("planhand");
  // craft a 3-filter conv layer with rows {0,1,10} plus an embedding layer
  ToyModel m = make_model(parse_model_spec("conv:3:1,relu,conv:4:1,gpool", 1), 1);
  m.params[0].data = {0.0, 1.0, 10.0};
  save_archive(m, ws.dir + "/hand.plfw");
  const CliResult r =
      run_cli("plan --archive hand.plfw --rate 0.34 --k 1 --layer 0 --out hand.txt", ws.dir);
  CHECK(r.exit_code == 0);
  const PruningPlan plan = load_plan(ws.dir + "/hand.txt");
  REQUIRE(plan.layers.size() == 1);
  CHECK(plan.layers[0].selected == std::vector<int>{1});
}

TEST_CASE("prune: gamma 0, one epoch, no data equals applying the plan, byte for byte") {
  Workspace ws("prunehard");
  REQUIRE(run_cli("plan --archive model.plfw --rate 0.5 --k 1 --out plan.txt", ws.dir).exit_code ==
          0);
  REQUIRE(run_cli("prune --archive model.plfw --plan plan.txt --out by_plan.plfw", ws.dir)
              .exit_code == 0);
  REQUIRE(run_cli("prune --archive model.plfw --criterion local --rate 0.5 --k 1 --gamma 0 "
                  "--epochs 1 --out by_loop.plfw",
                  ws.dir)
              .exit_code == 0);
  CHECK(slurp(ws.dir + "/by_plan.plfw") == slurp(ws.dir + "/by_loop.plfw"));
  // re-applying the stored plan reproduces the pruned archive byte for byte
  REQUIRE(run_cli("prune --archive model.plfw --plan plan.txt --out by_plan2.plfw", ws.dir)
              .exit_code == 0);
  CHECK(slurp(ws.dir + "/by_plan.plfw") == slurp(ws.dir + "/by_plan2.plfw"));
}

TEST_CASE("prune: trace has one line per epoch and the archive accounts consistently") {
  Workspace ws("prunetrace");
  const CliResult r = run_cli(
      "prune --archive model.plfw --criterion local --rate 0.5 --k 1 --gamma 0.3 --epochs 4 "
      "--data ds.json --batches 6 --batch-size 6 --seed 3 --trace t.jsonl --plan-out final.plan "
      "--out pruned.plfw",
      ws.dir);
  REQUIRE(r.exit_code == 0);
  std::ifstream in(ws.dir + "/t.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 4);

  // cross-module consistency: the stored shapes account exactly
  const ToyModel pruned = load_archive(ws.dir + "/pruned.plfw");
  CHECK(pruned.layers[0].c_out == 4);
  CHECK(pruned.layers[3].c_out == 6);
  const ArchSpec arch = arch_from_model(pruned, 1, 10, 10);
  std::int64_t expect = 0;
  for (std::size_t i = 0; i < pruned.layers.size(); ++i)
    if (!pruned.params[i].empty()) expect += static_cast<std::int64_t>(pruned.params[i].numel());
  CHECK(count_params(arch) == expect);

  // re-applying the final plan to the original reproduces the archive exactly
  REQUIRE(run_cli("prune --archive model.plfw --criterion local --rate 0.5 --k 1 --gamma 0.3 "
                  "--epochs 4 --data ds.json --batches 6 --batch-size 6 --seed 3 "
                  "--out pruned2.plfw",
                  ws.dir)
              .exit_code == 0);
  CHECK(slurp(ws.dir + "/pruned.plfw") == slurp(ws.dir + "/pruned2.plfw"));
}

TEST_CASE("prune accepts per-layer rate overrides") {
  Workspace ws("layerrate");
  REQUIRE(run_cli("prune --archive model.plfw --criterion local --k 1 --layer-rate 0:0.5 "
                  "--layer-rate 3:0.25 --gamma 0 --epochs 1 --out lr.plfw",
                  ws.dir)
              .exit_code == 0);
  const ToyModel pruned = load_archive(ws.dir + "/lr.plfw");
  CHECK(pruned.layers[0].c_out == 4);   // 8 - floor(0.5*8)
  CHECK(pruned.layers[3].c_out == 9);   // 12 - floor(0.25*12)
  CHECK(run_cli("prune --archive model.plfw --criterion local --layer-rate 0:bad --gamma 0 "
                "--epochs 1 --out x.plfw",
                ws.dir)
            .exit_code == 2);
}

TEST_CASE("evaluate: unpruned archive reports zero reductions") {
  Workspace ws("eval0");
  const CliResult r = run_cli("evaluate --archive model.plfw --data ds.json", ws.dir);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("flops_down 0.000000") != std::string::npos);
  CHECK(r.output.find("params_down 0.000000") != std::string::npos);
  CHECK(r.output.find("map ") != std::string::npos);
  CHECK(r.output.find("rank@1 ") != std::string::npos);
}

TEST_CASE("compare: identical criteria produce identical rows, and reruns are stable") {
  Workspace ws("cmp");
  const std::string args =
      "compare --archive model.plfw --data ds.json --criteria l1,l1 --rate 0.5 --epochs 2 "
      "--batches 6 --batch-size 6 --seed 3";
  const CliResult a = run_cli(args, ws.dir);
  REQUIRE(a.exit_code == 0);
  // two identical criteria -> identical rows
  std::istringstream is(a.output);
  std::string header, row1, row2;
  std::getline(is, header);
  std::getline(is, row1);
  std::getline(is, row2);
  CHECK(row1 == row2);
  const CliResult b = run_cli(args, ws.dir);
  CHECK(a.output == b.output);
}

TEST_CASE("sweep emits one record per (layer, rate)") {
  Workspace ws("sweep");
  const CliResult r = run_cli(
      "sweep --archive model.plfw --data ds.json --layer 0 --rates 0,0.4 --ft-epochs 1 "
      "--batches 4 --batch-size 6 --seed 3 --out sweep.jsonl",
      ws.dir);
  REQUIRE(r.exit_code == 0);
  std::ifstream in(ws.dir + "/sweep.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 2);
}

TEST_CASE("exit codes: usage errors give 1, runtime failures give 2") {
  Workspace ws("codes");
  CHECK(run_cli("plan --archive model.plfw", ws.dir).exit_code == 1);       // missing --out
  CHECK(run_cli("bogus-subcommand", ws.dir).exit_code == 1);
  CHECK(run_cli("evaluate --archive model.plfw --data missing.json", ws.dir).exit_code == 2);
  CHECK(run_cli("prune --archive model.plfw --criterion local --rate 2.0 --out x.plfw", ws.dir)
            .exit_code == 2);
}

TEST_CASE("diverging training exits 2 and keeps the completed trace records") {
  Workspace ws("nan");
  const CliResult r = run_cli(
      "prune --archive model.plfw --criterion local --rate 0.5 --k 1 --gamma 0.3 --epochs 5 "
      "--data ds.json --lr 1e155 --batches 4 --batch-size 6 --seed 3 --trace t.jsonl "
      "--out never.plfw",
      ws.dir);
  CHECK(r.exit_code == 2);
  CHECK_FALSE(fs::exists(ws.dir + "/never.plfw"));
  CHECK(fs::exists(ws.dir + "/t.jsonl"));  // the trace file survives the abort
}

TEST_CASE("PLFP_SEED environment variable acts as the --seed fallback") {
  Workspace ws("seedenv");
  REQUIRE(run_cli("plan --archive model.plfw --criterion random --rate 0.5 --seed 99 "
                  "--out by_flag.txt",
                  ws.dir)
              .exit_code == 0);
  REQUIRE(run_cli("plan --archive model.plfw --criterion random --rate 0.5 --out by_env.txt",
                  ws.dir, "PLFP_SEED=99")
              .exit_code == 0);
  CHECK(slurp(ws.dir + "/by_flag.txt") == slurp(ws.dir + "/by_env.txt"));
}
