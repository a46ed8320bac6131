#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "rprloc/errors.hpp"
#include "rprloc/pipeline.hpp"
#include "test_support.hpp"

using namespace rprloc;
using rprloc::testing::source_dir;
using rprloc::testing::TempDir;
namespace fs = std::filesystem;

namespace {

CommandContext small_context(const fs::path& out) {
  CommandContext ctx;
  ctx.config = load_run_config(source_dir() / "configs" / "small.json");
  ctx.config.output_dir = out;
  ctx.config.validate();
  ctx.config.resolve();
  return ctx;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an rprloc::Error");
  return ErrorKind::kInvalidArgument;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RPRLOC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("run config parsing is strict") {
  CHECK(kind_of([] { run_config_from_json(nlohmann::json{{"schema_version", 1}, {"bogus", 2}}); }) ==
        ErrorKind::kConfig);
  CHECK(kind_of([] { run_config_from_json(nlohmann::json{{"schema_version", 2}}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { run_config_from_json(nlohmann::json{{"seed", 1}}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] {
          run_config_from_json(nlohmann::json{{"schema_version", 1}, {"inference", {{"strategy", "corners"}}}});
        }) == ErrorKind::kConfig);
  const RunConfig c = run_config_from_json(nlohmann::json{{"schema_version", 1}, {"seed", 5}});
  CHECK(c.n_train + c.n_val + c.n_test == 32);
  CHECK(c.inference.ensemble == 15);
}

TEST_CASE("config json round-trips and the seed reaches every section") {
  RunConfig c = load_run_config(source_dir() / "configs" / "desk.json");
  c.seed = 9;
  c.output_dir = "/tmp/x";
  c.resolve();
  CHECK(c.phantom.seed == 9);
  CHECK(c.coarse.seed == 9);
  CHECK(c.fine.seed == 9);
  CHECK(c.autoencoder.seed == 9);
  CHECK(c.coarse.dataset == "/tmp/x/dataset");
  const RunConfig back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("output root env var anchors relative output dirs") {
  ::setenv(kOutputRootEnv, "/tmp/rprloc_root", 1);
  RunConfig c;
  c.output_dir = "runs/a";
  c.resolve();
  CHECK(c.output_dir == fs::path("/tmp/rprloc_root/runs/a"));
  ::unsetenv(kOutputRootEnv);
}

TEST_CASE("run lock is exclusive") {
  TempDir dir("lock");
  {
    const RunLock lock(dir.path());
    CHECK(kind_of([&] { const RunLock again(dir.path()); }) == ErrorKind::kConfig);
  }
  CHECK_NOTHROW(RunLock(dir.path()));
}

TEST_CASE("training without a dataset names the generate command") {
  TempDir dir("nodata");
  const CommandContext ctx = small_context(dir.path());
  try {
    cmd_train(ctx, "coarse");
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIo);
    CHECK(std::string(e.what()).find("generate") != std::string::npos);
  }
}

TEST_CASE("generate refuses to overwrite and regenerates identically") {
  TempDir dir("gen");
  CommandContext ctx = small_context(dir.path());
  cmd_generate(ctx);
  const std::string first = slurp(dir.path() / "dataset" / kManifestFile);
  CHECK(load_dataset(dir.path() / "dataset").cases.size() == 6);
  CHECK_THROWS_AS(cmd_generate(ctx), Error);
  ctx.overwrite = true;
  cmd_generate(ctx);
  CHECK(slurp(dir.path() / "dataset" / kManifestFile) == first);
  CHECK(fs::exists(dir.path() / "config.generate.resolved.json"));
  CHECK_FALSE(fs::exists(dir.path() / ".rprloc.lock"));
}

TEST_CASE("full command chain on the small config") {
  TempDir dir("chain");
  CommandContext ctx = small_context(dir.path());
  const Workspace ws = ctx.workspace();
  cmd_generate(ctx);
  cmd_train(ctx, "coarse");
  cmd_train(ctx, "fine");
  cmd_train(ctx, "autoencoder");

  SUBCASE("two checkpoints with distinct stages and one loss row per epoch") {
    CHECK(ProjectionModel::load(ws.checkpoint("coarse")).stage() == Stage::kCoarse);
    CHECK(ProjectionModel::load(ws.checkpoint("fine")).stage() == Stage::kFine);
    CHECK(read_loss_csv(ws.loss_csv("coarse")).size() == static_cast<std::size_t>(ctx.config.coarse.epochs));
    CHECK(read_loss_csv(ws.loss_csv("fine")).size() == static_cast<std::size_t>(ctx.config.fine.epochs));
    CHECK(fs::exists(dir.path() / "config.train_coarse.resolved.json"));
    CHECK_THROWS_AS(cmd_train(ctx, "coarse"), Error);
  }

  SUBCASE("deterministic retraining reproduces the final loss") {
    const double before = read_loss_csv(ws.loss_csv("coarse")).back().mean_loss;
    CommandContext again = ctx;
    again.overwrite = true;
    cmd_train(again, "coarse");
    CHECK(read_loss_csv(ws.loss_csv("coarse")).back().mean_loss == before);
  }

  SUBCASE("locate writes one report per test case with K runs per point") {
    cmd_locate(ctx);
    const DatasetManifest manifest = load_dataset(ws.dataset());
    const auto test = manifest.split("test");
    for (const DatasetCase* c : test) {
      const auto j = nlohmann::json::parse(slurp(ws.reports() / (c->id + ".json")));
      CHECK(j.at("organs").size() == ctx.config.phantom.organs.size());
      for (const auto& organ : j.at("organs")) {
        CHECK(organ.at("points").size() == 6);
        for (const auto& p : organ.at("points")) CHECK(p.at("runs").size() == 3);
        CHECK(organ.at("wall_time_s").get<double>() > 0.0);
      }
    }
    CommandContext diag = ctx;
    diag.config.inference.strategy = BoxStrategy::kDiagonal;
    cmd_locate(diag);
    const auto j = nlohmann::json::parse(slurp(ws.reports() / (test.front()->id + ".json")));
    CHECK(j.at("organs")[0].at("points").size() == 2);
  }

  SUBCASE("swapped checkpoints are refused") {
    fs::copy_file(ws.checkpoint("fine"), ws.checkpoint("coarse"), fs::copy_options::overwrite_existing);
    CHECK(kind_of([&] { cmd_locate(ctx); }) == ErrorKind::kStageMismatch);
  }

  SUBCASE("benchmark reports six methods and records failures per row") {
    cmd_benchmark(ctx);
    std::ifstream in(ws.tables() / "table3.csv");
    std::string line;
    std::getline(in, line);
    std::set<std::string> methods;
    while (std::getline(in, line)) methods.insert(line.substr(0, line.find(',')));
    CHECK(methods == std::set<std::string>{"ours", "gs_mse", "gs_cosine", "gs_ncc", "fm_mse", "fm_cosine"});

    fs::remove(ws.checkpoint("autoencoder"));
    cmd_benchmark(ctx);
    const std::string bench = slurp(ws.tables() / "benchmark.csv");
    CHECK(bench.find("fm_mse") != std::string::npos);
    CHECK(bench.find("failed") != std::string::npos);
    CHECK(bench.find("gs_ncc") != std::string::npos);
  }

  SUBCASE("evaluate writes both tables with the expected rows") {
    cmd_evaluate(ctx);
    CHECK(count_lines(ws.tables() / "table1.csv") == 1 + 4 * 5);
    CHECK(count_lines(ws.tables() / "table2.csv") == 1 + 3 * 5);
    CHECK(slurp(ws.tables() / "table1.csv").find("iou_seed_std") != std::string::npos);
    CHECK(fs::exists(ws.tables() / "table2.txt"));
  }
}

TEST_CASE("csv comparison skips time columns only") {
  TempDir dir("csv");
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir.path() / name) << body;
  };
  write("a.csv", "m,iou,time_s\nours,0.5,1.0\n");
  write("b.csv", "m,iou,time_s\nours,0.5,2.0\n");
  write("c.csv", "m,iou,time_s\nours,0.6,1.0\n");
  CHECK(compare_csv_ignoring_time(dir.path() / "a.csv", dir.path() / "b.csv").empty());
  CHECK_FALSE(compare_csv_ignoring_time(dir.path() / "a.csv", dir.path() / "c.csv").empty());
}

TEST_CASE("command-line exit codes") {
  TempDir dir("cli");
  const fs::path bad = dir.path() / "bad.json";
  std::ofstream(bad) << R"({"schema_version": 1, "colour": "blue"})";
  CHECK(run_cli("generate --config " + bad.string()) == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("train --stage coarse --config " + bad.string()) == 2);

  const fs::path cfg = source_dir() / "configs" / "small.json";
  const std::string env = "RPRLOC_OUTPUT_ROOT=" + dir.path().string() + " ";
  CHECK(std::system((env + RPRLOC_CLI_PATH + " train --stage coarse --config " + cfg.string() + " > /dev/null 2>&1").c_str()) != 0);
  const int rc = std::system((env + RPRLOC_CLI_PATH + " train --stage coarse --config " + cfg.string() + " > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(rc) == 3);
  const int ok = std::system((env + RPRLOC_CLI_PATH + " generate --config " + cfg.string() + " > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(ok) == 0);
  CHECK(fs::exists(dir.path() / "runs" / "small" / "dataset" / kManifestFile));
}
