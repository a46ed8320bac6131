#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rprloc/errors.hpp"
#include "rprloc/pipeline.hpp"

namespace {

using rprloc::ErrorKind;

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kStageMismatch:
    case ErrorKind::kLookup:
      return kExitConfig;
    case ErrorKind::kDivergence:
      return kExitDivergence;
    default:
      return kExitData;
  }
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string stage;
  std::optional<std::string> strategy;
  std::optional<int> ensemble;
  std::optional<int> steps;
  bool overwrite = false;
  bool deterministic = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Global seed, overrides the config");
  cmd->add_flag("--overwrite", f.overwrite, "Replace existing outputs");
  cmd->add_flag("--deterministic", f.deterministic, "Force deterministic mode");
}

void add_inference(CLI::App* cmd, Flags& f) {
  cmd->add_option("--strategy", f.strategy, "Box strategy")->check(CLI::IsMember({"extreme", "diagonal"}));
  cmd->add_option("--ensemble", f.ensemble, "Multi-run ensemble size K")->check(CLI::PositiveNumber);
  cmd->add_option("--steps", f.steps, "Coarse inference steps")->check(CLI::PositiveNumber);
}

rprloc::RunConfig resolve_config(const Flags& f) {
  rprloc::RunConfig cfg = rprloc::load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.strategy) cfg.inference.strategy = rprloc::box_strategy_from_string(*f.strategy);
  if (f.ensemble) cfg.inference.ensemble = *f.ensemble;
  if (f.steps) cfg.inference.coarse_steps = *f.steps;
  if (f.deterministic) cfg.deterministic = true;
  cfg.validate();
  cfg.resolve();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot landmark and organ box localization by relative position regression"};
  app.require_subcommand(1);
  Flags f;

  auto* generate = app.add_subcommand("generate", "Generate the phantom dataset");
  auto* train = app.add_subcommand("train", "Train one stage model");
  auto* locate = app.add_subcommand("locate", "Localize organs in the test split");
  auto* benchmark = app.add_subcommand("benchmark", "Compare against sliding-window baselines");
  auto* evaluate = app.add_subcommand("evaluate", "Strategy, ensemble and multi-step tables");
  auto* repro = app.add_subcommand("repro-tables", "Run every step and emit all tables");
  for (auto* cmd : {generate, train, locate, benchmark, evaluate, repro}) add_common(cmd, f);
  for (auto* cmd : {locate, benchmark, evaluate, repro}) add_inference(cmd, f);
  train->add_option("--stage", f.stage, "Stage to train")
      ->required()
      ->check(CLI::IsMember({"coarse", "fine", "autoencoder"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    rprloc::CommandContext ctx;
    ctx.config = resolve_config(f);
    ctx.overwrite = f.overwrite;
    const auto t0 = std::chrono::steady_clock::now();
    ctx.log = [t0](const std::string& msg) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "[%8.1fs] %s\n", s, msg.c_str());
    };
    if (*generate) rprloc::cmd_generate(ctx);
    if (*train) rprloc::cmd_train(ctx, f.stage);
    if (*locate) rprloc::cmd_locate(ctx);
    if (*benchmark) rprloc::cmd_benchmark(ctx);
    if (*evaluate) rprloc::cmd_evaluate(ctx);
    if (*repro) rprloc::cmd_repro_tables(ctx);
  } catch (const rprloc::Error& e) {
    std::cerr << "error (" << rprloc::to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUnexpected;
  }
  return kExitOk;
}
