#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"

#include "funcspace/errors.hpp"
#include "funcspace/experiment.hpp"
#include "funcspace/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"funcspace: function-space measurement and regularization for small networks"};
  app.set_version_flag("--version", funcspace::kVersion);

  std::string kind;
  std::string config_path;
  long long seed = -1;
  std::string out_dir;

  app.add_option("kind", kind,
                 "experiment kind: train | distances | embed | forget | compare-optimizers | "
                 "estimator-convergence")
      ->required();
  app.add_option("--config", config_path, "path to a JSON experiment config")->required();
  app.add_option("--seed", seed, "override the config's seed");
  app.add_option("--out", out_dir, "override the config's output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are config errors
  }

  try {
    funcspace::ExperimentConfig cfg = funcspace::load_config(config_path);
    const funcspace::ExperimentKind requested = funcspace::parse_experiment_kind(kind);
    if (requested != cfg.kind)
      throw funcspace::ConfigError("config kind \"" + experiment_kind_name(cfg.kind) +
                                   "\" does not match requested \"" + kind + "\"");
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    funcspace::RunLog log = funcspace::run_experiment(cfg);
    std::printf("%s: ok (%.1fs, %zu files in %s)\n", log.kind.c_str(), log.wall_clock_seconds,
                log.outputs.size(), cfg.out_dir.c_str());
    return 0;
  } catch (const funcspace::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
