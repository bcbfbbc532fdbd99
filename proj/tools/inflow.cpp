#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "inflow/cli.hpp"

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"inflow: attention-gated normalizing flows for out-of-distribution detection"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value run configuration")->required();
    sub->add_option("--out", out_dir, "output directory (overrides 'out')");
    sub->add_option("--seed", seed, "master seed (overrides 'seed')");
  };
  auto* train = app.add_subcommand("train", "fit a flow on data.train; writes model.infl, loss.csv, reference.csv");
  auto* detect = app.add_subcommand("detect", "gate and score data.test; writes scores_<name>.csv and a summary");
  auto* eval = app.add_subcommand("eval", "AUCROC / FPR95 / AUCPR table and histograms from score files");
  auto* gendata = app.add_subcommand("gendata", "write data.gen to an IDX or CSV file");
  for (auto* sub : {train, detect, eval, gendata}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    inflow::RunConfig cfg = inflow::load_config(config_path);
    for (auto* sub : {train, detect, eval, gendata}) {
      if (!sub->parsed()) continue;
      if (sub->count("--out")) cfg.out = out_dir;
      if (sub->count("--seed")) cfg.seed = seed;
    }

    if (train->parsed()) {
      const auto s = inflow::cmd_train(cfg);
      std::cout << "trained: initial loss " << s.initial_loss << ", final loss " << s.final_loss << "\n"
                << "checkpoint " << s.checkpoint.string() << ", reference " << s.reference.string() << "\n";
    } else if (detect->parsed()) {
      const auto s = inflow::cmd_detect(cfg);
      std::cout << s.summary;
    } else if (eval->parsed()) {
      const auto rows = inflow::cmd_eval(cfg);
      std::cout << inflow::metrics_table(rows);
    } else if (gendata->parsed()) {
      std::cout << "wrote " << inflow::cmd_gendata(cfg).string() << "\n";
    }
  } catch (const inflow::ConfigError& e) {
    std::cerr << "inflow: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "inflow: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return 0;
}
