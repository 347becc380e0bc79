#include <CLI11.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "normlab/commands.hpp"
#include "normlab/version.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  bool force = false;
  int threads = 1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

normlab::ExperimentConfig resolve_config(const GlobalArgs& g) {
  normlab::ExperimentConfig config;
  if (!g.config_path.empty()) config = normlab::load_experiment_config(g.config_path);
  if (g.seed_set) config.seed = g.seed;
  return config;
}

void add_global_flags(CLI::App* cmd, GlobalArgs& g) {
  cmd->add_option("--config", g.config_path, "experiment config file (JSON)");
  cmd->add_option("--out", g.out_dir, "output directory")->required();
  cmd->add_flag("--force", g.force, "overwrite existing output files");
  cmd->add_option("--threads", g.threads, "math threads (default 1, single-threaded)");
  cmd->add_option("--seed", g.seed, "override the config seed")
      ->each([&g](const std::string&) { g.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("normlab ") + normlab::kVersion +
               " - group-normalization robustness experiments"};
  app.require_subcommand(1);

  GlobalArgs g;
  std::string checkpoint_path;
  std::vector<int> k_list;
  int transfer_k = 1;
  int finetune_epochs = 0;

  CLI::App* train = app.add_subcommand("train", "train a model per the config");
  add_global_flags(train, g);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint over the noise grid");
  add_global_flags(eval, g);
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();

  CLI::App* sweep = app.add_subcommand("sweep-groups", "train and evaluate one model per K");
  add_global_flags(sweep, g);
  sweep->add_option("--groups", k_list, "group counts to sweep")->required()->delimiter(',');

  CLI::App* hist = app.add_subcommand("histogram", "channel histograms under the noise grid");
  add_global_flags(hist, g);

  CLI::App* transfer = app.add_subcommand("transfer", "convert BatchNorm checkpoint to LocalNorm");
  add_global_flags(transfer, g);
  transfer->add_option("--checkpoint", checkpoint_path, "source checkpoint")->required();
  transfer->add_option("--groups", transfer_k, "LocalNorm group count K")->required();
  transfer->add_option("--finetune-epochs", finetune_epochs, "fine-tuning epochs (default 0)");

  CLI11_PARSE(app, argc, argv);

  try {
    Eigen::setNbThreads(g.threads > 0 ? g.threads : 1);
    const normlab::ExperimentConfig config = resolve_config(g);
    if (train->parsed()) {
      normlab::cmd_train(config, g.out_dir, g.force);
    } else if (eval->parsed()) {
      normlab::cmd_eval(config, checkpoint_path, g.out_dir, g.force);
    } else if (sweep->parsed()) {
      normlab::cmd_sweep_groups(config, k_list, g.out_dir, g.force);
    } else if (hist->parsed()) {
      normlab::cmd_histogram(config, g.out_dir, g.force);
    } else if (transfer->parsed()) {
      normlab::cmd_transfer(config, checkpoint_path, transfer_k, finetune_epochs, g.out_dir,
                            g.force);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
