#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normlab/config.hpp"

namespace normlab {

/// Scalar used by the experiment harness (tests exercise the library in
/// double precision; training runs in single precision, which is also the
/// checkpoint storage type).
using HarnessScalar = float;

/// Train per config; writes checkpoint.bin, metrics.csv, scaling_trace.csv
/// and the resolved config.json under out_dir.
void cmd_train(const ExperimentConfig& config, const std::string& out_dir, bool force);

/// Evaluate a checkpoint over the config's mode x noise grid; writes
/// results.csv (and confusion grids when enabled).
void cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
              const std::string& out_dir, bool force);

/// Train one LocalNorm model per K (shared seed) and evaluate the sweep;
/// writes sweep.csv.
void cmd_sweep_groups(const ExperimentConfig& config, const std::vector<int>& k_list,
                      const std::string& out_dir, bool force);

/// Per-channel histograms and summary statistics of the test images under
/// the config's noise grid; writes hist_*.csv, stats_*.csv, stats_pre_*.csv.
void cmd_histogram(const ExperimentConfig& config, const std::string& out_dir, bool force);

/// BatchNorm -> LocalNorm(K) conversion with optional fine-tuning; writes
/// the new checkpoint, transfer_log.csv and (when fine-tuning) metrics.
void cmd_transfer(const ExperimentConfig& config, const std::string& checkpoint_path, int k,
                  int finetune_epochs, const std::string& out_dir, bool force);

}  // namespace normlab
