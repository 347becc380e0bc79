#include "normlab/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "normlab/checkpoint.hpp"
#include "normlab/csv.hpp"
#include "normlab/eval.hpp"
#include "normlab/trainer.hpp"

namespace normlab {

namespace {

namespace fs = std::filesystem;

using S = HarnessScalar;

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) throw std::runtime_error("output directory must be set (--out)");
  fs::create_directories(out_dir);
}

void write_resolved_config(const ExperimentConfig& config, const std::string& out_dir) {
  std::ofstream f(join_path(out_dir, "config.json"), std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write resolved config");
  f << to_json(config).dump(2) << "\n";
}

void write_metrics(const std::string& path, const std::vector<MetricRow>& rows,
                   std::uint64_t hash) {
  CsvWriter csv(path, {"epoch", "split", "metric", "value"}, hash);
  for (const auto& r : rows) {
    csv.write_row({std::to_string(r.epoch), r.split, r.metric, format_double(r.value)});
  }
}

void write_trace(const std::string& path, const std::vector<TraceRow>& rows, std::uint64_t hash) {
  CsvWriter csv(path, {"epoch", "layer", "param", "stat", "group", "value"}, hash);
  for (const auto& r : rows) {
    csv.write_row({std::to_string(r.epoch), r.layer, r.param, r.stat, std::to_string(r.group),
                   format_double(r.value)});
  }
}

Dataset<S> augmented_trainset(const ExperimentConfig& config, const Dataset<S>& train) {
  if (!config.augment.enabled || config.augment.fraction <= 0.0) return train;
  NoiseSpec spec;
  spec.family = config.augment.family;
  spec.sigma_n = config.augment.sigma_n;
  spec.apn_variant = config.augment.apn_variant;
  spec.seed = derive_seed(config.seed, 0xA06);
  return make_noisy_trainset(train, spec, config.augment.fraction);
}

struct SweepRow {
  std::string mode;
  std::string family;
  double sigma;
  double acc;
};

/// One accuracy per (mode x family x sigma). Noise seeds derive from the
/// experiment seed and the sweep position; group-choice rng from the mode.
std::vector<SweepRow> run_noise_sweep(Model<S>& model, const Dataset<S>& test,
                                      const EvalSpecConfig& eval_cfg, std::uint64_t seed,
                                      const std::string& confusion_dir, std::uint64_t hash) {
  std::vector<SweepRow> rows;
  for (std::size_t mi = 0; mi < eval_cfg.modes.size(); ++mi) {
    const EvalMode mode = eval_mode_from_name(eval_cfg.modes[mi]);
    for (std::size_t si = 0; si < eval_cfg.noise.size(); ++si) {
      const auto& sweep = eval_cfg.noise[si];
      for (std::size_t gi = 0; gi < sweep.sigmas.size(); ++gi) {
        const double sigma = sweep.sigmas[gi];
        NoiseSpec noise;
        noise.family = sweep.family;
        noise.sigma_n = sigma;
        noise.apn_variant = sweep.apn_variant;
        noise.seed = derive_seed(seed, 0xB000 + si * 256 + gi);
        const Dataset<S> noisy = sigma > 0.0 ? degrade_dataset(test, noise) : test;
        Rng mode_rng(derive_seed(seed, 0xE7A1 + mi));
        const auto preds = predict(model, noisy.images, mode, eval_cfg.batch_size, mode_rng);
        rows.push_back({eval_mode_name(mode), noise_family_name(sweep.family), sigma,
                        accuracy(preds, noisy.labels)});
        if (!confusion_dir.empty()) {
          const ConfusionMatrix cm = confusion_from(preds, noisy.labels, test.class_count);
          const std::string name = "confusion_" + eval_mode_name(mode) + "_" +
                                   noise_family_name(sweep.family) + "_" + format_double(sigma) +
                                   ".csv";
          std::vector<std::string> header = {"true_class"};
          for (int c = 0; c < cm.classes; ++c) header.push_back("pred_" + std::to_string(c));
          CsvWriter csv(join_path(confusion_dir, name), header, hash);
          for (int r = 0; r < cm.classes; ++r) {
            std::vector<std::string> cells = {std::to_string(r)};
            for (int c = 0; c < cm.classes; ++c) cells.push_back(std::to_string(cm.at(r, c)));
            csv.write_row(cells);
          }
        }
      }
    }
  }
  return rows;
}

Dataset<S> eval_testset(const ExperimentConfig& config) {
  auto [train, test] = load_datasets<S>(config.dataset);
  (void)train;
  if (config.eval.max_images > 0 && config.eval.max_images < test.count()) {
    test = dataset_take(test, config.eval.max_images);
  }
  return test;
}

}  // namespace

void cmd_train(const ExperimentConfig& config, const std::string& out_dir, bool force) {
  validate_config(config, true);
  ensure_out_dir(out_dir);
  const std::uint64_t hash = config_hash(config);
  const std::vector<std::string> outputs = {
      join_path(out_dir, "checkpoint.bin"), join_path(out_dir, "metrics.csv"),
      join_path(out_dir, "scaling_trace.csv"), join_path(out_dir, "config.json")};
  guard_outputs(outputs, force);

  auto [train_ds, test_ds] = load_datasets<S>(config.dataset);
  const Dataset<S> effective_train = augmented_trainset(config, train_ds);

  TrainResult<S> result =
      train_model<S>(config.model, config.train, effective_train, test_ds, config.seed);

  CheckpointMeta meta;
  meta.epoch = config.train.epochs;
  meta.batch_size = config.train.batch_size;
  meta.seed = config.seed;
  meta.rng_state = result.rng.state();
  save_checkpoint(outputs[0], result.model, meta);
  write_metrics(outputs[1], result.metrics, hash);
  write_trace(outputs[2], result.trace, hash);
  write_resolved_config(config, out_dir);

  for (const auto& r : result.metrics) {
    if (r.metric == "accuracy") {
      std::cout << "epoch " << r.epoch << " test accuracy " << format_double(r.value) << "\n";
    }
  }
  std::cout << "wrote " << outputs[0] << "\n";
}

void cmd_eval(const ExperimentConfig& config, const std::string& checkpoint_path,
              const std::string& out_dir, bool force) {
  validate_config(config, true);
  ensure_out_dir(out_dir);
  const std::uint64_t hash = config_hash(config);
  const std::string results_path = join_path(out_dir, "results.csv");
  guard_outputs({results_path}, force);

  LoadedCheckpoint<S> loaded = load_checkpoint<S>(checkpoint_path);
  const Dataset<S> test = eval_testset(config);

  const auto rows = run_noise_sweep(loaded.model, test, config.eval, config.seed,
                                    config.eval.confusion ? out_dir : "", hash);
  CsvWriter csv(results_path, {"mode", "noise_family", "sigma_n", "accuracy"}, hash);
  for (const auto& r : rows) {
    csv.write_row({r.mode, r.family, format_double(r.sigma), format_double(r.acc)});
    std::cout << r.mode << " " << r.family << " sigma=" << format_double(r.sigma)
              << " accuracy=" << format_double(r.acc) << "\n";
  }
  write_resolved_config(config, out_dir);
}

void cmd_sweep_groups(const ExperimentConfig& config, const std::vector<int>& k_list,
                      const std::string& out_dir, bool force) {
  validate_config(config, true);
  if (k_list.empty()) throw std::runtime_error("sweep-groups: K list must be nonempty");
  for (int k : k_list) {
    if (k < 1 || config.train.batch_size % k != 0) {
      throw std::runtime_error("sweep-groups: K=" + std::to_string(k) +
                               " does not divide batch size " +
                               std::to_string(config.train.batch_size));
    }
  }
  ensure_out_dir(out_dir);
  const std::uint64_t hash = config_hash(config);
  const std::string sweep_path = join_path(out_dir, "sweep.csv");
  guard_outputs({sweep_path}, force);

  auto [train_ds, test_ds] = load_datasets<S>(config.dataset);
  const Dataset<S> effective_train = augmented_trainset(config, train_ds);
  Dataset<S> eval_test = test_ds;
  if (config.eval.max_images > 0 && config.eval.max_images < eval_test.count()) {
    eval_test = dataset_take(eval_test, config.eval.max_images);
  }

  CsvWriter csv(sweep_path, {"k", "mode", "noise_family", "sigma_n", "accuracy"}, hash);
  for (int k : k_list) {
    ExperimentConfig ck = config;
    ck.model.norm_kind = NormKind::Local;
    ck.model.norm_groups = k;
    TrainResult<S> result =
        train_model<S>(ck.model, ck.train, effective_train, test_ds, ck.seed);
    const auto rows = run_noise_sweep(result.model, eval_test, ck.eval, ck.seed, "", hash);
    for (const auto& r : rows) {
      csv.write_row({std::to_string(k), r.mode, r.family, format_double(r.sigma),
                     format_double(r.acc)});
      std::cout << "K=" << k << " " << r.mode << " " << r.family << " sigma="
                << format_double(r.sigma) << " accuracy=" << format_double(r.acc) << "\n";
    }
  }
  write_resolved_config(config, out_dir);
}

void cmd_histogram(const ExperimentConfig& config, const std::string& out_dir, bool force) {
  validate_config(config, true);
  ensure_out_dir(out_dir);
  const std::uint64_t hash = config_hash(config);
  const Dataset<S> test = eval_testset(config);

  std::vector<std::string> outputs;
  for (const auto& sweep : config.eval.noise) {
    for (double sigma : sweep.sigmas) {
      const std::string tag =
          std::string(noise_family_name(sweep.family)) + "_" + format_double(sigma);
      outputs.push_back(join_path(out_dir, "hist_" + tag + ".csv"));
      outputs.push_back(join_path(out_dir, "stats_" + tag + ".csv"));
      outputs.push_back(join_path(out_dir, "stats_pre_" + tag + ".csv"));
    }
  }
  guard_outputs(outputs, force);

  std::size_t out_idx = 0;
  for (std::size_t si = 0; si < config.eval.noise.size(); ++si) {
    const auto& sweep = config.eval.noise[si];
    for (std::size_t gi = 0; gi < sweep.sigmas.size(); ++gi) {
      const double sigma = sweep.sigmas[gi];
      NoiseSpec noise;
      noise.family = sweep.family;
      noise.sigma_n = sigma;
      noise.apn_variant = sweep.apn_variant;
      noise.seed = derive_seed(config.seed, 0xC000 + si * 256 + gi);
      const Dataset<S> post = sigma > 0.0 ? degrade_dataset(test, noise, true) : test;
      const Dataset<S> pre = sigma > 0.0 ? degrade_dataset(test, noise, false) : test;
      const ChannelHistogram hist = channel_histogram(post.images);
      const ChannelHistogram pre_hist = channel_histogram(pre.images);

      {
        CsvWriter csv(outputs[out_idx++], {"channel", "bin", "count"}, hash);
        for (std::size_t c = 0; c < hist.counts.size(); ++c) {
          for (int b = 0; b < hist.bins; ++b) {
            csv.write_row({std::to_string(c), std::to_string(b),
                           std::to_string(hist.counts[c][static_cast<std::size_t>(b)])});
          }
        }
      }
      {
        CsvWriter csv(outputs[out_idx++], {"channel", "mean", "std"}, hash);
        for (std::size_t c = 0; c < hist.mean.size(); ++c) {
          csv.write_row({std::to_string(c), format_double(hist.mean[c]),
                         format_double(hist.stddev[c])});
        }
      }
      {
        CsvWriter csv(outputs[out_idx++], {"channel", "mean", "std"}, hash);
        for (std::size_t c = 0; c < pre_hist.mean.size(); ++c) {
          csv.write_row({std::to_string(c), format_double(pre_hist.mean[c]),
                         format_double(pre_hist.stddev[c])});
        }
      }
    }
  }
  write_resolved_config(config, out_dir);
  std::cout << "wrote " << outputs.size() << " histogram/statistic files to " << out_dir << "\n";
}

void cmd_transfer(const ExperimentConfig& config, const std::string& checkpoint_path, int k,
                  int finetune_epochs, const std::string& out_dir, bool force) {
  validate_config(config, true);
  if (k < 1) throw std::runtime_error("transfer: K must be positive");
  ensure_out_dir(out_dir);
  const std::uint64_t hash = config_hash(config);
  std::vector<std::string> outputs = {join_path(out_dir, "checkpoint.bin"),
                                      join_path(out_dir, "transfer_log.csv")};
  if (finetune_epochs > 0) {
    outputs.push_back(join_path(out_dir, "metrics.csv"));
    outputs.push_back(join_path(out_dir, "scaling_trace.csv"));
  }
  guard_outputs(outputs, force);

  LoadedCheckpoint<S> loaded = load_checkpoint<S>(checkpoint_path);
  const int intended_batch =
      loaded.meta.batch_size > 0 ? loaded.meta.batch_size : config.train.batch_size;
  if (intended_batch % k != 0) {
    throw std::runtime_error("transfer: K=" + std::to_string(k) +
                             " incompatible with intended batch size " +
                             std::to_string(intended_batch));
  }

  auto [train_ds, test_ds] = load_datasets<S>(config.dataset);
  Dataset<S> eval_test = test_ds;
  if (config.eval.max_images > 0 && config.eval.max_images < eval_test.count()) {
    eval_test = dataset_take(eval_test, config.eval.max_images);
  }

  Rng eval_rng(derive_seed(config.seed, 0xE7));
  const double before = accuracy(
      predict(loaded.model, eval_test.images, {EvalKind::FrozenBN}, intended_batch, eval_rng),
      eval_test.labels);
  Model<S> transferred = transfer_bn_to_local(loaded.model, k);
  const double after = accuracy(
      predict(transferred, eval_test.images, {EvalKind::Batch}, intended_batch, eval_rng),
      eval_test.labels);

  std::vector<MetricRow> metrics;
  std::vector<TraceRow> trace;
  Rng final_rng(config.seed);
  if (finetune_epochs > 0) {
    TrainHyper hp = config.train;
    hp.epochs = finetune_epochs;
    hp.batch_size = intended_batch;
    final_rng = run_training(transferred, hp, train_ds, test_ds,
                             derive_seed(config.seed, 0xF17E), metrics, trace,
                             loaded.meta.epoch);
  }
  const double after_tuned =
      finetune_epochs > 0
          ? accuracy(predict(transferred, eval_test.images, {EvalKind::Batch}, intended_batch,
                             eval_rng),
                     eval_test.labels)
          : after;

  CheckpointMeta meta = loaded.meta;
  meta.epoch += finetune_epochs;
  meta.batch_size = intended_batch;
  meta.rng_state = final_rng.state();
  save_checkpoint(outputs[0], transferred, meta);
  {
    CsvWriter csv(outputs[1], {"stage", "mode", "accuracy"}, hash);
    csv.write_row({"before", "frozen_bn", format_double(before)});
    csv.write_row({"after_transfer", "batch", format_double(after)});
    if (finetune_epochs > 0) {
      csv.write_row({"after_finetune", "batch", format_double(after_tuned)});
    }
  }
  if (finetune_epochs > 0) {
    write_metrics(outputs[2], metrics, hash);
    write_trace(outputs[3], trace, hash);
  }
  write_resolved_config(config, out_dir);
  std::cout << "clean accuracy before=" << format_double(before)
            << " after_transfer=" << format_double(after);
  if (finetune_epochs > 0) std::cout << " after_finetune=" << format_double(after_tuned);
  std::cout << "\n";
}

}  // namespace normlab
