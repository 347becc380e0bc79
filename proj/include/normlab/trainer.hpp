#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "normlab/data.hpp"
#include "normlab/eval.hpp"
#include "normlab/model.hpp"
#include "normlab/rng.hpp"

namespace normlab {

struct TrainHyper {
  int epochs = 5;
  int batch_size = 100;
  double lr = 0.01;
  double sgd_momentum = 0.9;
};

struct MetricRow {
  int epoch;
  std::string split;
  std::string metric;
  double value;
};

/// One scaling-parameter trace entry. stat is "group_mean" (per-group mean
/// over channels) or "cross_group_var" (mean over channels of the variance
/// across groups; group = -1).
struct TraceRow {
  int epoch;
  std::string layer;
  std::string param;
  std::string stat;
  int group;
  double value;
};

template <typename S>
struct TrainResult {
  Model<S> model;
  std::vector<MetricRow> metrics;
  std::vector<TraceRow> trace;
  Rng rng;  // state after training, persisted into checkpoints
};

namespace detail {

template <typename S>
void append_scaling_trace(Model<S>& model, int epoch, std::vector<TraceRow>& trace) {
  const auto names = model.norm_layer_names();
  auto norms = model.norm_layers();
  for (std::size_t li = 0; li < norms.size(); ++li) {
    const NormSpec<S>& spec = *norms[li];
    for (const char* pname : {"gamma", "beta"}) {
      const Tensor<S>& t = (std::string(pname) == "gamma") ? spec.gamma : spec.beta;
      const int k = t.rank() == 2 ? t.extent(0) : 1;
      const int c = t.rank() == 2 ? t.extent(1) : t.extent(0);
      // Per-group mean over channels.
      for (int g = 0; g < k; ++g) {
        double mean = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          mean += static_cast<double>(t.data()[static_cast<std::size_t>(g) * c + ch]);
        }
        mean /= c;
        trace.push_back({epoch, names[li], pname, "group_mean", g, mean});
      }
      // Mean over channels of the biased variance across groups.
      double var_acc = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        double m = 0.0;
        for (int g = 0; g < k; ++g) {
          m += static_cast<double>(t.data()[static_cast<std::size_t>(g) * c + ch]);
        }
        m /= k;
        double v = 0.0;
        for (int g = 0; g < k; ++g) {
          const double d = static_cast<double>(t.data()[static_cast<std::size_t>(g) * c + ch]) - m;
          v += d * d;
        }
        var_acc += v / k;
      }
      trace.push_back({epoch, names[li], pname, "cross_group_var", -1, var_acc / c});
    }
  }
}

}  // namespace detail

/// Learning rate with the x0.1 decays at 50% and 75% of the epoch budget.
inline double scheduled_lr(double base, int epoch, int total_epochs) {
  int decays = 0;
  if (total_epochs >= 2 && epoch >= total_epochs / 2) ++decays;
  if (total_epochs >= 2 && epoch >= (3 * total_epochs) / 4) ++decays;
  return base * std::pow(0.1, decays);
}

/// Core loop on an existing model; used both for fresh runs and for
/// fine-tuning after a transfer. Appends metrics/trace rows (trace rows use
/// epochs offset by `first_epoch`).
template <typename S>
Rng run_training(Model<S>& model, const TrainHyper& hp, const Dataset<S>& train_ds,
                 const Dataset<S>& test_ds, std::uint64_t seed,
                 std::vector<MetricRow>& metrics, std::vector<TraceRow>& trace,
                 int first_epoch = 0) {
  validate_dataset(train_ds);
  validate_dataset(test_ds);
  const ModelConfig& mc = model.config();
  if (train_ds.count() == 0) throw std::invalid_argument("train: empty dataset");
  if (hp.batch_size <= 0 || hp.batch_size > train_ds.count()) {
    throw std::invalid_argument("train: batch size must be in [1, dataset size]");
  }
  if (mc.norm_kind == NormKind::Local && hp.batch_size % mc.norm_groups != 0) {
    throw std::invalid_argument("train: batch size " + std::to_string(hp.batch_size) +
                                " not divisible by K=" + std::to_string(mc.norm_groups));
  }
  if (!(hp.lr > 0)) throw std::invalid_argument("train: lr must be positive");

  Rng run_rng(derive_seed(seed, 2));
  BatchIterator<S> batches(&train_ds, hp.batch_size, std::max(1, mc.norm_groups),
                           derive_seed(seed, 1));
  SgdOptimizer<S> opt(static_cast<S>(hp.lr), static_cast<S>(hp.sgd_momentum));
  auto params = model.parameters();
  const EvalMode eval_mode = default_eval_mode(mc.norm_kind);

  detail::append_scaling_trace(model, first_epoch, trace);

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    opt.set_lr(static_cast<S>(scheduled_lr(hp.lr, epoch, hp.epochs)));
    batches.start_epoch();
    Batch<S> batch;
    double loss_sum = 0.0;
    int steps = 0;
    while (batches.next(batch)) {
      try {
        Tensor<S> x = preprocess_images(batch.images);
        NormContext ctx = model.train_context(batch.images.extent(0));
        Tensor<S> logits = model.forward(x, ctx);
        auto sce = softmax_cross_entropy(logits, batch.labels);
        loss_sum += static_cast<double>(sce.loss.value());
        SgdOptimizer<S>::zero_grads(params);
        backward(sce.loss);
        opt.step(params);
      } catch (const std::domain_error& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(steps) + ": " + e.what());
      }
      ++steps;
    }
    metrics.push_back({first_epoch + epoch, "train", "loss", loss_sum / std::max(1, steps)});
    const auto preds = predict(model, test_ds.images, eval_mode, hp.batch_size, run_rng);
    metrics.push_back(
        {first_epoch + epoch, "test", "accuracy", accuracy(preds, test_ds.labels)});
    detail::append_scaling_trace(model, first_epoch + epoch + 1, trace);
  }
  return run_rng;
}

/// Full training run. Deterministic given (config, hyper, data, seed):
/// weight init and batch shuffling draw from separate derived streams, so
/// the sample stream is identical across norm variants with the same seed.
template <typename S>
TrainResult<S> train_model(const ModelConfig& mc, const TrainHyper& hp,
                           const Dataset<S>& train_ds, const Dataset<S>& test_ds,
                           std::uint64_t seed) {
  Rng init_rng(derive_seed(seed, 0));
  TrainResult<S> result{Model<S>(mc, init_rng), {}, {}, Rng(seed)};
  result.rng =
      run_training(result.model, hp, train_ds, test_ds, seed, result.metrics, result.trace);
  return result;
}

}  // namespace normlab
