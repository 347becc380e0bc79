#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "normlab/data.hpp"
#include "normlab/model.hpp"
#include "normlab/noise.hpp"

namespace normlab {

/// Test-time strategies. Single/SingleVoting/Voting/Batch are LocalNorm
/// modes; FrozenBN and the two DynamicBN modes are the BatchNorm baselines;
/// Plain is the composition-independent forward for the per-sample variants
/// (Layer/Group/Instance).
enum class EvalKind {
  Single,
  SingleVoting,
  Voting,
  Batch,
  FrozenBN,
  DynamicBNSingle,
  DynamicBNBatch,
  Plain,
};

struct EvalMode {
  EvalKind kind = EvalKind::Batch;
  bool rot90_fill = false;   // enrich single-image statistics with rotations
  bool hard_voting = false;  // majority ballot instead of summed probabilities
};

inline std::string eval_mode_name(const EvalMode& mode) {
  std::string name;
  switch (mode.kind) {
    case EvalKind::Single: name = "single"; break;
    case EvalKind::SingleVoting: name = "single_voting"; break;
    case EvalKind::Voting: name = "voting"; break;
    case EvalKind::Batch: name = "batch"; break;
    case EvalKind::FrozenBN: name = "frozen_bn"; break;
    case EvalKind::DynamicBNSingle: name = "dynamic_bn_single"; break;
    case EvalKind::DynamicBNBatch: name = "dynamic_bn_batch"; break;
    case EvalKind::Plain: name = "plain"; break;
  }
  if (mode.rot90_fill) name = "rot90_" + name;
  if (mode.hard_voting) name += "_hard";
  return name;
}

inline EvalMode eval_mode_from_name(std::string name) {
  EvalMode mode;
  if (name.rfind("rot90_", 0) == 0) {
    mode.rot90_fill = true;
    name = name.substr(6);
  }
  if (name.size() > 5 && name.substr(name.size() - 5) == "_hard") {
    mode.hard_voting = true;
    name = name.substr(0, name.size() - 5);
  }
  if (name == "single") mode.kind = EvalKind::Single;
  else if (name == "single_voting") mode.kind = EvalKind::SingleVoting;
  else if (name == "voting") mode.kind = EvalKind::Voting;
  else if (name == "batch") mode.kind = EvalKind::Batch;
  else if (name == "frozen_bn") mode.kind = EvalKind::FrozenBN;
  else if (name == "dynamic_bn_single") mode.kind = EvalKind::DynamicBNSingle;
  else if (name == "dynamic_bn_batch") mode.kind = EvalKind::DynamicBNBatch;
  else if (name == "plain") mode.kind = EvalKind::Plain;
  else throw std::invalid_argument("unknown eval mode: " + name);
  return mode;
}

/// Default strategy used for in-training test accuracy.
inline EvalMode default_eval_mode(NormKind kind) {
  switch (kind) {
    case NormKind::Local: return {EvalKind::Batch};
    case NormKind::Batch: return {EvalKind::FrozenBN};
    default: return {EvalKind::Plain};
  }
}

namespace detail {

inline void validate_mode(NormKind model_kind, const EvalMode& mode) {
  const bool local_mode = mode.kind == EvalKind::Single || mode.kind == EvalKind::SingleVoting ||
                          mode.kind == EvalKind::Voting || mode.kind == EvalKind::Batch;
  const bool bn_mode = mode.kind == EvalKind::FrozenBN || mode.kind == EvalKind::DynamicBNSingle ||
                       mode.kind == EvalKind::DynamicBNBatch;
  if (local_mode && model_kind != NormKind::Local) {
    throw std::invalid_argument("eval mode " + eval_mode_name(mode) +
                                " requires a LocalNorm model");
  }
  if (bn_mode && model_kind != NormKind::Batch) {
    throw std::invalid_argument("eval mode " + eval_mode_name(mode) +
                                " requires a BatchNorm model");
  }
  if (mode.kind == EvalKind::Plain && (model_kind == NormKind::Local)) {
    throw std::invalid_argument("plain eval is undefined for LocalNorm models");
  }
  if (mode.rot90_fill && mode.kind != EvalKind::Single && mode.kind != EvalKind::SingleVoting) {
    throw std::invalid_argument("rot90 fill applies to single and single_voting modes only");
  }
}

template <typename S>
Tensor<S> forward_probs(Model<S>& model, const Tensor<S>& images01, const NormContext& ctx) {
  Tensor<S> logits = model.forward(images01, ctx);
  return softmax(logits);
}

/// Copy a half-open row range [begin, end) of a [N,...] tensor; indices wrap
/// around (used to pad trailing batches; padded rows are dropped afterward).
template <typename S>
Tensor<S> take_rows_wrapped(const Tensor<S>& t, std::int64_t begin, std::int64_t end) {
  const int n = t.extent(0);
  Shape shape = t.shape();
  shape[0] = static_cast<int>(end - begin);
  Tensor<S> out(shape);
  const std::size_t row = static_cast<std::size_t>(t.size() / n);
  const auto& src = t.data();
  auto& dst = out.mutable_data();
  for (std::int64_t i = begin; i < end; ++i) {
    const std::size_t j = static_cast<std::size_t>(i % n);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(j * row),
              src.begin() + static_cast<std::ptrdiff_t>((j + 1) * row),
              dst.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i - begin) * row));
  }
  return out;
}

/// Group filled with rotated copies: member t of each image is the image
/// rotated by (t % 4) quarter turns, tiled to group_size members.
template <typename S>
Tensor<S> rot90_filled(const Tensor<S>& images, int group_size) {
  const int b = images.extent(0), h = images.extent(1), w = images.extent(2),
            c = images.extent(3);
  if (h != w) throw std::invalid_argument("rot90 fill: spatial extents must be square");
  NoGrad ng;
  std::vector<Tensor<S>> rotations;
  rotations.reserve(4);
  rotations.push_back(images);
  for (int k = 1; k <= 3; ++k) rotations.push_back(rot90(images, k));
  Tensor<S> out({b * group_size, h, w, c});
  const std::size_t row = static_cast<std::size_t>(h) * w * c;
  auto& dst = out.mutable_data();
  for (int i = 0; i < b; ++i) {
    for (int t = 0; t < group_size; ++t) {
      const auto& src = rotations[static_cast<std::size_t>(t % 4)].data();
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * row),
                src.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i + 1) * row),
                dst.begin() + static_cast<std::ptrdiff_t>(
                                  static_cast<std::size_t>(i * group_size + t) * row));
    }
  }
  return out;
}

struct VoteBox {
  std::vector<double> prob_sum;  // [n*classes]
  std::vector<int> hard_votes;   // [n*classes]
};

template <typename S>
void accumulate_votes(VoteBox& box, const Tensor<S>& probs, bool hard, std::int64_t offset = 0,
                      std::int64_t stride = 1) {
  const int rows = probs.extent(0), classes = probs.extent(1);
  const auto& pv = probs.data();
  const std::vector<int> arg = hard ? argmax_rows(probs) : std::vector<int>{};
  for (int r = 0; r < rows; ++r) {
    if (stride > 1 && (r % stride) != 0) continue;
    const std::int64_t image = offset + (stride > 1 ? r / stride : r);
    if (hard) {
      ++box.hard_votes[static_cast<std::size_t>(image * classes + arg[static_cast<std::size_t>(r)])];
    } else {
      for (int c = 0; c < classes; ++c) {
        box.prob_sum[static_cast<std::size_t>(image * classes + c)] +=
            static_cast<double>(pv[static_cast<std::size_t>(r) * classes + c]);
      }
    }
  }
}

inline std::vector<int> resolve_votes(const VoteBox& box, std::int64_t n, int classes, bool hard) {
  std::vector<int> preds(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (hard) {
        if (box.hard_votes[static_cast<std::size_t>(i * classes + c)] >
            box.hard_votes[static_cast<std::size_t>(i * classes + best)]) {
          best = c;
        }
      } else {
        if (box.prob_sum[static_cast<std::size_t>(i * classes + c)] >
            box.prob_sum[static_cast<std::size_t>(i * classes + best)]) {
          best = c;
        }
      }
    }
    preds[static_cast<std::size_t>(i)] = best;
  }
  return preds;
}

}  // namespace detail

/// Predictions for raw [N,H,W,C] pixel images (values in [0,255]; any noise
/// already applied). batch_size is the evaluation batch; LocalNorm models
/// derive their group size as batch_size / K.
template <typename S>
std::vector<int> predict(Model<S>& model, const Tensor<S>& images_raw, const EvalMode& mode,
                         int batch_size, Rng& rng) {
  detail::validate_mode(model.config().norm_kind, mode);
  if (images_raw.rank() != 4) throw std::invalid_argument("predict: images must be [N,H,W,C]");
  const int n = images_raw.extent(0);
  if (n == 0) return {};
  if (batch_size <= 0) throw std::invalid_argument("predict: batch size must be positive");
  const int classes = model.config().classes;
  const int k = model.config().norm_groups;

  const bool single_stats = mode.kind == EvalKind::Single || mode.kind == EvalKind::SingleVoting ||
                            mode.kind == EvalKind::DynamicBNSingle;
  if (single_stats && !mode.rot90_fill &&
      images_raw.extent(1) * images_raw.extent(2) == 1) {
    throw std::domain_error("degenerate statistics: single-image evaluation of 1x1 input");
  }

  int group_size = 0;
  if (mode.kind == EvalKind::Voting || mode.kind == EvalKind::Batch || mode.rot90_fill) {
    if (batch_size % k != 0) {
      throw std::invalid_argument("predict: batch size " + std::to_string(batch_size) +
                                  " not divisible by K=" + std::to_string(k));
    }
    group_size = batch_size / k;
  }

  NoGrad ng;
  Tensor<S> images = preprocess_images(images_raw);
  std::vector<int> preds(static_cast<std::size_t>(n));

  auto chunked = [&](int chunk_size, bool pad, auto&& handle_chunk) {
    const std::int64_t padded =
        pad ? ((static_cast<std::int64_t>(n) + chunk_size - 1) / chunk_size) * chunk_size
            : static_cast<std::int64_t>(n);
    for (std::int64_t begin = 0; begin < padded; begin += chunk_size) {
      const std::int64_t end = std::min<std::int64_t>(begin + chunk_size, padded);
      Tensor<S> chunk = detail::take_rows_wrapped(images, begin, end);
      handle_chunk(begin, chunk);
    }
  };

  auto record = [&](std::int64_t begin, const std::vector<int>& chunk_preds) {
    for (std::size_t i = 0; i < chunk_preds.size(); ++i) {
      const std::int64_t image = begin + static_cast<std::int64_t>(i);
      if (image < n) preds[static_cast<std::size_t>(image)] = chunk_preds[i];
    }
  };

  switch (mode.kind) {
    case EvalKind::FrozenBN: {
      NormContext ctx;
      ctx.frozen = true;
      chunked(batch_size, false, [&](std::int64_t begin, const Tensor<S>& chunk) {
        record(begin, argmax_rows(detail::forward_probs(model, chunk, ctx)));
      });
      break;
    }
    case EvalKind::Plain:
    case EvalKind::DynamicBNBatch: {
      // Plain forward pools the whole chunk (irrelevant for the per-sample
      // variants); DynamicBN-Batch is statistics-sensitive, so pad.
      const bool pad = mode.kind == EvalKind::DynamicBNBatch;
      chunked(batch_size, pad, [&](std::int64_t begin, const Tensor<S>& chunk) {
        record(begin, argmax_rows(detail::forward_probs(model, chunk, NormContext{})));
      });
      break;
    }
    case EvalKind::DynamicBNSingle: {
      chunked(batch_size, false, [&](std::int64_t begin, const Tensor<S>& chunk) {
        NormContext ctx;
        ctx.stat_group.resize(static_cast<std::size_t>(chunk.extent(0)));
        std::iota(ctx.stat_group.begin(), ctx.stat_group.end(), 0);
        ctx.stat_group_count = chunk.extent(0);
        record(begin, argmax_rows(detail::forward_probs(model, chunk, ctx)));
      });
      break;
    }
    case EvalKind::Batch: {
      chunked(batch_size, true, [&](std::int64_t begin, const Tensor<S>& chunk) {
        NormContext ctx;
        const int b = chunk.extent(0);
        ctx.stat_group.resize(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i) ctx.stat_group[static_cast<std::size_t>(i)] = i / group_size;
        ctx.stat_group_count = k;
        ctx.param_group = ctx.stat_group;
        record(begin, argmax_rows(detail::forward_probs(model, chunk, ctx)));
      });
      break;
    }
    case EvalKind::Single: {
      if (mode.rot90_fill) {
        const int images_per_forward = std::max(1, batch_size / group_size);
        chunked(images_per_forward, false, [&](std::int64_t begin, const Tensor<S>& chunk) {
          const int b = chunk.extent(0);
          Tensor<S> filled = detail::rot90_filled(chunk, group_size);
          NormContext ctx;
          ctx.stat_group.resize(static_cast<std::size_t>(b * group_size));
          ctx.param_group.resize(static_cast<std::size_t>(b * group_size));
          for (int i = 0; i < b; ++i) {
            const int g = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k)));
            for (int t = 0; t < group_size; ++t) {
              ctx.stat_group[static_cast<std::size_t>(i * group_size + t)] = i;
              ctx.param_group[static_cast<std::size_t>(i * group_size + t)] = g;
            }
          }
          ctx.stat_group_count = b;
          Tensor<S> probs = detail::forward_probs(model, filled, ctx);
          const auto arg = argmax_rows(probs);
          std::vector<int> chunk_preds(static_cast<std::size_t>(b));
          for (int i = 0; i < b; ++i) {
            chunk_preds[static_cast<std::size_t>(i)] =
                arg[static_cast<std::size_t>(i * group_size)];
          }
          record(begin, chunk_preds);
        });
      } else {
        chunked(batch_size, false, [&](std::int64_t begin, const Tensor<S>& chunk) {
          const int b = chunk.extent(0);
          NormContext ctx;
          ctx.stat_group.resize(static_cast<std::size_t>(b));
          std::iota(ctx.stat_group.begin(), ctx.stat_group.end(), 0);
          ctx.stat_group_count = b;
          ctx.param_group.resize(static_cast<std::size_t>(b));
          for (auto& g : ctx.param_group) {
            g = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(k)));
          }
          record(begin, argmax_rows(detail::forward_probs(model, chunk, ctx)));
        });
      }
      break;
    }
    case EvalKind::SingleVoting: {
      if (mode.rot90_fill) {
        const int images_per_forward = std::max(1, batch_size / group_size);
        chunked(images_per_forward, false, [&](std::int64_t begin, const Tensor<S>& chunk) {
          const int b = chunk.extent(0);
          Tensor<S> filled = detail::rot90_filled(chunk, group_size);
          detail::VoteBox box;
          box.prob_sum.assign(static_cast<std::size_t>(b) * classes, 0.0);
          box.hard_votes.assign(static_cast<std::size_t>(b) * classes, 0);
          NormContext ctx;
          ctx.stat_group.resize(static_cast<std::size_t>(b * group_size));
          for (int i = 0; i < b; ++i) {
            for (int t = 0; t < group_size; ++t) {
              ctx.stat_group[static_cast<std::size_t>(i * group_size + t)] = i;
            }
          }
          ctx.stat_group_count = b;
          for (int g = 0; g < k; ++g) {
            ctx.param_group.assign(static_cast<std::size_t>(b * group_size), g);
            Tensor<S> probs = detail::forward_probs(model, filled, ctx);
            detail::accumulate_votes(box, probs, mode.hard_voting, 0, group_size);
          }
          record(begin, detail::resolve_votes(box, b, classes, mode.hard_voting));
        });
      } else {
        chunked(batch_size, false, [&](std::int64_t begin, const Tensor<S>& chunk) {
          const int b = chunk.extent(0);
          detail::VoteBox box;
          box.prob_sum.assign(static_cast<std::size_t>(b) * classes, 0.0);
          box.hard_votes.assign(static_cast<std::size_t>(b) * classes, 0);
          NormContext ctx;
          ctx.stat_group.resize(static_cast<std::size_t>(b));
          std::iota(ctx.stat_group.begin(), ctx.stat_group.end(), 0);
          ctx.stat_group_count = b;
          for (int g = 0; g < k; ++g) {
            ctx.param_group.assign(static_cast<std::size_t>(b), g);
            detail::accumulate_votes(box, detail::forward_probs(model, chunk, ctx),
                                     mode.hard_voting);
          }
          record(begin, detail::resolve_votes(box, b, classes, mode.hard_voting));
        });
      }
      break;
    }
    case EvalKind::Voting: {
      chunked(group_size, true, [&](std::int64_t begin, const Tensor<S>& chunk) {
        const int b = chunk.extent(0);
        detail::VoteBox box;
        box.prob_sum.assign(static_cast<std::size_t>(b) * classes, 0.0);
        box.hard_votes.assign(static_cast<std::size_t>(b) * classes, 0);
        NormContext ctx;  // statistics pooled over the whole set
        for (int g = 0; g < k; ++g) {
          ctx.stat_group.assign(static_cast<std::size_t>(b), 0);
          ctx.stat_group_count = 1;
          ctx.param_group.assign(static_cast<std::size_t>(b), g);
          detail::accumulate_votes(box, detail::forward_probs(model, chunk, ctx),
                                   mode.hard_voting);
        }
        record(begin, detail::resolve_votes(box, b, classes, mode.hard_voting));
      });
      break;
    }
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Spec-level single-call wrappers
// ---------------------------------------------------------------------------

template <typename S>
int eval_single(Model<S>& model, const Tensor<S>& image, Rng& rng) {
  Tensor<S> batch1 = image.rank() == 3
                         ? image.reshaped({1, image.extent(0), image.extent(1), image.extent(2)})
                         : image;
  return predict(model, batch1, {EvalKind::Single}, 1, rng)[0];
}

template <typename S>
int eval_single_voting(Model<S>& model, const Tensor<S>& image) {
  Rng rng(0);  // mode is deterministic; no group choice involved
  Tensor<S> batch1 = image.rank() == 3
                         ? image.reshaped({1, image.extent(0), image.extent(1), image.extent(2)})
                         : image;
  return predict(model, batch1, {EvalKind::SingleVoting}, 1, rng)[0];
}

/// Group-size image set, statistics from the set, one soft vote per image.
template <typename S>
std::vector<int> eval_voting(Model<S>& model, const Tensor<S>& images, int group_size) {
  if (images.extent(0) != group_size) {
    throw std::invalid_argument("eval_voting: expected exactly " + std::to_string(group_size) +
                                " images, got " + std::to_string(images.extent(0)));
  }
  Rng rng(0);
  return predict(model, images, {EvalKind::Voting},
                 group_size * model.config().norm_groups, rng);
}

/// Full batch split into K groups, each normalized by its own test images.
template <typename S>
std::vector<int> eval_batch(Model<S>& model, const Tensor<S>& images) {
  const int n = images.extent(0);
  if (n % model.config().norm_groups != 0) {
    throw std::invalid_argument("eval_batch: batch " + std::to_string(n) +
                                " not divisible by K=" +
                                std::to_string(model.config().norm_groups));
  }
  Rng rng(0);
  return predict(model, images, {EvalKind::Batch}, n, rng);
}

/// Rot90-augmented single-image prediction: the chosen group is filled with
/// rotated copies, statistics come from the filled group, and the prediction
/// is read from the original image only.
template <typename S>
int rot90_fill_stats(Model<S>& model, const Tensor<S>& image, int group_size, Rng& rng,
                     bool voting = false) {
  Tensor<S> batch1 = image.rank() == 3
                         ? image.reshaped({1, image.extent(0), image.extent(1), image.extent(2)})
                         : image;
  EvalMode mode{voting ? EvalKind::SingleVoting : EvalKind::Single};
  mode.rot90_fill = true;
  return predict(model, batch1, mode, group_size * model.config().norm_groups, rng)[0];
}

// ---------------------------------------------------------------------------
// Accuracy and confusion
// ---------------------------------------------------------------------------

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw std::invalid_argument("accuracy: prediction/label size mismatch");
  }
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

/// Class-by-class counts; rows are true classes, columns predictions.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;

  std::int64_t& at(int true_class, int pred) {
    return counts[static_cast<std::size_t>(true_class) * classes + pred];
  }
  std::int64_t at(int true_class, int pred) const {
    return counts[static_cast<std::size_t>(true_class) * classes + pred];
  }
  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : counts) t += v;
    return t;
  }
  std::int64_t diagonal() const {
    std::int64_t t = 0;
    for (int c = 0; c < classes; ++c) t += at(c, c);
    return t;
  }
  double accuracy() const { return static_cast<double>(diagonal()) / static_cast<double>(total()); }
  std::vector<std::int64_t> row_sums() const {
    std::vector<std::int64_t> out(static_cast<std::size_t>(classes), 0);
    for (int r = 0; r < classes; ++r) {
      for (int c = 0; c < classes; ++c) out[static_cast<std::size_t>(r)] += at(r, c);
    }
    return out;
  }
  std::vector<double> per_class_recall() const {
    const auto rows = row_sums();
    std::vector<double> out(static_cast<std::size_t>(classes), 0.0);
    for (int c = 0; c < classes; ++c) {
      out[static_cast<std::size_t>(c)] =
          rows[static_cast<std::size_t>(c)] == 0
              ? 0.0
              : static_cast<double>(at(c, c)) / static_cast<double>(rows[static_cast<std::size_t>(c)]);
    }
    return out;
  }
  /// Largest share of predictions landing in one class; the
  /// collapse-to-few-classes statistic.
  double max_column_share() const {
    const std::int64_t t = total();
    std::int64_t best = 0;
    for (int c = 0; c < classes; ++c) {
      std::int64_t col = 0;
      for (int r = 0; r < classes; ++r) col += at(r, c);
      best = std::max(best, col);
    }
    return static_cast<double>(best) / static_cast<double>(t);
  }
};

inline ConfusionMatrix confusion_from(const std::vector<int>& preds,
                                      const std::vector<int>& labels, int classes) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("confusion: prediction/label size mismatch");
  }
  ConfusionMatrix cm;
  cm.classes = classes;
  cm.counts.assign(static_cast<std::size_t>(classes) * classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes || preds[i] < 0 || preds[i] >= classes) {
      throw std::out_of_range("confusion: class id out of range");
    }
    ++cm.at(labels[i], preds[i]);
  }
  return cm;
}

/// Degrade, predict, count.
template <typename S>
ConfusionMatrix confusion(Model<S>& model, const Dataset<S>& ds, const EvalMode& mode,
                          const NoiseSpec& noise, int batch_size, Rng& rng) {
  const Dataset<S> noisy = noise.sigma_n > 0.0 ? degrade_dataset(ds, noise) : ds;
  const auto preds = predict(model, noisy.images, mode, batch_size, rng);
  return confusion_from(preds, noisy.labels, ds.class_count);
}

}  // namespace normlab
