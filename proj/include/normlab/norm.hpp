#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "normlab/ops.hpp"
#include "normlab/partition.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

enum class StatMode { Frozen, Dynamic };

/// One norm layer's configuration and state. gamma/beta are [C] for the
/// per-channel variants and [K,C] for Local (each group carries its own
/// scaling pair per channel). Running statistics apply to the Batch kind
/// only and are used only in Frozen mode.
template <typename S>
struct NormSpec {
  NormKind kind = NormKind::Batch;
  int groups = 1;  // K for Group/Local kinds
  S epsilon = S(1e-7);
  StatMode stat_mode = StatMode::Dynamic;
  S momentum = S(0.9);
  Tensor<S> gamma;
  Tensor<S> beta;
  Tensor<S> running_mean;
  Tensor<S> running_var;
  bool running_init = false;

  int channels() const { return gamma.rank() == 2 ? gamma.extent(1) : gamma.extent(0); }
};

template <typename S>
NormSpec<S> make_norm_spec(NormKind kind, int channels, int groups = 1, S epsilon = S(1e-7),
                           S momentum = S(0.9)) {
  if (!(epsilon > S(0))) throw std::invalid_argument("norm spec: epsilon must be positive");
  if (groups < 1) throw std::invalid_argument("norm spec: group count must be positive");
  NormSpec<S> spec;
  spec.kind = kind;
  spec.groups = (kind == NormKind::Group || kind == NormKind::Local) ? groups : 1;
  spec.epsilon = epsilon;
  spec.momentum = momentum;
  // LocalNorm statistics are recomputed from the data at test time; only the
  // Batch kind accumulates running statistics for Frozen evaluation.
  spec.stat_mode = StatMode::Dynamic;
  const Shape param_shape =
      (kind == NormKind::Local) ? Shape{spec.groups, channels} : Shape{channels};
  std::vector<S> ones(static_cast<std::size_t>(shape_numel(param_shape)), S(1));
  spec.gamma = Tensor<S>::param(param_shape, std::move(ones));
  spec.beta = Tensor<S>::param(param_shape);
  if (kind == NormKind::Batch) {
    spec.running_mean = Tensor<S>({channels});
    spec.running_var = Tensor<S>::ones({channels});
  }
  return spec;
}

/// Per-group (mean, biased variance) pairs for a partition, as [G] tensors.
/// Differentiable; the variance uses the same 1/m factor as the mean.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> reduce_mean_var(const Tensor<S>& x, const GroupPartition& p) {
  if (static_cast<std::int64_t>(p.assignments->size()) != x.size()) {
    throw std::invalid_argument("reduce_mean_var: partition does not match tensor size");
  }
  Tensor<S> mean = scatter_mean(x, p.assignments, p.group_count);
  Tensor<S> centered = sub(x, gather(mean, p.assignments, x.shape()));
  Tensor<S> variance = scatter_mean(mul(centered, centered), p.assignments, p.group_count);
  return {std::move(mean), std::move(variance)};
}

/// Dynamic group normalization with an explicit parameter map:
/// y_i = (x_i - mu_g(i)) / sqrt(var_g(i) + eps) * gamma[pmap[i]] + beta[pmap[i]].
template <typename S>
Tensor<S> normalize_groups(const Tensor<S>& x, const GroupPartition& stat, S epsilon,
                           const Tensor<S>& gamma, const Tensor<S>& beta, const IndexMap& pmap) {
  Tensor<S> mean = scatter_mean(x, stat.assignments, stat.group_count);
  Tensor<S> centered = sub(x, gather(mean, stat.assignments, x.shape()));
  Tensor<S> variance = scatter_mean(mul(centered, centered), stat.assignments, stat.group_count);
  Tensor<S> sd = normlab::sqrt(add_scalar(variance, epsilon));
  Tensor<S> xhat = div(centered, gather(sd, stat.assignments, x.shape()));
  return add(mul(xhat, gather(gamma, pmap, x.shape())), gather(beta, pmap, x.shape()));
}

/// Frozen-statistics normalization with per-channel running (mean, var).
template <typename S>
Tensor<S> normalize_frozen(const Tensor<S>& x, const Tensor<S>& running_mean,
                           const Tensor<S>& running_var, S epsilon, const Tensor<S>& gamma,
                           const Tensor<S>& beta, const IndexMap& cmap) {
  Tensor<S> sd = normlab::sqrt(add_scalar(running_var, epsilon));
  Tensor<S> centered = sub(x, gather(running_mean, cmap, x.shape()));
  Tensor<S> xhat = div(centered, gather(sd, cmap, x.shape()));
  return add(mul(xhat, gather(gamma, cmap, x.shape())), gather(beta, cmap, x.shape()));
}

/// Normalize per the spec's variant and statistic mode over the given
/// partition (the partition must describe x's shape).
template <typename S>
Tensor<S> normalize(const Tensor<S>& x, const NormSpec<S>& spec, const GroupPartition& partition) {
  if (static_cast<std::int64_t>(partition.assignments->size()) != x.size()) {
    throw std::invalid_argument("normalize: partition does not match tensor size");
  }
  check_finite(x, "normalize input");
  if (spec.stat_mode == StatMode::Frozen) {
    if (spec.kind != NormKind::Batch) {
      throw std::invalid_argument("normalize: frozen statistics only defined for the Batch kind");
    }
    if (!spec.running_init) {
      throw std::logic_error("normalize: frozen mode with uninitialized running statistics");
    }
    return normalize_frozen(x, spec.running_mean, spec.running_var, spec.epsilon, spec.gamma,
                            spec.beta, channel_map(partition.shape));
  }
  // Local's canonical gid = k*C + c coincides with the flat [K,C] parameter
  // index, so the partition doubles as the parameter map.
  const IndexMap pmap = (spec.kind == NormKind::Local) ? partition.assignments
                                                       : channel_map(partition.shape);
  return normalize_groups(x, partition, spec.epsilon, spec.gamma, spec.beta, pmap);
}

/// LocalNorm training forward: batch split into K contiguous chunks, each
/// normalized by its own dynamic statistics and its own scaling pair.
template <typename S>
Tensor<S> localnorm_forward_train(const Tensor<S>& x, const NormSpec<S>& spec) {
  if (spec.kind != NormKind::Local) {
    throw std::invalid_argument("localnorm_forward_train: spec is not Local");
  }
  const GroupPartition p = build_partition(NormKind::Local, x.shape(), spec.groups);
  return normalize(x, spec, p);
}

/// Exponential-moving-average update of running statistics:
/// run <- momentum*run + (1-momentum)*batch.
template <typename S>
void update_running_stats(NormSpec<S>& spec, const Tensor<S>& batch_mean,
                          const Tensor<S>& batch_var, S momentum) {
  if (!(momentum >= S(0) && momentum < S(1))) {
    throw std::invalid_argument("update_running_stats: momentum must be in [0,1)");
  }
  if (batch_mean.size() != spec.running_mean.size() ||
      batch_var.size() != spec.running_var.size()) {
    throw std::invalid_argument("update_running_stats: statistic shape mismatch");
  }
  auto& rm = spec.running_mean.mutable_data();
  auto& rv = spec.running_var.mutable_data();
  const auto& bm = batch_mean.data();
  const auto& bv = batch_var.data();
  for (std::size_t i = 0; i < rm.size(); ++i) rm[i] = momentum * rm[i] + (S(1) - momentum) * bm[i];
  for (std::size_t i = 0; i < rv.size(); ++i) rv[i] = momentum * rv[i] + (S(1) - momentum) * bv[i];
  spec.running_init = true;
}

template <typename S>
void update_running_stats(NormSpec<S>& spec, const Tensor<S>& batch_mean,
                          const Tensor<S>& batch_var) {
  update_running_stats(spec, batch_mean, batch_var, spec.momentum);
}

/// SwitchNorm: per-element statistics mixed from the BatchNorm, LayerNorm
/// and InstanceNorm statistics (in that weight order), then one per-channel
/// affine. Both weight triples must lie on the 3-simplex.
template <typename S>
Tensor<S> switchnorm_forward(const Tensor<S>& x, const Tensor<S>& weights_mean,
                             const Tensor<S>& weights_var, const Tensor<S>& gamma,
                             const Tensor<S>& beta, S epsilon = S(1e-7)) {
  if (x.rank() != 4) throw std::invalid_argument("switchnorm: input must be [N,H,W,C]");
  if (weights_mean.size() != 3 || weights_var.size() != 3) {
    throw std::invalid_argument("switchnorm: weight triples must have 3 entries");
  }
  for (const Tensor<S>* wt : {&weights_mean, &weights_var}) {
    S sum = S(0);
    for (S v : wt->data()) {
      if (v < S(0)) throw std::invalid_argument("switchnorm: negative mixture weight");
      sum += v;
    }
    if (std::abs(static_cast<double>(sum) - 1.0) > 1e-9) {
      throw std::invalid_argument("switchnorm: mixture weights must sum to 1");
    }
  }
  const GroupPartition pb = build_partition(NormKind::Batch, x.shape());
  const GroupPartition pl = build_partition(NormKind::Layer, x.shape());
  const GroupPartition pi = build_partition(NormKind::Instance, x.shape());

  auto [mb, vb] = reduce_mean_var(x, pb);
  auto [ml, vl] = reduce_mean_var(x, pl);
  auto [mi, vi] = reduce_mean_var(x, pi);

  auto mix = [&](const Tensor<S>& w, const Tensor<S>& b_stat, const Tensor<S>& l_stat,
                 const Tensor<S>& i_stat) {
    Tensor<S> acc = scale(gather(b_stat, pb.assignments, x.shape()), pick(w, 0));
    acc = add(acc, scale(gather(l_stat, pl.assignments, x.shape()), pick(w, 1)));
    return add(acc, scale(gather(i_stat, pi.assignments, x.shape()), pick(w, 2)));
  };
  Tensor<S> mean_mix = mix(weights_mean, mb, ml, mi);
  Tensor<S> var_mix = mix(weights_var, vb, vl, vi);

  Tensor<S> centered = sub(x, mean_mix);
  Tensor<S> xhat = div(centered, normlab::sqrt(add_scalar(var_mix, epsilon)));
  const IndexMap cmap = channel_map(x.shape());
  return add(mul(xhat, gather(gamma, cmap, x.shape())), gather(beta, cmap, x.shape()));
}

/// Simplex weights from free logits (separate triples for mean and variance
/// mixing are the trainable parameterization).
template <typename S>
Tensor<S> switchnorm_weights(const Tensor<S>& logits) {
  if (logits.rank() != 1 || logits.size() != 3) {
    throw std::invalid_argument("switchnorm_weights: need a rank-1 tensor of 3 logits");
  }
  return softmax(logits);
}

}  // namespace normlab
