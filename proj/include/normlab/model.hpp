#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "normlab/conv.hpp"
#include "normlab/norm.hpp"
#include "normlab/ops.hpp"
#include "normlab/partition.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

/// Network description: conv/dense stack tokens ("16c", "512d"), the norm
/// variant inserted after every conv/dense block, input [H,W,C] and class
/// count. Convolutions are 3x3 stride-1 same-padded; a 2x2 max-pool follows
/// each conv pair.
struct ModelConfig {
  std::vector<std::string> arch;
  NormKind norm_kind = NormKind::Batch;
  int norm_groups = 1;
  double epsilon = 1e-7;
  double momentum = 0.9;
  Shape input;  // [H,W,C]
  int classes = 10;
};

/// The reference digit-classification network:
/// Input-16c-16c-32c-32c-512d-1024d-output.
inline ModelConfig digits_model_config(NormKind kind, int groups) {
  ModelConfig mc;
  mc.arch = {"16c", "16c", "32c", "32c", "512d", "1024d"};
  mc.norm_kind = kind;
  mc.norm_groups = groups;
  mc.input = {28, 28, 1};
  mc.classes = 10;
  return mc;
}

namespace detail {

struct ArchToken {
  bool is_conv = false;
  int units = 0;
};

inline ArchToken parse_arch_token(const std::string& token) {
  if (token.size() < 2) throw std::invalid_argument("bad architecture token: " + token);
  const char tail = token.back();
  if (tail != 'c' && tail != 'd') {
    throw std::invalid_argument("bad architecture token (want <n>c or <n>d): " + token);
  }
  int units = 0;
  for (std::size_t i = 0; i + 1 < token.size(); ++i) {
    if (token[i] < '0' || token[i] > '9') {
      throw std::invalid_argument("bad architecture token: " + token);
    }
    units = units * 10 + (token[i] - '0');
  }
  if (units <= 0) throw std::invalid_argument("bad architecture token: " + token);
  return {tail == 'c', units};
}

}  // namespace detail

/// Per-forward normalization behavior. `stat_group` pools statistics over
/// samples sharing an id (empty = the whole batch is one pool);
/// `param_group` selects which Local scaling pair each sample uses.
struct NormContext {
  bool training = false;
  bool frozen = false;
  std::vector<int> stat_group;
  int stat_group_count = 1;
  std::vector<int> param_group;
};

template <typename S>
class Model {
 public:
  /// He-uniform initialization for conv/dense kernels, gamma=1, beta=0.
  Model(ModelConfig config, Rng& rng) : config_(std::move(config)) {
    if (config_.input.size() != 3) {
      throw std::invalid_argument("model: input shape must be [H,W,C]");
    }
    if (config_.classes < 2) throw std::invalid_argument("model: need at least 2 classes");
    build(rng);
  }

  const ModelConfig& config() const { return config_; }

  /// Logits [N,classes] for preprocessed input [N,H,W,C].
  Tensor<S> forward(const Tensor<S>& x, const NormContext& ctx) {
    if (x.rank() != 4 || x.extent(1) != config_.input[0] || x.extent(2) != config_.input[1] ||
        x.extent(3) != config_.input[2]) {
      throw std::invalid_argument("model forward: input shape " + shape_str(x.shape()) +
                                  " does not match configured " + shape_str(config_.input));
    }
    const int n = x.extent(0);
    if (!ctx.stat_group.empty() && static_cast<int>(ctx.stat_group.size()) != n) {
      throw std::invalid_argument("model forward: stat_group size mismatch");
    }
    Tensor<S> h = x;
    for (auto& layer : layers_) {
      switch (layer.kind) {
        case LayerKind::Conv:
          h = conv2d(h, layer.w, layer.b, 1, Padding::Same);
          break;
        case LayerKind::Pool:
          h = maxpool2x2(h);
          break;
        case LayerKind::Flatten:
          h = reshape(h, {h.extent(0), static_cast<int>(h.size() / h.extent(0))});
          break;
        case LayerKind::Dense:
          h = add_rowvec(matmul(h, layer.w), layer.b);
          break;
        case LayerKind::Relu:
          h = relu(h);
          break;
        case LayerKind::Norm:
          h = apply_norm(h, layer.norm, ctx);
          break;
      }
    }
    return h;
  }

  /// Named trainable parameters, in deterministic layer order.
  std::vector<std::pair<std::string, Tensor<S>>> parameters() {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (auto& layer : layers_) {
      if (layer.kind == LayerKind::Conv || layer.kind == LayerKind::Dense) {
        out.emplace_back(layer.name + ".w", layer.w);
        out.emplace_back(layer.name + ".b", layer.b);
      } else if (layer.kind == LayerKind::Norm) {
        out.emplace_back(layer.name + ".gamma", layer.norm.gamma);
        out.emplace_back(layer.name + ".beta", layer.norm.beta);
      }
    }
    return out;
  }

  /// Parameters plus running statistics: everything a checkpoint persists.
  std::vector<std::pair<std::string, Tensor<S>>> state_tensors() {
    auto out = parameters();
    for (auto& layer : layers_) {
      if (layer.kind == LayerKind::Norm && layer.norm.kind == NormKind::Batch) {
        out.emplace_back(layer.name + ".running_mean", layer.norm.running_mean);
        out.emplace_back(layer.name + ".running_var", layer.norm.running_var);
      }
    }
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t n = 0;
    for (auto& [name, t] : parameters()) n += t.size();
    return n;
  }

  std::vector<NormSpec<S>*> norm_layers() {
    std::vector<NormSpec<S>*> out;
    for (auto& layer : layers_) {
      if (layer.kind == LayerKind::Norm) out.push_back(&layer.norm);
    }
    return out;
  }

  std::vector<std::string> norm_layer_names() const {
    std::vector<std::string> out;
    for (const auto& layer : layers_) {
      if (layer.kind == LayerKind::Norm) out.push_back(layer.name);
    }
    return out;
  }

  /// Total channels covered by norm layers (each channel has one scaling
  /// pair per group).
  std::int64_t normalized_channels() const {
    std::int64_t n = 0;
    for (const auto& layer : layers_) {
      if (layer.kind == LayerKind::Norm) n += layer.channels;
    }
    return n;
  }

  /// Training context: BatchNorm pools the whole batch; LocalNorm splits it
  /// into K contiguous chunks, statistics and scaling pairs alike.
  NormContext train_context(int batch) const {
    NormContext ctx;
    ctx.training = true;
    if (config_.norm_kind == NormKind::Local) {
      const int k = config_.norm_groups;
      if (batch % k != 0) {
        throw std::invalid_argument("train context: batch " + std::to_string(batch) +
                                    " not divisible by K=" + std::to_string(k));
      }
      const int per_group = batch / k;
      ctx.stat_group.resize(static_cast<std::size_t>(batch));
      for (int i = 0; i < batch; ++i) ctx.stat_group[static_cast<std::size_t>(i)] = i / per_group;
      ctx.stat_group_count = k;
      ctx.param_group = ctx.stat_group;
    }
    return ctx;
  }

 private:
  enum class LayerKind { Conv, Dense, Pool, Flatten, Norm, Relu };

  struct Layer {
    LayerKind kind;
    std::string name;
    int channels = 0;
    Tensor<S> w, b;
    NormSpec<S> norm;
  };

  void build(Rng& rng) {
    Shape cur = {config_.input[0], config_.input[1], config_.input[2]};
    bool in_dense = false;
    int conv_idx = 0, dense_idx = 0, norm_idx = 0, pair_run = 0;
    std::int64_t flat = 0;
    for (const auto& token : config_.arch) {
      const auto t = detail::parse_arch_token(token);
      if (t.is_conv) {
        if (in_dense) {
          throw std::invalid_argument("architecture: conv after dense is not supported");
        }
        Layer conv;
        conv.kind = LayerKind::Conv;
        conv.name = "conv" + std::to_string(++conv_idx);
        conv.channels = t.units;
        conv.w = he_uniform({3, 3, cur[2], t.units}, 9LL * cur[2], rng);
        conv.b = Tensor<S>::param({t.units});
        layers_.push_back(std::move(conv));
        cur[2] = t.units;
        push_norm(++norm_idx, t.units);
        layers_.push_back({LayerKind::Relu, "relu", 0, {}, {}, {}});
        if (++pair_run == 2) {
          layers_.push_back({LayerKind::Pool, "pool", 0, {}, {}, {}});
          cur[0] /= 2;
          cur[1] /= 2;
          pair_run = 0;
          if (cur[0] < 1 || cur[1] < 1) {
            throw std::invalid_argument("architecture: pooled spatial extent reached zero");
          }
        }
      } else {
        if (!in_dense) {
          layers_.push_back({LayerKind::Flatten, "flatten", 0, {}, {}, {}});
          flat = static_cast<std::int64_t>(cur[0]) * cur[1] * cur[2];
          in_dense = true;
        }
        Layer dense;
        dense.kind = LayerKind::Dense;
        dense.name = "dense" + std::to_string(++dense_idx);
        dense.channels = t.units;
        dense.w = he_uniform({static_cast<int>(flat), t.units}, flat, rng);
        dense.b = Tensor<S>::param({t.units});
        layers_.push_back(std::move(dense));
        flat = t.units;
        push_norm(++norm_idx, t.units);
        layers_.push_back({LayerKind::Relu, "relu", 0, {}, {}, {}});
      }
    }
    if (!in_dense) {
      layers_.push_back({LayerKind::Flatten, "flatten", 0, {}, {}, {}});
      flat = static_cast<std::int64_t>(cur[0]) * cur[1] * cur[2];
    }
    Layer head;
    head.kind = LayerKind::Dense;
    head.name = "dense" + std::to_string(++dense_idx);
    head.channels = config_.classes;
    head.w = he_uniform({static_cast<int>(flat), config_.classes}, flat, rng);
    head.b = Tensor<S>::param({config_.classes});
    layers_.push_back(std::move(head));
  }

  void push_norm(int index, int channels) {
    Layer norm;
    norm.kind = LayerKind::Norm;
    norm.name = "norm" + std::to_string(index);
    norm.channels = channels;
    norm.norm = make_norm_spec<S>(config_.norm_kind, channels, config_.norm_groups,
                                  static_cast<S>(config_.epsilon),
                                  static_cast<S>(config_.momentum));
    layers_.push_back(std::move(norm));
  }

  Tensor<S> he_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor<S> t = Tensor<S>::param(std::move(shape));
    for (auto& v : t.mutable_data()) v = static_cast<S>(rng.uniform(-limit, limit));
    return t;
  }

  Tensor<S> apply_norm(const Tensor<S>& x, NormSpec<S>& spec, const NormContext& ctx) {
    const Shape s4 = (x.rank() == 4) ? x.shape() : Shape{x.extent(0), 1, 1, x.extent(1)};
    const int n = s4[0], c = s4[3];

    if (spec.kind == NormKind::Batch) {
      if (ctx.frozen) {
        if (!spec.running_init) {
          throw std::logic_error("norm: frozen evaluation with uninitialized running statistics");
        }
        return normalize_frozen(x, spec.running_mean, spec.running_var, spec.epsilon, spec.gamma,
                                spec.beta, channel_map(s4));
      }
      if (ctx.training) {
        NoGrad ng;
        const GroupPartition pb = build_partition(NormKind::Batch, s4);
        auto [m, v] = reduce_mean_var(x, pb);
        update_running_stats(spec, m, v);
      }
      const GroupPartition p = ctx.stat_group.empty()
                                   ? build_partition(NormKind::Batch, s4)
                                   : build_sample_channel_partition(s4, ctx.stat_group,
                                                                    ctx.stat_group_count);
      return normalize_groups(x, p, spec.epsilon, spec.gamma, spec.beta, channel_map(s4));
    }

    if (spec.kind == NormKind::Local) {
      if (ctx.stat_group.empty() || ctx.param_group.empty()) {
        throw std::invalid_argument("norm: LocalNorm forward requires group assignments");
      }
      const GroupPartition p =
          build_sample_channel_partition(s4, ctx.stat_group, ctx.stat_group_count);
      // Parameter map: sample i uses scaling pair (param_group[i], channel).
      std::vector<std::int32_t> pmap(static_cast<std::size_t>(shape_numel(s4)));
      const std::int64_t per_sample = shape_numel(s4) / n;
      for (int i = 0; i < n; ++i) {
        const int pg = ctx.param_group[static_cast<std::size_t>(i)];
        if (pg < 0 || pg >= spec.groups) {
          throw std::invalid_argument("norm: parameter group id out of range");
        }
        for (std::int64_t j = 0; j < per_sample; ++j) {
          pmap[static_cast<std::size_t>(i * per_sample + j)] =
              static_cast<std::int32_t>(pg * c + static_cast<int>(j % c));
        }
      }
      return normalize_groups(x, p, spec.epsilon, spec.gamma, spec.beta,
                              make_index_map(std::move(pmap)));
    }

    // Layer/Group/Instance statistics are per-sample; batch composition and
    // eval mode cannot change them.
    const GroupPartition p = build_partition(spec.kind, s4, spec.groups);
    return normalize_groups(x, p, spec.epsilon, spec.gamma, spec.beta, channel_map(s4));
  }

  ModelConfig config_;
  std::vector<Layer> layers_;
};

/// One heavy-ball SGD update: v <- momentum*v + g; w <- w - lr*v.
template <typename S>
void sgd_step(Tensor<S>& param, std::vector<S>& velocity, S lr, S momentum) {
  if (!(lr > S(0))) throw std::invalid_argument("sgd_step: lr must be positive");
  if (!param.has_grad()) throw std::invalid_argument("sgd_step: parameter has no gradient");
  if (velocity.size() != static_cast<std::size_t>(param.size())) {
    throw std::invalid_argument("sgd_step: velocity shape mismatch");
  }
  auto& w = param.mutable_data();
  const auto& g = param.grad();
  for (std::size_t i = 0; i < w.size(); ++i) {
    velocity[i] = momentum * velocity[i] + g[i];
    w[i] -= lr * velocity[i];
  }
}

template <typename S>
class SgdOptimizer {
 public:
  SgdOptimizer(S lr, S momentum) : lr_(lr), momentum_(momentum) {}

  void set_lr(S lr) { lr_ = lr; }
  S lr() const { return lr_; }

  void step(std::vector<std::pair<std::string, Tensor<S>>>& params) {
    for (auto& [name, p] : params) {
      auto& v = velocity_[name];
      if (v.empty()) v.assign(static_cast<std::size_t>(p.size()), S(0));
      sgd_step(p, v, lr_, momentum_);
    }
  }

  static void zero_grads(std::vector<std::pair<std::string, Tensor<S>>>& params) {
    for (auto& [name, p] : params) p.zero_grad();
  }

 private:
  S lr_;
  S momentum_;
  std::map<std::string, std::vector<S>> velocity_;
};

/// Rebuild a BatchNorm-trained model as LocalNorm(K): every scaling pair is
/// tiled K times, all other weights are copied, statistics become dynamic
/// (running statistics are dropped).
template <typename S>
Model<S> transfer_bn_to_local(Model<S>& source, int k) {
  if (source.config().norm_kind != NormKind::Batch) {
    throw std::invalid_argument("transfer: source model norm layers must be BatchNorm");
  }
  if (k < 1) throw std::invalid_argument("transfer: K must be positive");
  ModelConfig config = source.config();
  config.norm_kind = NormKind::Local;
  config.norm_groups = k;
  Rng init_rng(0);
  Model<S> target(config, init_rng);

  auto src_norms = source.norm_layers();
  auto dst_norms = target.norm_layers();
  auto src_params = source.parameters();
  auto dst_params = target.parameters();
  std::map<std::string, Tensor<S>> src_by_name(src_params.begin(), src_params.end());
  for (auto& [name, dst] : dst_params) {
    const auto it = src_by_name.find(name);
    if (it == src_by_name.end()) {
      throw std::logic_error("transfer: missing source tensor " + name);
    }
    const Tensor<S>& src = it->second;
    auto& dv = dst.mutable_data();
    const auto& sv = src.data();
    if (dst.size() == src.size()) {
      std::copy(sv.begin(), sv.end(), dv.begin());
    } else if (dst.size() == src.size() * k) {
      for (int g = 0; g < k; ++g) {
        std::copy(sv.begin(), sv.end(), dv.begin() + static_cast<std::ptrdiff_t>(g * src.size()));
      }
    } else {
      throw std::logic_error("transfer: incompatible tensor sizes for " + name);
    }
  }
  (void)src_norms;
  (void)dst_norms;
  return target;
}

}  // namespace normlab
