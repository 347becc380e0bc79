#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "normlab/autograd.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

/// Element index map shared between ops and their backward closures.
using IndexMap = std::shared_ptr<const std::vector<std::int32_t>>;

inline IndexMap make_index_map(std::vector<std::int32_t> v) {
  return std::make_shared<const std::vector<std::int32_t>>(std::move(v));
}

template <typename S>
using MatrixMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!same_shape(a.shape(), b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Random tensors
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> randn(Shape shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<S>(rng.normal(mean, stddev));
  return t;
}

template <typename S>
Tensor<S> rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename S, typename Fwd, typename Bwd>
Tensor<S> binary_elementwise(const Tensor<S>& a, const Tensor<S>& b, const char* name, Fwd fwd,
                             Bwd bwd) {
  detail::require_same_shape(a, b, name);
  Tensor<S> out(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
  check_finite(out, name);
  if (grad_enabled() && (a.tracked() || b.tracked())) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto ga = a.tracked() ? a.grad_ptr() : nullptr;
    auto gb = b.tracked() ? b.grad_ptr() : nullptr;
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    out.attach_node({a, b}, [og, ga, gb, ad, bd, bwd] {
      const auto& g = *og;
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto [da, db] = bwd((*ad)[i], (*bd)[i], g[i]);
        if (ga) (*ga)[i] += da;
        if (gb) (*gb)[i] += db;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_elementwise(
      a, b, "add", [](S x, S y) { return x + y; },
      [](S, S, S g) { return std::pair<S, S>(g, g); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_elementwise(
      a, b, "sub", [](S x, S y) { return x - y; },
      [](S, S, S g) { return std::pair<S, S>(g, -g); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_elementwise(
      a, b, "mul", [](S x, S y) { return x * y; },
      [](S x, S y, S g) { return std::pair<S, S>(g * y, g * x); });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_elementwise(
      a, b, "div", [](S x, S y) { return x / y; },
      [](S x, S y, S g) { return std::pair<S, S>(g / y, -g * x / (y * y)); });
}

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_elementwise(const Tensor<S>& x, const char* name, Fwd fwd, Bwd bwd) {
  Tensor<S> out(x.shape());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  check_finite(out, name);
  if (grad_enabled() && x.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.grad_ptr();
    auto xd = x.data_ptr();
    auto od = out.data_ptr();
    out.attach_node({x}, [og, gx, xd, od, bwd] {
      const auto& g = *og;
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += bwd((*xd)[i], (*od)[i], g[i]);
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return unary_elementwise(
      x, "add_scalar", [c](S v) { return v + c; }, [](S, S, S g) { return g; });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return unary_elementwise(
      x, "mul_scalar", [c](S v) { return v * c; }, [c](S, S, S g) { return g * c; });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary_elementwise(
      x, "relu", [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S, S g) { return v > S(0) ? g : S(0); });
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  return unary_elementwise(
      x, "sqrt", [](S v) { return std::sqrt(v); },
      [](S, S y, S g) { return g / (S(2) * y); });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  return unary_elementwise(
      x, "square", [](S v) { return v * v; }, [](S v, S, S g) { return S(2) * g * v; });
}

/// Multiply by a single-element tensor with gradient to both operands.
template <typename S>
Tensor<S> scale(const Tensor<S>& x, const Tensor<S>& s) {
  if (s.size() != 1) throw std::invalid_argument("scale: scale factor must be a scalar tensor");
  const S c = s.value();
  Tensor<S> out(x.shape());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * c;
  check_finite(out, "scale");
  if (grad_enabled() && (x.tracked() || s.tracked())) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.tracked() ? x.grad_ptr() : nullptr;
    auto gs = s.tracked() ? s.grad_ptr() : nullptr;
    auto xd = x.data_ptr();
    out.attach_node({x, s}, [og, gx, gs, xd, c] {
      const auto& g = *og;
      if (gx) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * c;
      }
      if (gs) {
        S acc = S(0);
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (*xd)[i];
        (*gs)[0] += acc;
      }
    });
  }
  return out;
}

/// Single element as a scalar tensor (gradient scatters back).
template <typename S>
Tensor<S> pick(const Tensor<S>& x, std::int64_t index) {
  if (index < 0 || index >= x.size()) throw std::out_of_range("pick: index out of range");
  Tensor<S> out = Tensor<S>::scalar(x.data()[static_cast<std::size_t>(index)]);
  if (grad_enabled() && x.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.grad_ptr();
    out.attach_node({x}, [og, gx, index] { (*gx)[static_cast<std::size_t>(index)] += (*og)[0]; });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

/// Graph-aware reshape (same buffer would alias gradients; copies instead).
template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: element count mismatch for " + shape_str(shape));
  }
  Tensor<S> out(std::move(shape), x.data());
  if (grad_enabled() && x.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.grad_ptr();
    out.attach_node({x}, [og, gx] {
      for (std::size_t i = 0; i < og->size(); ++i) (*gx)[i] += (*og)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.data()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  check_finite(out, "sum");
  if (grad_enabled() && x.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.grad_ptr();
    out.attach_node({x}, [og, gx] {
      const S g = (*og)[0];
      for (auto& v : *gx) v += g;
    });
  }
  return out;
}

/// Per-group means over a flat index->group map. Every group must be
/// nonempty.
template <typename S>
Tensor<S> scatter_mean(const Tensor<S>& x, const IndexMap& map, int group_count) {
  if (static_cast<std::int64_t>(map->size()) != x.size()) {
    throw std::invalid_argument("scatter_mean: map size does not match tensor");
  }
  std::vector<S> sums(static_cast<std::size_t>(group_count), S(0));
  std::vector<std::int64_t> counts(static_cast<std::size_t>(group_count), 0);
  const auto& xv = x.data();
  const auto& m = *map;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    sums[static_cast<std::size_t>(m[i])] += xv[i];
    ++counts[static_cast<std::size_t>(m[i])];
  }
  for (int g = 0; g < group_count; ++g) {
    if (counts[static_cast<std::size_t>(g)] == 0) {
      throw std::invalid_argument("scatter_mean: degenerate group " + std::to_string(g));
    }
    sums[static_cast<std::size_t>(g)] /= static_cast<S>(counts[static_cast<std::size_t>(g)]);
  }
  Tensor<S> out({group_count}, std::move(sums));
  check_finite(out, "scatter_mean");
  if (grad_enabled() && x.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.grad_ptr();
    auto cnt = std::make_shared<std::vector<std::int64_t>>(std::move(counts));
    out.attach_node({x}, [og, gx, map, cnt] {
      const auto& g = *og;
      const auto& m = *map;
      for (std::size_t i = 0; i < gx->size(); ++i) {
        const auto group = static_cast<std::size_t>(m[i]);
        (*gx)[i] += g[group] / static_cast<S>((*cnt)[group]);
      }
    });
  }
  return out;
}

/// Broadcast per-group (or per-parameter) values onto an output shape:
/// out_i = values[map[i]].
template <typename S>
Tensor<S> gather(const Tensor<S>& values, const IndexMap& map, Shape out_shape) {
  Tensor<S> out(std::move(out_shape));
  if (static_cast<std::int64_t>(map->size()) != out.size()) {
    throw std::invalid_argument("gather: map size does not match output shape");
  }
  const auto& vv = values.data();
  const auto& m = *map;
  auto& ov = out.mutable_data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = vv[static_cast<std::size_t>(m[i])];
  if (grad_enabled() && values.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gv = values.grad_ptr();
    out.attach_node({values}, [og, gv, map] {
      const auto& g = *og;
      const auto& m = *map;
      for (std::size_t i = 0; i < g.size(); ++i) (*gv)[static_cast<std::size_t>(m[i])] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<S> out({m, n});
  {
    ConstMatrixMap<S> am(a.data().data(), m, k);
    ConstMatrixMap<S> bm(b.data().data(), k, n);
    MatrixMap<S> om(out.mutable_data().data(), m, n);
    om.noalias() = am * bm;
  }
  check_finite(out, "matmul");
  if (grad_enabled() && (a.tracked() || b.tracked())) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto ga = a.tracked() ? a.grad_ptr() : nullptr;
    auto gb = b.tracked() ? b.grad_ptr() : nullptr;
    auto ad = a.data_ptr();
    auto bd = b.data_ptr();
    out.attach_node({a, b}, [og, ga, gb, ad, bd, m, k, n] {
      ConstMatrixMap<S> gm(og->data(), m, n);
      if (ga) {
        ConstMatrixMap<S> bm(bd->data(), k, n);
        MatrixMap<S> gam(ga->data(), m, k);
        gam.noalias() += gm * bm.transpose();
      }
      if (gb) {
        ConstMatrixMap<S> am(ad->data(), m, k);
        MatrixMap<S> gbm(gb->data(), k, n);
        gbm.noalias() += am.transpose() * gm;
      }
    });
  }
  return out;
}

/// Broadcast-add a length-N vector to every row of [M,N].
template <typename S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
  if (x.rank() != 2 || v.rank() != 1 || v.extent(0) != x.extent(1)) {
    throw std::invalid_argument("add_rowvec: incompatible shapes " + shape_str(x.shape()) +
                                " + " + shape_str(v.shape()));
  }
  const int rows = x.extent(0), cols = x.extent(1);
  Tensor<S> out(x.shape());
  const auto& xv = x.data();
  const auto& vv = v.data();
  auto& ov = out.mutable_data();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      ov[static_cast<std::size_t>(r) * cols + c] =
          xv[static_cast<std::size_t>(r) * cols + c] + vv[static_cast<std::size_t>(c)];
    }
  }
  check_finite(out, "add_rowvec");
  if (grad_enabled() && (x.tracked() || v.tracked())) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.tracked() ? x.grad_ptr() : nullptr;
    auto gv = v.tracked() ? v.grad_ptr() : nullptr;
    out.attach_node({x, v}, [og, gx, gv, rows, cols] {
      const auto& g = *og;
      if (gx) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      }
      if (gv) {
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) {
            (*gv)[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(r) * cols + c];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classification head
// ---------------------------------------------------------------------------

/// Row-wise softmax over the last axis.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  if (x.rank() < 1) throw std::invalid_argument("softmax: rank-0 input");
  const int cols = x.extent(x.rank() - 1);
  const std::int64_t rows = x.size() / cols;
  Tensor<S> out(x.shape());
  const auto& xv = x.data();
  auto& ov = out.mutable_data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    S mx = xv[base];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, xv[base + c]);
    S denom = S(0);
    for (int c = 0; c < cols; ++c) {
      const S e = std::exp(xv[base + c] - mx);
      ov[base + c] = e;
      denom += e;
    }
    for (int c = 0; c < cols; ++c) ov[base + c] /= denom;
  }
  check_finite(out, "softmax");
  if (grad_enabled() && x.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gx = x.grad_ptr();
    auto od = out.data_ptr();
    out.attach_node({x}, [og, gx, od, rows, cols] {
      const auto& g = *og;
      const auto& p = *od;
      for (std::int64_t r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * cols;
        S dot = S(0);
        for (int c = 0; c < cols; ++c) dot += g[base + c] * p[base + c];
        for (int c = 0; c < cols; ++c) (*gx)[base + c] += p[base + c] * (g[base + c] - dot);
      }
    });
  }
  return out;
}

/// Mean negative log-likelihood of the labeled class, from probabilities.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.extent(0) != static_cast<int>(labels.size())) {
    throw std::invalid_argument("cross_entropy: probabilities must be [N,classes] with N labels");
  }
  const int n = probs.extent(0), classes = probs.extent(1);
  const auto& pv = probs.data();
  S acc = S(0);
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) throw std::out_of_range("cross_entropy: label out of range");
    const S p = pv[static_cast<std::size_t>(i) * classes + y];
    if (!(p > S(0))) throw std::domain_error("cross_entropy: zero probability for true class");
    acc -= std::log(p);
  }
  Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(n));
  check_finite(out, "cross_entropy");
  if (grad_enabled() && probs.tracked()) {
    out.ensure_grad();
    auto og = out.grad_ptr();
    auto gp = probs.grad_ptr();
    auto pd = probs.data_ptr();
    auto lab = std::make_shared<std::vector<int>>(labels);
    out.attach_node({probs}, [og, gp, pd, lab, n, classes] {
      const S g = (*og)[0];
      for (int i = 0; i < n; ++i) {
        const std::size_t idx =
            static_cast<std::size_t>(i) * classes + (*lab)[static_cast<std::size_t>(i)];
        (*gp)[idx] -= g / (static_cast<S>(n) * (*pd)[idx]);
      }
    });
  }
  return out;
}

template <typename S>
struct SoftmaxCrossEntropy {
  Tensor<S> loss;   // scalar, on the graph
  Tensor<S> probs;  // [N,classes], detached
};

/// Fused log-sum-exp cross-entropy on logits; the stable route used by
/// training.
template <typename S>
SoftmaxCrossEntropy<S> softmax_cross_entropy(const Tensor<S>& logits,
                                             const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.extent(0) != static_cast<int>(labels.size())) {
    throw std::invalid_argument("softmax_cross_entropy: logits must be [N,classes] with N labels");
  }
  const int n = logits.extent(0), classes = logits.extent(1);
  const auto& zv = logits.data();
  Tensor<S> probs(logits.shape());
  auto& pv = probs.mutable_data();
  S acc = S(0);
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label out of range");
    }
    const std::size_t base = static_cast<std::size_t>(i) * classes;
    S mx = zv[base];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, zv[base + c]);
    S denom = S(0);
    for (int c = 0; c < classes; ++c) {
      const S e = std::exp(zv[base + c] - mx);
      pv[base + c] = e;
      denom += e;
    }
    for (int c = 0; c < classes; ++c) pv[base + c] /= denom;
    acc += std::log(denom) + mx - zv[base + y];
  }
  Tensor<S> loss = Tensor<S>::scalar(acc / static_cast<S>(n));
  check_finite(loss, "softmax_cross_entropy");
  if (grad_enabled() && logits.tracked()) {
    loss.ensure_grad();
    auto og = loss.grad_ptr();
    auto gz = logits.grad_ptr();
    auto pd = probs.data_ptr();
    auto lab = std::make_shared<std::vector<int>>(labels);
    loss.attach_node({logits}, [og, gz, pd, lab, n, classes] {
      const S g = (*og)[0] / static_cast<S>(n);
      for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * classes;
        for (int c = 0; c < classes; ++c) {
          const S indicator = (c == (*lab)[static_cast<std::size_t>(i)]) ? S(1) : S(0);
          (*gz)[base + c] += g * ((*pd)[base + c] - indicator);
        }
      }
    });
  }
  return {std::move(loss), std::move(probs)};
}

/// Row argmax with ties broken toward the lowest index.
template <typename S>
std::vector<int> argmax_rows(const Tensor<S>& x) {
  if (x.rank() != 2) throw std::invalid_argument("argmax_rows: expected rank-2 tensor");
  const int rows = x.extent(0), cols = x.extent(1);
  std::vector<int> out(static_cast<std::size_t>(rows));
  const auto& xv = x.data();
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    int best = 0;
    for (int c = 1; c < cols; ++c) {
      if (xv[base + c] > xv[base + best]) best = c;
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

}  // namespace normlab
