#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace normlab {

/// Extents in [N,H,W,C] order; lower-rank tensors use a suffix of these axes.
using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape");
    n *= e;
  }
  return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename S>
class Tensor;

namespace detail {

/// One recorded op in the forward graph. `backward` pulls the output
/// gradient (captured by the closure) and accumulates into the parents'
/// gradient buffers.
template <typename S>
struct Node {
  std::uint64_t id = 0;
  std::vector<Tensor<S>> parents;
  std::function<void()> backward;
};

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

/// Thread-local switch for graph recording; evaluation paths disable it.
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// RAII guard that disables graph recording in its scope.
class NoGrad {
 public:
  NoGrad() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGrad() { detail::grad_enabled_flag() = prev_; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  bool prev_;
};

/// Dense tensor of reals. Copies are cheap handles sharing one buffer;
/// buffers are treated as immutable once published to an op. The optional
/// gradient buffer always matches the data shape.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(shape_numel(shape_), S(0))) {}

  Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape_)) {
      throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<S>>(std::move(values));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }

  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  /// Trainable leaf: allocates a persistent gradient buffer.
  static Tensor param(Shape shape, std::vector<S> values) {
    Tensor t(std::move(shape), std::move(values));
    t.requires_grad_ = true;
    t.grad_ = std::make_shared<std::vector<S>>(t.size(), S(0));
    return t;
  }

  static Tensor param(Shape shape) {
    Tensor t(std::move(shape));
    t.requires_grad_ = true;
    t.grad_ = std::make_shared<std::vector<S>>(t.size(), S(0));
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

  const std::vector<S>& data() const { return *data_; }
  std::vector<S>& mutable_data() { return *data_; }
  const std::shared_ptr<std::vector<S>>& data_ptr() const { return data_; }

  S operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  /// Value of a single-element tensor.
  S value() const {
    if (size() != 1) throw std::logic_error("value() on tensor of size " + std::to_string(size()));
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }
  bool tracked() const { return requires_grad_ || node_ != nullptr; }

  bool has_grad() const { return grad_ != nullptr; }
  const std::vector<S>& grad() const {
    if (!grad_) throw std::logic_error("tensor has no gradient buffer");
    return *grad_;
  }
  const std::shared_ptr<std::vector<S>>& grad_ptr() const { return grad_; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), S(0));
  }

  const std::shared_ptr<detail::Node<S>>& node() const { return node_; }

  /// Same buffer under a new shape with identical element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
      throw std::invalid_argument("reshape from " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  /// Deep copy of values only (no graph, no grad).
  Tensor clone() const {
    return Tensor(shape_, *data_);
  }

  /// Internal: attach a recorded op. Allocates the output gradient buffer so
  /// closures can capture it.
  void attach_node(std::vector<Tensor<S>> parents, std::function<void()> backward) {
    node_ = std::make_shared<detail::Node<S>>();
    node_->id = detail::next_node_id();
    node_->parents = std::move(parents);
    node_->backward = std::move(backward);
    ensure_grad();
  }

  void ensure_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<S>>(size(), S(0));
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
  std::shared_ptr<std::vector<S>> grad_;
  std::shared_ptr<detail::Node<S>> node_;
  bool requires_grad_ = false;
};

/// NHWC flat index helpers.
inline std::int64_t nhwc_index(const Shape& s, int n, int h, int w, int c) {
  return ((static_cast<std::int64_t>(n) * s[1] + h) * s[2] + w) * s[3] + c;
}

template <typename S>
void check_finite(const std::vector<S>& values, const char* op_name) {
  for (S v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::domain_error(std::string("non-finite value produced by ") + op_name);
    }
  }
}

template <typename S>
void check_finite(const Tensor<S>& t, const char* op_name) {
  check_finite(t.data(), op_name);
}

}  // namespace normlab
