#pragma once

#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

namespace detail {

template <typename S>
void topo_visit(const std::shared_ptr<Node<S>>& root,
                std::vector<std::shared_ptr<Node<S>>>& order) {
  // Iterative DFS; graphs from long training steps overflow the stack
  // with a recursive version.
  std::unordered_set<const Node<S>*> seen;
  struct Frame {
    std::shared_ptr<Node<S>> node;
    std::size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  seen.insert(root.get());
  stack.push_back({root});
  while (!stack.empty()) {
    Frame& top = stack.back();
    bool descended = false;
    while (top.next_parent < top.node->parents.size()) {
      const auto& parent = top.node->parents[top.next_parent++];
      if (parent.node() && seen.insert(parent.node().get()).second) {
        stack.push_back({parent.node()});
        descended = true;
        break;
      }
    }
    if (!descended && top.next_parent >= top.node->parents.size()) {
      order.push_back(top.node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Every tracked tensor that
/// participated in the recorded forward computation receives its
/// d(loss)/d(tensor) accumulated into its gradient buffer.
template <typename S>
void backward(Tensor<S>& loss) {
  if (!loss.node()) {
    throw std::logic_error("backward: loss has no recorded forward computation");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  loss.ensure_grad();
  (*loss.grad_ptr())[0] += S(1);

  std::vector<std::shared_ptr<detail::Node<S>>> order;
  detail::topo_visit(loss.node(), order);
  // `order` is post-order (parents before children); run children first.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    (*it)->backward();
  }
}

}  // namespace normlab
