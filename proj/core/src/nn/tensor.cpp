#include "tempofuse/nn/tensor.hpp"

#include <unordered_set>

#include "tempofuse/error.hpp"

namespace tempofuse::nn {

namespace {
thread_local bool t_grad_enabled = true;
thread_local BranchRecorder* t_branch_recorder = nullptr;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(nn::numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  require(values.size() == nn::numel(shape), ErrorCode::shape,
          "tensor data length " + std::to_string(values.size()) + " does not match shape " +
              shape_string(shape));
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, ErrorCode::shape, "item() on a tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
void backward(Tensor<T>& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorCode::shape,
          "backward needs a scalar loss");
  Node<T>* root = loss.node();
  require(!root->consumed, ErrorCode::state,
          "backward called twice without a new forward pass");
  require(root->requires_grad, ErrorCode::state, "loss does not depend on any parameter");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !p->is_leaf && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  std::fill(root->grad.begin(), root->grad.end(), T(0));
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  for (Node<T>* node : order) {
    node->backward_fn = nullptr;
    node->parents.clear();
    node->consumed = true;
    if (node != root) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

BranchRecorder::BranchRecorder() : previous_(t_branch_recorder) { t_branch_recorder = this; }
BranchRecorder::~BranchRecorder() { t_branch_recorder = previous_; }

void record_branch(std::uint64_t value) {
  if (auto* r = t_branch_recorder) {
    // FNV-1a over the 8 bytes
    for (int i = 0; i < 8; ++i) {
      r->hash_ ^= (value >> (8 * i)) & 0xFF;
      r->hash_ *= 0x100000001b3ULL;
    }
  }
}

bool branch_recording() { return t_branch_recorder != nullptr; }

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(Tensor<float>&);
template void backward<double>(Tensor<double>&);

}  // namespace tempofuse::nn
