#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tempofuse::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;  // set once backward has run through this node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Handle to a node of the autodiff graph. Copies share storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  /// Empty when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }
  T item() const;

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Runs reverse-mode accumulation from a scalar. Leaf tensors keep their
/// gradients; the recorded graph is released afterwards, so a second call on
/// the same loss throws.
template <typename T>
void backward(Tensor<T>& loss);

/// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Collects a hash of every data-dependent branch (ReLU signs, max-pool
/// winners) taken by ops on this thread while alive. The finite-difference
/// harness uses it to discard probes that cross a kink.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t signature() const noexcept { return hash_; }

 private:
  friend void record_branch(std::uint64_t);
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  BranchRecorder* previous_;
};

void record_branch(std::uint64_t value);
bool branch_recording();

}  // namespace tempofuse::nn
