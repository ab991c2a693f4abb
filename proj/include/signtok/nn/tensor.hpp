#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace signtok::nn {

// All compute runs in 64-bit so that finite-difference checks have headroom.
using Scalar = double;

namespace memory {

// Live/peak byte counters for tensor storage. Counters are process-global and
// only meaningful on a single compute thread.
struct Stats {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
};

Stats stats();
// Sets the peak to the current live size, so a following region can be measured.
void reset_peak();
void on_allocate(std::size_t bytes);
void on_release(std::size_t bytes);

template <class T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <class U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    on_allocate(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    on_release(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <class U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace memory

using Storage = std::vector<Scalar, memory::TrackingAllocator<Scalar>>;

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Storage value;
  Storage grad;  // empty until needed
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Gradient recording is on by default; a NoGradGuard disables it for its scope.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major matrix with an optional reverse-mode tape entry. Copies share
// the same node; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, Scalar value, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::span<const Scalar> values,
                     bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::initializer_list<Scalar> values,
                     bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::string shape_string() const;

  std::span<const Scalar> values() const { return node_->value; }
  std::span<Scalar> mutable_values() { return node_->value; }
  Scalar at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  Scalar& at(std::size_t r, std::size_t c) { return node_->value[r * node_->cols + c]; }
  Scalar item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  // Gradient buffer; empty span if none has been accumulated.
  std::span<const Scalar> grad() const { return node_->grad; }
  std::span<Scalar> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad();

  // Runs reverse-mode accumulation from this scalar (1x1) tensor.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  // Copies values from another tensor of the same shape into this node.
  void assign(const Tensor& other);

  std::vector<Scalar> row(std::size_t r) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Builds a result tensor for a custom op. The backward callback receives the
// result node (whose grad is populated) and must accumulate into parents that
// require grad. When recording is disabled or no parent needs gradients the
// callback is dropped.
Tensor make_result(std::size_t rows, std::size_t cols, Storage value,
                   std::vector<Tensor> parents, std::function<void(detail::Node&)> backward);

}  // namespace signtok::nn
