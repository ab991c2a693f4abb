#include "signtok/nn/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "signtok/error.hpp"

namespace signtok::nn {

namespace memory {
namespace {
Stats g_stats;
}

Stats stats() { return g_stats; }
void reset_peak() { g_stats.peak_bytes = g_stats.live_bytes; }
void on_allocate(std::size_t bytes) {
  g_stats.live_bytes += bytes;
  g_stats.peak_bytes = std::max(g_stats.peak_bytes, g_stats.live_bytes);
}
void on_release(std::size_t bytes) { g_stats.live_bytes -= bytes; }
}  // namespace memory

namespace {
thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(std::size_t rows, std::size_t cols, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->rows = rows;
  node->cols = cols;
  node->value.assign(rows * cols, 0.0);
  node->requires_grad = requires_grad;
  return node;
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return Tensor(new_node(rows, cols, requires_grad));
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, Scalar value, bool requires_grad) {
  auto node = new_node(rows, cols, requires_grad);
  std::fill(node->value.begin(), node->value.end(), value);
  return Tensor(std::move(node));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::span<const Scalar> values,
                    bool requires_grad) {
  if (values.size() != rows * cols) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  auto node = new_node(rows, cols, requires_grad);
  std::copy(values.begin(), values.end(), node->value.begin());
  return Tensor(std::move(node));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::initializer_list<Scalar> values,
                    bool requires_grad) {
  return from(rows, cols, std::span<const Scalar>(values.begin(), values.size()), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return full(1, 1, value, requires_grad);
}

std::string Tensor::shape_string() const {
  if (!node_) return "[undefined]";
  return "[" + std::to_string(node_->rows) + "x" + std::to_string(node_->cols) + "]";
}

Scalar Tensor::item() const {
  if (size() != 1) throw ShapeError("Tensor::item: expected [1x1], got " + shape_string());
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward: expected scalar loss, got " + shape_string());
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* node : order) node->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor Tensor::detach() const {
  auto node = new_node(rows(), cols(), false);
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  auto node = new_node(rows(), cols(), node_->requires_grad);
  node->value = node_->value;
  return Tensor(std::move(node));
}

void Tensor::assign(const Tensor& other) {
  if (other.rows() != rows() || other.cols() != cols()) {
    throw ShapeError("Tensor::assign: " + other.shape_string() + " into " + shape_string());
  }
  std::copy(other.node_->value.begin(), other.node_->value.end(), node_->value.begin());
}

std::vector<Scalar> Tensor::row(std::size_t r) const {
  auto begin = node_->value.begin() + static_cast<std::ptrdiff_t>(r * cols());
  return {begin, begin + static_cast<std::ptrdiff_t>(cols())};
}

Tensor make_result(std::size_t rows, std::size_t cols, Storage value, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace signtok::nn
