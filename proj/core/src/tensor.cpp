#include "zsseg/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_set>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {
std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape.size() > 2) throw DimensionError("tensors are limited to rank 2, got " + shape_string(shape));
  for (auto d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_string(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->id = detail::next_node_id();
  return wrap(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), Real(0), requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, Real stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  std::vector<Real> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Real>(dist(rng));
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::eye(std::size_t n, bool requires_grad) {
  std::vector<Real> values(n * n, Real(0));
  for (std::size_t i = 0; i < n; ++i) values[i * n + i] = Real(1);
  return from({n, n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape()));
  return shape()[1];
}

std::span<const Real> Tensor::data() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->data;
}

Real Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->data[0];
}

Real Tensor::at(std::size_t i) const {
  if (i >= numel()) throw DimensionError("index out of range");
  return node_->data[i];
}

Real Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw DimensionError("index out of range");
  return node_->data[r * cols() + c];
}

std::vector<Real> Tensor::to_vector() const { return {data().begin(), data().end()}; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }
const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

std::span<Real> Tensor::storage_for_update() {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->data;
}

Tensor Tensor::detach(bool requires_grad) const { return from(shape(), to_vector(), requires_grad); }

bool Gradients::contains(const Tensor& leaf) const { return grads_.count(leaf.id()) != 0; }

std::span<const Real> Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw LookupError("no gradient recorded for tensor " + std::to_string(leaf.id()));
  return it->second;
}

GradientTape GradientTape::record(const Tensor& root) {
  GradientTape tape;
  tape.root_ = root;
  if (!root.defined()) throw ContractError("cannot record an undefined tensor");

  // Iterative post-order DFS: inputs always precede their consumers.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

std::vector<Tensor> GradientTape::leaves() const {
  std::vector<Tensor> out;
  for (const auto& node : order_) {
    if (node->is_leaf() && node->requires_grad) out.push_back(Tensor::wrap(node));
  }
  return out;
}

Gradients GradientTape::backward() const {
  const auto& root = root_.node();
  if (shape_numel(root->shape) != 1 || root->shape.size() > 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_string(root->shape));
  }
  Gradients result;
  if (!root->requires_grad) return result;

  std::unordered_map<const detail::Node*, std::vector<Real>> grads;
  grads[root.get()] = {Real(1)};
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const detail::Node* node = it->get();
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (node->is_leaf()) {
      result.set(node->id, std::move(found->second));
      continue;
    }
    std::vector<Real> grad_out = std::move(found->second);
    grads.erase(found);
    std::vector<std::vector<Real>> grad_in(node->inputs.size());
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (node->inputs[i]->requires_grad) grad_in[i].assign(node->inputs[i]->data.size(), Real(0));
    }
    node->backward(*node, grad_out, grad_in);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (grad_in[i].empty()) continue;
      const detail::Node* input = node->inputs[i].get();
      auto& acc = grads[input];
      if (acc.empty()) {
        acc = std::move(grad_in[i]);
      } else {
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += grad_in[i][j];
      }
    }
  }
  return result;
}

Gradients backward(const Tensor& loss) { return GradientTape::record(loss).backward(); }

ZSSEG_NAMESPACE_END
