#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "zsseg/real.hpp"

ZSSEG_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node;

// Backward rule: given the node itself and dL/d(output), accumulate into the
// gradient buffers of its inputs. A buffer is empty when the corresponding
// input does not require a gradient.
using BackwardFn = std::function<void(const Node& self, std::span<const Real> grad_out,
                                      std::vector<std::vector<Real>>& grad_in)>;

struct Node {
  Shape shape;
  std::vector<Real> data;
  bool requires_grad = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
};

std::uint64_t next_node_id();

}  // namespace detail

/// Dense row-major tensor of rank 0..2 taking part in reverse-mode
/// differentiation. Copies share the underlying node; values are immutable
/// once created except through `storage_for_update`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  static Tensor randn(Shape shape, Real stddev, std::mt19937_64& rng, bool requires_grad = false);
  static Tensor eye(std::size_t n, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Real> data() const;
  Real item() const;
  Real at(std::size_t i) const;
  Real at(std::size_t r, std::size_t c) const;
  std::vector<Real> to_vector() const;

  bool requires_grad() const;
  std::uint64_t id() const;
  const char* op_name() const;

  /// In-place mutation path reserved for optimizer updates and parameter
  /// loading. Never call on a tensor that is part of a live graph.
  std::span<Real> storage_for_update();

  /// Fresh leaf holding a copy of the values, outside any graph.
  Tensor detach(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Gradients of a scalar loss with respect to every reachable leaf that
/// requires a gradient, keyed by node id.
class Gradients {
 public:
  bool contains(const Tensor& leaf) const;
  std::span<const Real> of(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

  void set(std::uint64_t id, std::vector<Real> grad) { grads_[id] = std::move(grad); }

 private:
  std::unordered_map<std::uint64_t, std::vector<Real>> grads_;
};

/// Topologically ordered record of the operations reachable from a root.
class GradientTape {
 public:
  static GradientTape record(const Tensor& root);

  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return order_; }
  std::vector<Tensor> leaves() const;
  Gradients backward() const;

 private:
  Tensor root_;
  std::vector<std::shared_ptr<detail::Node>> order_;
};

/// Reverse-mode sweep from a scalar loss.
Gradients backward(const Tensor& loss);

ZSSEG_NAMESPACE_END
