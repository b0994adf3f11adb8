// Dense 4-axis tensors with define-by-run reverse-mode differentiation.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bvap {

/// (batch, channels, height, width); every extent is at least 1.
struct Shape {
  std::int64_t n = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n * c * h * w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h * w); }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[i]->grad.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Shared handle to a node of the computation graph. Copies alias the same
/// storage; use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const double> values() const;
  /// Mutable access, only for leaves (parameters, inputs under test).
  std::span<double> mutable_values();
  double at(std::int64_t n, std::int64_t c, std::int64_t h,
            std::int64_t w) const;
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  /// Populates grads of every requires_grad tensor reachable from this
  /// (1,1,1,1) tensor. Gradients accumulate across calls.
  void backward() const;

  /// New leaf holding a copy of the values, outside any graph.
  Tensor clone(bool requires_grad = false) const;
  Tensor detach() const { return clone(false); }

  const char* op_name() const;

  /// Leaves reachable from this tensor that require grad, in discovery order.
  std::vector<Tensor> reachable_parameters() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Re-enables graph recording inside a NoGradGuard scope.
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

using BackwardFn = std::function<void(Node&)>;

/// Wraps an op result. The graph edge is recorded only when grad mode is on
/// and some input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, BackwardFn backward);

/// Accumulation target for input i, or nullptr when it needs no gradient.
double* grad_target(Node& self, std::size_t i);

void check_shape_positive(const Shape& s);

}  // namespace detail

}  // namespace bvap
