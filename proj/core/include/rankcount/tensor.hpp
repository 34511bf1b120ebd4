#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rankcount::ag {

/// Dimension list. A rank-0 shape denotes a scalar (one element).
using Shape = std::vector<int>;

std::int64_t element_count(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until populated by backward()
  bool requires_grad = false;
  std::string name;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads. Null for
  // leaves.
  std::function<void(Node&)> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
};

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> values,
                                bool requires_grad);
void ensure_grad(Node& node);

}  // namespace detail

/// Handle to a node in the differentiation graph. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int axis) const;
  std::int64_t size() const;
  std::vector<double>& values();
  const std::vector<double>& values() const;
  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const;
  bool grad_populated() const;
  /// Gradient buffer; throws if backward() has not populated it.
  const std::vector<double>& grad() const;
  /// Discards the gradient (back to the unpopulated state).
  void zero_grad();

  const std::string& name() const;
  Tensor& set_name(std::string name);
  std::uint64_t id() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by the op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// --- Forward ops (each records its backward rule) -------------------------

/// input [N,C,H,W] * kernel [F,C,kh,kw] -> [N,F,H',W'] with
/// H' = (H + 2*pad - kh)/stride + 1. The division must be exact; inexact
/// geometry is rejected up front.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);
/// input [N,F,H,W] + bias [F] -> [N,F,H,W]
Tensor add_channel_bias(const Tensor& input, const Tensor& bias);
/// [N,F,H,W] -> [N,F], mean over the spatial positions.
Tensor avg_pool_global(const Tensor& input);
Tensor relu(const Tensor& input);
/// log(1 + exp(x)), overflow-safe. Strictly positive output.
Tensor softplus(const Tensor& input);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor square(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double c);
/// -> rank-0 scalar.
Tensor sum_all(const Tensor& a);
/// Rows [begin, end) along the leading axis; backward scatters into the
/// source range.
Tensor slice_rows(const Tensor& a, int begin, int end);

/// Populates gradients of every tensor reachable from `loss` that requires
/// grad. `loss` must be a one-element tensor. Repeated calls without
/// zero_grad()/sgd_step() accumulate into the existing gradients.
void backward(const Tensor& loss);

/// p <- p - lr * (grad + weight_decay * p) for every parameter, then clears
/// the gradients. A parameter whose gradient was never populated is an error
/// naming that parameter.
void sgd_step(std::span<Tensor> params, double lr, double weight_decay);

/// When enabled (default), every op output and every backward pass is checked
/// for NaN/Inf and throws on violation.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* what);

}  // namespace rankcount::ag
