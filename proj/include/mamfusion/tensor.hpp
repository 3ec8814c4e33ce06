// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mamfusion {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the dynamically recorded computation. Leaves have no
// backward function; interior nodes drop their edges once backward has run.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array of doubles with optional participation in the
/// gradient tape.
///
/// Copies are shallow: two Tensor handles may refer to the same storage.
/// Use clone() for an independent copy. Most operations treat the tensor
/// as a matrix (rows = shape[0], cols = product of the remaining dims);
/// vectors are carried as 1xN rows.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Mutating a tensor that already feeds a recorded computation invalidates
  // that computation; only do this on leaves between steps.
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool has_grad() const;
  void zero_grad();

  double item() const;
  double at(std::size_t r, std::size_t c) const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  // Leaf copy of the values, disconnected from any tape.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on the current thread for its lifetime.
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

// When on, every op verifies its output is finite and throws NumericError.
void set_debug_checks(bool on);
bool debug_checks();

struct BackwardStats {
  std::size_t nodes_visited = 0;
  std::size_t leaves_reached = 0;
  // Set when the loss does not depend on any grad-requiring leaf.
  bool empty_gradient() const { return leaves_reached == 0; }
};

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate; the interior
/// of the recorded graph is released afterwards.
BackwardStats backward(const Tensor& loss);

namespace detail {

// Builds an op output. Records a tape edge only when grad mode is on and at
// least one input requires grad.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward_fn);

}  // namespace detail

}  // namespace mamfusion
