#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace multipath {

namespace detail {
struct Node;
}

// Dense n-dimensional tensor participating in reverse-mode differentiation.
// Copies are shallow: two Tensor handles may refer to the same graph node.
// All arithmetic runs in 64-bit; checkpoints store parameters as 32-bit
// floats (see checkpoint.hpp).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  std::int64_t numel() const;
  bool requires_grad() const;

  std::vector<double>& data();
  const std::vector<double>& data() const;

  // Gradient buffer, allocated zero-filled on first access.
  std::vector<double>& grad();
  bool has_grad() const;
  void zero_grad();

  // Value of a single-element tensor.
  double item() const;

  detail::Node* node() const { return node_.get(); }

 private:
  friend Tensor custom_op(std::vector<int>, std::vector<double>,
                          std::vector<Tensor>,
                          std::function<void(const std::vector<double>&)>);
  friend void backward(const Tensor&);
  std::shared_ptr<detail::Node> node_;
};

// Extension point: wraps a precomputed forward value as a graph node. The
// backward callback receives the node's output gradient and is responsible
// for accumulating (+=) into the grads of whichever inputs require them.
Tensor custom_op(std::vector<int> shape, std::vector<double> value,
                 std::vector<Tensor> inputs,
                 std::function<void(const std::vector<double>&)> backward_fn);

// Populates d(loss)/d(leaf) for every parameter leaf reachable from `loss`.
// Gradients on leaves accumulate across calls; zero them explicitly between
// optimizer steps. Throws std::invalid_argument for a non-scalar loss.
void backward(const Tensor& loss);

// --- elementary ops ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
// Multiply every element by a single-element parameter tensor.
Tensor scale_by(const Tensor& x, const Tensor& s);
// Elementwise sum of same-shape tensors.
Tensor add_many(const std::vector<Tensor>& xs);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor relu(const Tensor& x);

// x: [N,C,H,W], weight: [K,C,kh,kw], bias: [K].
// Output: [N,K,H',W'] with H' = floor((H + 2*pad - kh)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int pad);

// 2x2 max pooling with stride 2 over [N,C,H,W]; odd trailing rows/cols drop.
Tensor max_pool2d(const Tensor& x);

// x: [D] or [N,D], weight: [M,D], bias: [M].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Softmax over the last axis.
Tensor softmax(const Tensor& x);

// gamma * x / max(||x||_2, eps) with the norm taken over all elements.
Tensor l2_normalize_scaled(const Tensor& x, const Tensor& gamma, double eps);

// -log(max(p[k], 1e-12)) for a probability vector p.
Tensor nll(const Tensor& p, int k);

// Sum of per-component Huber terms of (pred - target), delta-scaled:
// 0.5*r^2/delta for |r| < delta, |r| - 0.5*delta otherwise.
Tensor smooth_l1(const Tensor& pred, const std::vector<double>& target,
                 double delta);

}  // namespace multipath
