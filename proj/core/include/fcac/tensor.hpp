#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op returns a new Tensor whose node remembers its parents and a
// closure that pushes the node's gradient back into them. backward() walks
// the graph in reverse topological order. Leaf gradients accumulate across
// calls; callers zero them explicitly between optimizer steps.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fcac/real.hpp"

namespace fcac {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  /// Row-major 2-D literal, e.g. Tensor::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(const std::vector<std::vector<Real>>& rows, bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  /// Writable view of a leaf's values. Throws StateError on non-leaf tensors.
  std::span<Real> mutable_data();

  Real item() const;
  Real at(std::size_t i) const { return data()[i]; }
  Real at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  /// Copy of the values as a fresh leaf that does not require grad.
  Tensor detach() const;

  /// Reverse pass from a scalar tensor.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor make_result(Shape shape, std::vector<Real> data,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Graph recording is on by default; NoGradGuard disables it for the current thread.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise arithmetic; operands must share a shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
/// x[..., D] + bias[D] broadcast over leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& x);
/// Row-wise softmax over the last axis of a 2-D tensor, max-shifted.
Tensor softmax_rows(const Tensor& m);

struct LayerNormOptions {
  Real epsilon = Real(1e-5);
};
/// Normalizes every vector along the last axis to zero mean and unit
/// (population) variance. No learnable affine.
Tensor layer_norm(const Tensor& x, LayerNormOptions options = {});

/// Scales each row of a 2-D tensor to unit Euclidean norm; zero rows stay zero.
Tensor l2_normalize_rows(const Tensor& m);
/// Pairwise cosine similarity between rows: [r x D] and [c x D] -> [r x c].
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t count);
/// Mean of each consecutive block of `group` rows: [n x D] -> [n/group x D].
Tensor group_mean_rows(const Tensor& m, std::size_t group);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t pad = 0;
};
/// x: [C_in x H x W], kernel: [C_out x C_in x kh x kw]. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernel, Conv2dOptions options = {});
/// Padding that keeps H and W unchanged at stride 1 for an odd kernel.
Conv2dOptions same_padding(std::size_t kernel_size, std::size_t stride = 1);
/// x[C x H x W] + bias[C].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// Non-overlapping window x window average pooling; trailing partial windows are dropped.
Tensor avg_pool2d(const Tensor& x, std::size_t window);
/// [C x H x W] -> [C]
Tensor global_avg_pool(const Tensor& x);

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace fcac
