#include "fcac/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "fcac/error.hpp"

namespace fcac {

namespace {

thread_local bool g_grad_enabled = true;

using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(a.shape()));
  }
}

// Grad buffer of a parent that takes part in differentiation, or nullptr.
Real* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Construction and access

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor data size " + std::to_string(values.size()) +
                     " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<Real>>& rows, bool requires_grad) {
  if (rows.empty() || rows.front().empty()) throw ShapeError("matrix literal must be non-empty");
  const auto cols = rows.front().size();
  std::vector<Real> values;
  values.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return from({rows.size(), cols}, std::move(values), requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
  std::vector<Real> values(n * n, Real(0));
  for (std::size_t i = 0; i < n; ++i) values[i * n + i] = Real(1);
  return from({n, n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw StateError("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range for " + shape_to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const Real> Tensor::data() const {
  if (!node_) throw StateError("undefined tensor");
  return node_->data;
}

std::span<Real> Tensor::mutable_data() {
  if (!node_) throw StateError("undefined tensor");
  if (node_->backward_fn) throw StateError("cannot mutate a non-leaf tensor");
  return node_->data;
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

Real Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw ShapeError("at(r, c) requires a matrix");
  return node_->data[r * node_->shape[1] + c];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw StateError("undefined tensor");
  if (node_->backward_fn) throw StateError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::span<const Real> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor has no gradient");
  return node_->grad;
}

std::span<Real> Tensor::mutable_grad() {
  if (!node_) throw StateError("undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

bool Tensor::is_leaf() const { return node_ && !node_->backward_fn; }

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::make_result(Shape shape, std::vector<Real> data, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool track =
      g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                    [](const Tensor& p) { return p.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS yields a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward_fn) {
      n->grad.assign(n->data.size(), Real(0));
    } else {
      n->ensure_grad();
    }
  }
  node_->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Real* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (Real* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    if (Real* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (Real* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto d = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != d) {
    throw ShapeError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                     shape_to_string(x.shape()));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % d];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [d](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (Real* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % d] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  Real s = 0;
  for (auto v : a.data()) s += v;
  return Tensor::make_result({1}, {s}, {a}, [](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      const auto n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), Real(1) / Real(a.numel())); }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  std::vector<Real> out(m * n, Real(0));
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real v = x[i * k + p];
      const Real* row = &y[p * n];
      Real* o = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += v * row[j];
    }
  }
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    const auto& go = self.grad;
    if (Real* ga = parent_grad(self, 0)) {
      // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          Real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * y[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (Real* gb = parent_grad(self, 1)) {
      // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const Real v = x[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += v * go[i * n + j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<Real> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_to_string(a.shape()) + " -> " + shape_to_string(shape));
  }
  std::vector<Real> out(a.data().begin(), a.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > Real(0) ? v : Real(0);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      const auto& in = self.parents[0]->data;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (in[i] > Real(0)) g[i] += self.grad[i];
      }
    }
  });
}

Tensor softmax_rows(const Tensor& m) {
  require_rank(m, 2, "softmax_rows");
  const auto r = m.dim(0), c = m.dim(1);
  std::vector<Real> out(r * c);
  auto x = m.data();
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = &x[i * c];
    const Real mx = *std::max_element(row, row + c);
    Real total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      total += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  return Tensor::make_result({r, c}, std::move(out), {m}, [r, c](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      const auto& out = self.data;
      for (std::size_t i = 0; i < r; ++i) {
        Real dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * out[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          g[i * c + j] += out[i * c + j] * (self.grad[i * c + j] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, LayerNormOptions options) {
  const auto d = x.shape().back();
  if (d < 2) throw InvalidInput("layer_norm: normalized dimension must be >= 2");
  const auto rows = x.numel() / d;
  auto in = x.data();
  std::vector<Real> out(x.numel());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* v = &in[r * d];
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += v[j];
    mu /= Real(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (v[j] - mu) * (v[j] - mu);
    var /= Real(d);
    inv_std[r] = Real(1) / std::sqrt(var + options.epsilon);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (v[j] - mu) * inv_std[r];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [d, rows, inv_std](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      const auto& out = self.data;
      // dx = inv_std * (dy - mean(dy) - y * mean(dy * y))
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* gy = &self.grad[r * d];
        const Real* y = &out[r * d];
        Real mean_g = 0, mean_gy = 0;
        for (std::size_t j = 0; j < d; ++j) {
          mean_g += gy[j];
          mean_gy += gy[j] * y[j];
        }
        mean_g /= Real(d);
        mean_gy /= Real(d);
        for (std::size_t j = 0; j < d; ++j) {
          g[r * d + j] += inv_std[r] * (gy[j] - mean_g - y[j] * mean_gy);
        }
      }
    }
  });
}

Tensor l2_normalize_rows(const Tensor& m) {
  require_rank(m, 2, "l2_normalize_rows");
  const auto r = m.dim(0), c = m.dim(1);
  auto x = m.data();
  std::vector<Real> out(r * c, Real(0));
  std::vector<Real> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    Real ss = 0;
    for (std::size_t j = 0; j < c; ++j) ss += x[i * c + j] * x[i * c + j];
    norms[i] = std::sqrt(ss);
    if (norms[i] > Real(0)) {
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
    }
  }
  return Tensor::make_result({r, c}, std::move(out), {m}, [r, c, norms](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      const auto& out = self.data;
      // dx = (dy - y * <dy, y>) / |x|
      for (std::size_t i = 0; i < r; ++i) {
        if (norms[i] == Real(0)) continue;
        Real dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * out[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          g[i * c + j] += (self.grad[i * c + j] - out[i * c + j] * dot) / norms[i];
        }
      }
    }
  });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "cosine_similarity");
  require_rank(b, 2, "cosine_similarity");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("cosine_similarity: row widths differ " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
}

// ---------------------------------------------------------------------------
// Row manipulation

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto c = parts.front().dim(1);
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != c) throw ShapeError("concat_rows: column counts differ");
    offsets.push_back(rows * c);
    rows += p.dim(0);
  }
  std::vector<Real> out;
  out.reserve(rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor::make_result({rows, c}, std::move(out), parts, [offsets](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (Real* g = parent_grad(self, p)) {
        const auto n = self.parents[p]->data.size();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[p] + i];
      }
    }
  });
}

Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t count) {
  require_rank(m, 2, "slice_rows");
  if (count == 0 || begin + count > m.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + shape_to_string(m.shape()));
  }
  const auto c = m.dim(1);
  auto x = m.data();
  std::vector<Real> out(x.begin() + begin * c, x.begin() + (begin + count) * c);
  const auto offset = begin * c;
  return Tensor::make_result({count, c}, std::move(out), {m}, [offset](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
    }
  });
}

Tensor group_mean_rows(const Tensor& m, std::size_t group) {
  require_rank(m, 2, "group_mean_rows");
  if (group == 0 || m.dim(0) % group != 0) {
    throw ShapeError("group_mean_rows: " + std::to_string(m.dim(0)) +
                     " rows not divisible into groups of " + std::to_string(group));
  }
  const auto groups = m.dim(0) / group, c = m.dim(1);
  auto x = m.data();
  std::vector<Real> out(groups * c, Real(0));
  const Real w = Real(1) / Real(group);
  for (std::size_t r = 0; r < m.dim(0); ++r)
    for (std::size_t j = 0; j < c; ++j) out[(r / group) * c + j] += w * x[r * c + j];
  return Tensor::make_result({groups, c}, std::move(out), {m}, [group, c, w](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      const auto rows = self.parents[0]->shape[0];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) g[r * c + j] += w * self.grad[(r / group) * c + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

Conv2dOptions same_padding(std::size_t kernel_size, std::size_t stride) {
  if (kernel_size % 2 == 0) throw InvalidInput("same_padding needs an odd kernel size");
  return Conv2dOptions{stride, kernel_size / 2};
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, Conv2dOptions opt) {
  require_rank(x, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (opt.stride == 0) throw InvalidInput("conv2d: stride must be positive");
  const auto ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != ci) {
    throw ShapeError("conv2d: kernel " + shape_to_string(kernel.shape()) + " vs input " +
                     shape_to_string(x.shape()));
  }
  if (h + 2 * opt.pad < kh || w + 2 * opt.pad < kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const auto s = opt.stride;
  const auto p = static_cast<std::ptrdiff_t>(opt.pad);
  const auto ho = (h + 2 * opt.pad - kh) / s + 1;
  const auto wo = (w + 2 * opt.pad - kw) / s + 1;

  // im2col: cols[r][q] is the input tap of kernel element r (c, ky, kx) at output position q.
  const std::size_t taps = ci * kh * kw;
  const std::size_t positions = ho * wo;
  auto cols = std::make_shared<std::vector<Real>>(taps * positions, Real(0));
  {
    const Real* in = x.data().data();
    Real* dst = cols->data();
    for (std::size_t c = 0; c < ci; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx, dst += positions) {
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * s + ky) - p;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const Real* row = in + (c * h + static_cast<std::size_t>(iy)) * w;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * s + kx) - p;
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[oy * wo + ox] = row[ix];
            }
          }
        }
      }
    }
  }

  // out[o][q] = sum_r kernel[o][r] * cols[r][q]
  std::vector<Real> out(co * positions, Real(0));
  {
    const Real* k = kernel.data().data();
    const Real* cl = cols->data();
    for (std::size_t o = 0; o < co; ++o) {
      Real* dst = out.data() + o * positions;
      for (std::size_t r = 0; r < taps; ++r) {
        const Real kv = k[o * taps + r];
        const Real* src = cl + r * positions;
        for (std::size_t q = 0; q < positions; ++q) dst[q] += kv * src[q];
      }
    }
  }
  if (!g_grad_enabled || !(x.requires_grad() || kernel.requires_grad())) cols.reset();

  return Tensor::make_result(
      {co, ho, wo}, std::move(out), {x, kernel},
      [cols, ci, h, w, kh, kw, ho, wo, s, p, taps, positions, co](Node& self) {
        const Real* k = self.parents[1]->data.data();
        const Real* go = self.grad.data();
        if (Real* gk = parent_grad(self, 1)) {
          const Real* cl = cols->data();
          for (std::size_t o = 0; o < co; ++o) {
            const Real* g = go + o * positions;
            for (std::size_t r = 0; r < taps; ++r) {
              const Real* src = cl + r * positions;
              Real acc = 0;
              for (std::size_t q = 0; q < positions; ++q) acc += src[q] * g[q];
              gk[o * taps + r] += acc;
            }
          }
        }
        if (Real* gx = parent_grad(self, 0)) {
          // gcols = kernel^T * grad, then scatter back through the im2col map.
          std::vector<Real> gcols(taps * positions, Real(0));
          for (std::size_t o = 0; o < co; ++o) {
            const Real* g = go + o * positions;
            for (std::size_t r = 0; r < taps; ++r) {
              const Real kv = k[o * taps + r];
              Real* dst = gcols.data() + r * positions;
              for (std::size_t q = 0; q < positions; ++q) dst[q] += kv * g[q];
            }
          }
          const Real* src = gcols.data();
          for (std::size_t c = 0; c < ci; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx, src += positions) {
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const auto iy = static_cast<std::ptrdiff_t>(oy * s + ky) - p;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  Real* row = gx + (c * h + static_cast<std::size_t>(iy)) * w;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const auto ix = static_cast<std::ptrdiff_t>(ox * s + kx) - p;
                    if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) row[ix] += src[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "add_channel_bias");
  const auto c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (bias.rank() != 1 || bias.dim(0) != c) throw ShapeError("add_channel_bias: bias size");
  std::vector<Real> out(x.data().begin(), x.data().end());
  auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i / plane];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [plane](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (Real* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i / plane] += self.grad[i];
    }
  });
}

Tensor avg_pool2d(const Tensor& x, std::size_t window) {
  require_rank(x, 3, "avg_pool2d");
  if (window == 0 || window > x.dim(1) || window > x.dim(2)) {
    throw InvalidInput("avg_pool2d: window must be in [1, min(H, W)]");
  }
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ho = h / window, wo = w / window;
  const Real inv = Real(1) / Real(window * window);
  auto in = x.data();
  std::vector<Real> out(c * ho * wo, Real(0));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        Real acc = 0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx)
            acc += in[(ch * h + oy * window + dy) * w + ox * window + dx];
        out[(ch * ho + oy) * wo + ox] = acc * inv;
      }
  return Tensor::make_result(
      {c, ho, wo}, std::move(out), {x}, [c, h, w, ho, wo, window, inv](Node& self) {
        if (Real* g = parent_grad(self, 0)) {
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oy = 0; oy < ho; ++oy)
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const Real go = self.grad[(ch * ho + oy) * wo + ox] * inv;
                for (std::size_t dy = 0; dy < window; ++dy)
                  for (std::size_t dx = 0; dx < window; ++dx)
                    g[(ch * h + oy * window + dy) * w + ox * window + dx] += go;
              }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 3, "global_avg_pool");
  const auto c = x.dim(0), plane = x.dim(1) * x.dim(2);
  const Real inv = Real(1) / Real(plane);
  auto in = x.data();
  std::vector<Real> out(c, Real(0));
  for (std::size_t i = 0; i < in.size(); ++i) out[i / plane] += in[i] * inv;
  return Tensor::make_result({c}, std::move(out), {x}, [plane, inv](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      const auto n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i / plane] * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Loss

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "cross_entropy");
  const auto b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) throw ShapeError("cross_entropy: label count != batch size");
  for (auto l : labels) {
    if (l >= c) throw InvalidInput("cross_entropy: label " + std::to_string(l) + " out of range");
  }
  auto x = logits.data();
  std::vector<Real> probs(b * c);
  Real loss = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const Real* row = &x[i * c];
    const Real mx = *std::max_element(row, row + c);
    Real total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      total += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= total;
    loss += -(row[labels[i]] - mx - std::log(total));
  }
  loss /= Real(b);
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return Tensor::make_result({1}, {loss}, {logits}, [b, c, probs, targets](Node& self) {
    if (Real* g = parent_grad(self, 0)) {
      const Real w = self.grad[0] / Real(b);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const Real onehot = j == targets[i] ? Real(1) : Real(0);
          g[i * c + j] += w * (probs[i * c + j] - onehot);
        }
      }
    }
  });
}

}  // namespace fcac
