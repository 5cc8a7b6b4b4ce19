#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "elx/linalg.hpp"
#include "elx/rng.hpp"

namespace elx::ad {

/// When set, every op scans its output and throws on NaN/Inf.
inline bool& check_finite() {
  static bool flag = false;
  return flag;
}

struct Node {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;
  std::uint64_t visit_epoch = 0;

  std::size_t numel() const { return val.size(); }
  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
};

inline std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor shape with non-positive dim");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

/// Value + tape handle. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor from(std::vector<double> v, std::vector<int> shape, bool requires_grad = false) {
    if (shape_numel(shape) != v.size()) throw std::invalid_argument("Tensor::from: shape/value mismatch");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::vector<double>(n, 0.0), std::move(shape), requires_grad);
  }

  static Tensor scalar(double v) { return from({v}, {1}); }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return n_->numel(); }
  std::vector<double>& val() { return n_->val; }
  const std::vector<double>& val() const { return n_->val; }
  std::vector<double>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  bool requires_grad() const { return n_->requires_grad; }
  std::shared_ptr<Node> node() const { return n_; }

  double item() const {
    if (numel() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
    return n_->val[0];
  }

  /// Reverse pass from a scalar output; accumulates into grad slots of every
  /// reachable tensor with requires_grad set. Distinct tapes may run on
  /// distinct threads, so the visit epoch is thread-local.
  void backward() const {
    if (numel() != 1) throw std::invalid_argument("backward: output must be scalar");
    thread_local std::uint64_t epoch = 0;
    ++epoch;
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({n_.get(), 0});
    n_->visit_epoch = epoch;
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* p = node->parents[idx].get();
        ++idx;
        if (p->visit_epoch != epoch) {
          p->visit_epoch = epoch;
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (Node* n : order) n->ensure_grad();
    n_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backprop) (*it)->backprop();
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline std::shared_ptr<Node> make_node(std::vector<int> shape, std::vector<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val.resize(shape_numel(n->shape));
  n->parents = std::move(parents);
  n->requires_grad = false;
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

inline void finite_scan(const Node& n, const char* op) {
  if (!check_finite()) return;
  for (double v : n.val)
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite value after op ") + op);
}

inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "add");
  auto n = detail::make_node(a.shape(), {a.node(), b.node()});
  const auto& av = a.val();
  const auto& bv = b.val();
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = av[i] + bv[i];
  Node* self = n.get();
  n->backprop = [self] {
    for (auto& p : self->parents) {
      p->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) p->grad[i] += self->grad[i];
    }
  };
  detail::finite_scan(*n, "add");
  return Tensor(n);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "sub");
  auto n = detail::make_node(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = a.val()[i] - b.val()[i];
  Node* self = n.get();
  n->backprop = [self] {
    auto& pa = self->parents[0];
    auto& pb = self->parents[1];
    pa->ensure_grad();
    pb->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) {
      pa->grad[i] += self->grad[i];
      pb->grad[i] -= self->grad[i];
    }
  };
  detail::finite_scan(*n, "sub");
  return Tensor(n);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "mul");
  auto n = detail::make_node(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = a.val()[i] * b.val()[i];
  Node* self = n.get();
  n->backprop = [self] {
    auto& pa = self->parents[0];
    auto& pb = self->parents[1];
    pa->ensure_grad();
    pb->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) {
      pa->grad[i] += self->grad[i] * pb->val[i];
      pb->grad[i] += self->grad[i] * pa->val[i];
    }
  };
  detail::finite_scan(*n, "mul");
  return Tensor(n);
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::same_shape(a, b, "div");
  auto n = detail::make_node(a.shape(), {a.node(), b.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = a.val()[i] / b.val()[i];
  Node* self = n.get();
  n->backprop = [self] {
    auto& pa = self->parents[0];
    auto& pb = self->parents[1];
    pa->ensure_grad();
    pb->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) {
      const double inv = 1.0 / pb->val[i];
      pa->grad[i] += self->grad[i] * inv;
      pb->grad[i] -= self->grad[i] * pa->val[i] * inv * inv;
    }
  };
  detail::finite_scan(*n, "div");
  return Tensor(n);
}

inline Tensor scale(const Tensor& a, double c) {
  auto n = detail::make_node(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = c * a.val()[i];
  Node* self = n.get();
  n->backprop = [self, c] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) p->grad[i] += c * self->grad[i];
  };
  detail::finite_scan(*n, "scale");
  return Tensor(n);
}

inline Tensor add_const(const Tensor& a, double c) {
  auto n = detail::make_node(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = a.val()[i] + c;
  Node* self = n.get();
  n->backprop = [self] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) p->grad[i] += self->grad[i];
  };
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a) {
  auto n = detail::make_node(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = a.val()[i] > 0.0 ? a.val()[i] : 0.0;
  Node* self = n.get();
  n->backprop = [self] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i)
      if (p->val[i] > 0.0) p->grad[i] += self->grad[i];
  };
  detail::finite_scan(*n, "relu");
  return Tensor(n);
}

inline Tensor sigmoid(const Tensor& a) {
  auto n = detail::make_node(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) {
    const double x = a.val()[i];
    n->val[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Node* self = n.get();
  n->backprop = [self] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) {
      const double s = self->val[i];
      p->grad[i] += self->grad[i] * s * (1.0 - s);
    }
  };
  detail::finite_scan(*n, "sigmoid");
  return Tensor(n);
}

inline Tensor exp_(const Tensor& a) {
  auto n = detail::make_node(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = std::exp(a.val()[i]);
  Node* self = n.get();
  n->backprop = [self] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) p->grad[i] += self->grad[i] * self->val[i];
  };
  detail::finite_scan(*n, "exp");
  return Tensor(n);
}

inline Tensor log_(const Tensor& a) {
  auto n = detail::make_node(a.shape(), {a.node()});
  for (std::size_t i = 0; i < n->val.size(); ++i) n->val[i] = std::log(a.val()[i]);
  Node* self = n.get();
  n->backprop = [self] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) p->grad[i] += self->grad[i] / p->val[i];
  };
  detail::finite_scan(*n, "log");
  return Tensor(n);
}

/// Row-wise softmax over the last axis of a [N, K] tensor.
inline Tensor softmax(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("softmax: expected [N, K]");
  const int rows = a.dim(0), cols = a.dim(1);
  auto n = detail::make_node(a.shape(), {a.node()});
  for (int r = 0; r < rows; ++r) {
    const double* in = a.val().data() + static_cast<std::size_t>(r) * cols;
    double* out = n->val.data() + static_cast<std::size_t>(r) * cols;
    const double mx = *std::max_element(in, in + cols);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    for (int c = 0; c < cols; ++c) out[c] /= sum;
  }
  Node* self = n.get();
  n->backprop = [self, rows, cols] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const double* s = self->val.data() + static_cast<std::size_t>(r) * cols;
      const double* g = self->grad.data() + static_cast<std::size_t>(r) * cols;
      double* pg = p->grad.data() + static_cast<std::size_t>(r) * cols;
      double dotv = 0.0;
      for (int c = 0; c < cols; ++c) dotv += s[c] * g[c];
      for (int c = 0; c < cols; ++c) pg[c] += s[c] * (g[c] - dotv);
    }
  };
  detail::finite_scan(*n, "softmax");
  return Tensor(n);
}

/// Inverted dropout. Training mode zeroes each element with probability
/// `rate` and scales survivors by 1/(1-rate); eval mode is the identity.
/// rate 0 never consumes randomness.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) {
    auto n = detail::make_node(a.shape(), {a.node()});
    n->val = a.val();
    Node* self = n.get();
    n->backprop = [self] {
      auto& p = self->parents[0];
      p->ensure_grad();
      for (std::size_t i = 0; i < self->grad.size(); ++i) p->grad[i] += self->grad[i];
    };
    return Tensor(n);
  }
  auto n = detail::make_node(a.shape(), {a.node()});
  auto mask = std::make_shared<std::vector<float>>(n->val.size());
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  for (std::size_t i = 0; i < n->val.size(); ++i) {
    const bool on = rng.uniform() < keep;
    (*mask)[i] = on ? static_cast<float>(inv_keep) : 0.0f;
    n->val[i] = a.val()[i] * (*mask)[i];
  }
  Node* self = n.get();
  n->backprop = [self, mask] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (std::size_t i = 0; i < self->grad.size(); ++i) p->grad[i] += self->grad[i] * (*mask)[i];
  };
  detail::finite_scan(*n, "dropout");
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts
// ---------------------------------------------------------------------------

inline Tensor mean_all(const Tensor& a) {
  auto n = detail::make_node({1}, {a.node()});
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.val()) s += v;
  n->val[0] = s * inv;
  Node* self = n.get();
  n->backprop = [self, inv] {
    auto& p = self->parents[0];
    p->ensure_grad();
    const double g = self->grad[0] * inv;
    for (double& pg : p->grad) pg += g;
  };
  detail::finite_scan(*n, "mean");
  return Tensor(n);
}

/// Global average pooling over the time axis: [N, C, L] -> [N, C].
inline Tensor gap1d(const Tensor& a) {
  if (a.shape().size() != 3) throw std::invalid_argument("gap1d: expected [N, C, L]");
  const int N = a.dim(0), C = a.dim(1), L = a.dim(2);
  auto n = detail::make_node({N, C}, {a.node()});
  const double inv = 1.0 / L;
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c) {
      const double* in = a.val().data() + (static_cast<std::size_t>(i) * C + c) * L;
      double s = 0.0;
      for (int l = 0; l < L; ++l) s += in[l];
      n->val[static_cast<std::size_t>(i) * C + c] = s * inv;
    }
  Node* self = n.get();
  n->backprop = [self, N, C, L, inv] {
    auto& p = self->parents[0];
    p->ensure_grad();
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c) {
        const double g = self->grad[static_cast<std::size_t>(i) * C + c] * inv;
        double* pg = p->grad.data() + (static_cast<std::size_t>(i) * C + c) * L;
        for (int l = 0; l < L; ++l) pg[l] += g;
      }
  };
  detail::finite_scan(*n, "gap1d");
  return Tensor(n);
}

/// out[i, j] = col[i, 0] + row[j]; broadcasts a column against a vector.
inline Tensor outer_add(const Tensor& col, const Tensor& row) {
  if (col.shape().size() != 2 || col.dim(1) != 1)
    throw std::invalid_argument("outer_add: first argument must be [N, 1]");
  if (row.shape().size() != 1) throw std::invalid_argument("outer_add: second argument must be [K]");
  const int N = col.dim(0), K = row.dim(0);
  auto n = detail::make_node({N, K}, {col.node(), row.node()});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < K; ++j)
      n->val[static_cast<std::size_t>(i) * K + j] = col.val()[static_cast<std::size_t>(i)] + row.val()[static_cast<std::size_t>(j)];
  Node* self = n.get();
  n->backprop = [self, N, K] {
    auto& pc = self->parents[0];
    auto& pr = self->parents[1];
    pc->ensure_grad();
    pr->ensure_grad();
    for (int i = 0; i < N; ++i) {
      const double* g = self->grad.data() + static_cast<std::size_t>(i) * K;
      double s = 0.0;
      for (int j = 0; j < K; ++j) {
        s += g[j];
        pr->grad[static_cast<std::size_t>(j)] += g[j];
      }
      pc->grad[static_cast<std::size_t>(i)] += s;
    }
  };
  detail::finite_scan(*n, "outer_add");
  return Tensor(n);
}

/// Strictly decreasing bias vector from unconstrained parameters:
/// b_1 = theta_1, b_j = b_{j-1} - exp(theta_j). Keeps ordinal rank logits
/// non-increasing for every input by construction.
inline Tensor ordered_bias(const Tensor& theta) {
  if (theta.shape().size() != 1) throw std::invalid_argument("ordered_bias: expected [K]");
  const int K = theta.dim(0);
  auto n = detail::make_node({K}, {theta.node()});
  double acc = theta.val()[0];
  n->val[0] = acc;
  for (int j = 1; j < K; ++j) {
    acc -= std::exp(theta.val()[static_cast<std::size_t>(j)]);
    n->val[static_cast<std::size_t>(j)] = acc;
  }
  Node* self = n.get();
  n->backprop = [self, K] {
    auto& p = self->parents[0];
    p->ensure_grad();
    // b_j depends on theta_1 and on theta_i (i <= j, i >= 2) via -exp(theta_i)
    double suffix = 0.0;
    for (int j = K; j-- > 0;) {
      suffix += self->grad[static_cast<std::size_t>(j)];
      if (j == 0)
        p->grad[0] += suffix;
      else
        p->grad[static_cast<std::size_t>(j)] -= suffix * std::exp(p->val[static_cast<std::size_t>(j)]);
    }
  };
  detail::finite_scan(*n, "ordered_bias");
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes");
  const std::size_t m = static_cast<std::size_t>(a.dim(0));
  const std::size_t k = static_cast<std::size_t>(a.dim(1));
  const std::size_t p = static_cast<std::size_t>(b.dim(1));
  auto n = detail::make_node({a.dim(0), b.dim(1)}, {a.node(), b.node()});
  la::gemm_nn(m, p, k, 1.0, a.val().data(), k, b.val().data(), p, 0.0, n->val.data(), p);
  Node* self = n.get();
  n->backprop = [self, m, k, p] {
    auto& pa = self->parents[0];
    auto& pb = self->parents[1];
    pa->ensure_grad();
    pb->ensure_grad();
    // dA = dC B^T ; dB = A^T dC
    la::gemm_nt(m, k, p, 1.0, self->grad.data(), p, pb->val.data(), p, 1.0, pa->grad.data(), k);
    la::gemm_tn(k, p, m, 1.0, pa->val.data(), k, self->grad.data(), p, 1.0, pb->grad.data(), p);
  };
  detail::finite_scan(*n, "matmul");
  return Tensor(n);
}

/// Fused affine layer: x [N, F] * w [F, O] + b [O].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.dim(1) != w.dim(0) || b.dim(0) != w.dim(1))
    throw std::invalid_argument("linear: incompatible shapes");
  const std::size_t n_rows = static_cast<std::size_t>(x.dim(0));
  const std::size_t f = static_cast<std::size_t>(x.dim(1));
  const std::size_t o = static_cast<std::size_t>(w.dim(1));
  auto n = detail::make_node({x.dim(0), w.dim(1)}, {x.node(), w.node(), b.node()});
  la::gemm_nn(n_rows, o, f, 1.0, x.val().data(), f, w.val().data(), o, 0.0, n->val.data(), o);
  for (std::size_t r = 0; r < n_rows; ++r)
    for (std::size_t c = 0; c < o; ++c) n->val[r * o + c] += b.val()[c];
  Node* self = n.get();
  n->backprop = [self, n_rows, f, o] {
    auto& px = self->parents[0];
    auto& pw = self->parents[1];
    auto& pb = self->parents[2];
    px->ensure_grad();
    pw->ensure_grad();
    pb->ensure_grad();
    la::gemm_nt(n_rows, f, o, 1.0, self->grad.data(), o, pw->val.data(), o, 1.0, px->grad.data(), f);
    la::gemm_tn(f, o, n_rows, 1.0, px->val.data(), f, self->grad.data(), o, 1.0, pw->grad.data(), o);
    for (std::size_t r = 0; r < n_rows; ++r)
      for (std::size_t c = 0; c < o; ++c) pb->grad[c] += self->grad[r * o + c];
  };
  detail::finite_scan(*n, "linear");
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

/// Polyphase view of one record: split[q][c][m] = x[c][q + m*stride], padded
/// with zeros, so every kernel tap of a strided convolution addresses a
/// contiguous run. phase_len = floor(L/stride) + 2 (one slot of slack each
/// side for taps that reach past the ends).
struct PhaseSplit {
  int stride = 1, phase_len = 0, channels = 0;
  std::vector<double> data;  // [stride][C][phase_len]

  void build(const double* x, int C, int L, int s) {
    stride = s;
    channels = C;
    phase_len = L / s + 2;
    data.assign(static_cast<std::size_t>(s) * C * phase_len, 0.0);
    for (int q = 0; q < s; ++q)
      for (int c = 0; c < C; ++c) {
        double* dst = row(q, c);
        for (int m = 0; q + m * s < L; ++m) dst[m] = x[static_cast<std::size_t>(c) * L + q + m * s];
      }
  }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  /// Adds the phase planes back into a [C][L] gradient buffer.
  void merge_into(double* dx, int C, int L) const {
    for (int q = 0; q < stride; ++q)
      for (int c = 0; c < C; ++c) {
        const double* src = row(q, c);
        for (int m = 0; q + m * stride < L; ++m) dx[static_cast<std::size_t>(c) * L + q + m * stride] += src[m];
      }
  }

  double* row(int q, int c) {
    return data.data() + (static_cast<std::size_t>(q) * channels + c) * phase_len;
  }
  const double* row(int q, int c) const {
    return data.data() + (static_cast<std::size_t>(q) * channels + c) * phase_len;
  }
};

/// Maps a tap offset to (phase, base index) in the split view:
/// x[l*stride + offset] == split[phase][c][l + base].
inline void tap_location(int offset, int stride, int& phase, int& base) {
  phase = offset % stride;
  if (phase < 0) phase += stride;
  base = (offset - phase) / stride;
}

/// out[l] += coeff * in[l + base] for l in [lo, hi); lo already guarantees
/// l + base >= 0.
inline void axpy_range(double* __restrict out, const double* __restrict in, int base, double coeff, int lo, int hi) {
  for (int l = lo; l < hi; ++l) out[l] += coeff * in[l + base];
}

/// in[l + base] += coeff * g[l] for l in [lo, hi).
inline void axpy_range_rev(double* __restrict in, int base, const double* __restrict g, double coeff, int lo, int hi) {
  for (int l = lo; l < hi; ++l) in[l + base] += coeff * g[l];
}

inline double dot_range(const double* __restrict a, const double* __restrict b, int base, int lo, int hi) {
  double lane[4] = {0, 0, 0, 0};
  int l = lo;
  for (; l + 4 <= hi; l += 4)
    for (int q = 0; q < 4; ++q) lane[q] += a[l + q] * b[l + q + base];
  double acc = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  for (; l < hi; ++l) acc += a[l] * b[l + base];
  return acc;
}

}  // namespace detail

/// 1-D convolution: x [N, C, L], w [O, C, K], b [O] -> [N, O, L_out] with
/// L_out = (L + 2 pad - K) / stride + 1. A per-record polyphase split keeps
/// the inner loops contiguous for any stride, forward and backward.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0) {
  if (x.shape().size() != 3 || w.shape().size() != 3) throw std::invalid_argument("conv1d: expected 3-d tensors");
  const int N = x.dim(0), C = x.dim(1), L = x.dim(2);
  const int O = w.dim(0), K = w.dim(2);
  if (w.dim(1) != C || b.dim(0) != O) throw std::invalid_argument("conv1d: channel mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv1d: bad stride/pad");
  const int l_out = (L + 2 * pad - K) / stride + 1;
  if (l_out < 1) throw std::invalid_argument("conv1d: output length would be empty");

  auto clip = [l_out](int base, int& lo, int& hi, int phase_len) {
    // valid l range so that 0 <= l + base < phase_len
    lo = std::max(0, -base);
    hi = std::min(l_out, phase_len - base);
    if (hi < lo) hi = lo;
  };

  auto n = detail::make_node({N, O, l_out}, {x.node(), w.node(), b.node()});
  {
    detail::PhaseSplit split;
    for (int i = 0; i < N; ++i) {
      split.build(x.val().data() + (static_cast<std::size_t>(i) * C) * L, C, L, stride);
      double* out = n->val.data() + (static_cast<std::size_t>(i) * O) * l_out;
      for (int oc = 0; oc < O; ++oc) {
        double* row = out + static_cast<std::size_t>(oc) * l_out;
        std::fill(row, row + l_out, b.val()[static_cast<std::size_t>(oc)]);
        for (int c = 0; c < C; ++c) {
          const double* wk = w.val().data() + (static_cast<std::size_t>(oc) * C + c) * K;
          for (int kk = 0; kk < K; ++kk) {
            int phase, base, lo, hi;
            detail::tap_location(kk - pad, stride, phase, base);
            clip(base, lo, hi, split.phase_len);
            detail::axpy_range(row, split.row(phase, c), base, wk[kk], lo, hi);
          }
        }
      }
    }
  }
  Node* self = n.get();
  n->backprop = [self, N, C, L, O, K, stride, pad, l_out, clip] {
    auto& px = self->parents[0];
    auto& pw = self->parents[1];
    auto& pb = self->parents[2];
    const bool need_dx = px->requires_grad;
    if (need_dx) px->ensure_grad();
    pw->ensure_grad();
    pb->ensure_grad();
    detail::PhaseSplit split, dsplit;
    for (int i = 0; i < N; ++i) {
      split.build(px->val.data() + (static_cast<std::size_t>(i) * C) * L, C, L, stride);
      if (need_dx) {
        dsplit.stride = stride;
        dsplit.channels = C;
        dsplit.phase_len = split.phase_len;
        dsplit.data.assign(split.data.size(), 0.0);
      }
      const double* gout = self->grad.data() + (static_cast<std::size_t>(i) * O) * l_out;
      for (int oc = 0; oc < O; ++oc) {
        const double* grow = gout + static_cast<std::size_t>(oc) * l_out;
        double gb = 0.0;
        for (int l = 0; l < l_out; ++l) gb += grow[l];
        pb->grad[static_cast<std::size_t>(oc)] += gb;
        for (int c = 0; c < C; ++c) {
          const double* wk = pw->val.data() + (static_cast<std::size_t>(oc) * C + c) * K;
          double* dwk = pw->grad.data() + (static_cast<std::size_t>(oc) * C + c) * K;
          for (int kk = 0; kk < K; ++kk) {
            int phase, base, lo, hi;
            detail::tap_location(kk - pad, stride, phase, base);
            clip(base, lo, hi, split.phase_len);
            dwk[kk] += detail::dot_range(grow, split.row(phase, c), base, lo, hi);
            if (need_dx) detail::axpy_range_rev(dsplit.row(phase, c), base, grow, wk[kk], lo, hi);
          }
        }
      }
      if (need_dx) dsplit.merge_into(px->grad.data() + (static_cast<std::size_t>(i) * C) * L, C, L);
    }
  };
  detail::finite_scan(*n, "conv1d");
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Running statistics owned by the layer; updated only in training mode.
struct BnStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.1;

  explicit BnStats(int channels = 0, double mom = 0.1)
      : mean(static_cast<std::size_t>(channels), 0.0), var(static_cast<std::size_t>(channels), 1.0), momentum(mom) {}
};

/// Per-channel batch normalization over [N, C, L]. Training mode normalizes
/// with batch statistics and updates the running estimates; eval mode uses
/// the running estimates.
inline Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BnStats& stats, bool train,
                          double eps = 1e-5) {
  if (x.shape().size() != 3) throw std::invalid_argument("batchnorm1d: expected [N, C, L]");
  const int N = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (gamma.dim(0) != C || beta.dim(0) != C || static_cast<int>(stats.mean.size()) != C)
    throw std::invalid_argument("batchnorm1d: channel mismatch");
  auto n = detail::make_node(x.shape(), {x.node(), gamma.node(), beta.node()});
  const std::size_t plane = static_cast<std::size_t>(L);
  const double m = static_cast<double>(N) * L;

  auto mean_c = std::make_shared<std::vector<double>>(C, 0.0);
  auto inv_std_c = std::make_shared<std::vector<double>>(C, 0.0);

  for (int c = 0; c < C; ++c) {
    double mu, var;
    if (train) {
      double s = 0.0;
      for (int i = 0; i < N; ++i) {
        const double* in = x.val().data() + (static_cast<std::size_t>(i) * C + c) * plane;
        for (int l = 0; l < L; ++l) s += in[l];
      }
      mu = s / m;
      double v = 0.0;
      for (int i = 0; i < N; ++i) {
        const double* in = x.val().data() + (static_cast<std::size_t>(i) * C + c) * plane;
        for (int l = 0; l < L; ++l) v += (in[l] - mu) * (in[l] - mu);
      }
      var = v / m;
      stats.mean[static_cast<std::size_t>(c)] =
          (1.0 - stats.momentum) * stats.mean[static_cast<std::size_t>(c)] + stats.momentum * mu;
      stats.var[static_cast<std::size_t>(c)] =
          (1.0 - stats.momentum) * stats.var[static_cast<std::size_t>(c)] + stats.momentum * var;
    } else {
      mu = stats.mean[static_cast<std::size_t>(c)];
      var = stats.var[static_cast<std::size_t>(c)];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    (*mean_c)[static_cast<std::size_t>(c)] = mu;
    (*inv_std_c)[static_cast<std::size_t>(c)] = inv_std;
    const double g = gamma.val()[static_cast<std::size_t>(c)];
    const double bt = beta.val()[static_cast<std::size_t>(c)];
    for (int i = 0; i < N; ++i) {
      const double* in = x.val().data() + (static_cast<std::size_t>(i) * C + c) * plane;
      double* out = n->val.data() + (static_cast<std::size_t>(i) * C + c) * plane;
      for (int l = 0; l < L; ++l) out[l] = g * (in[l] - mu) * inv_std + bt;
    }
  }

  Node* self = n.get();
  n->backprop = [self, mean_c, inv_std_c, N, C, L, m, train] {
    auto& px = self->parents[0];
    auto& pg = self->parents[1];
    auto& pb = self->parents[2];
    px->ensure_grad();
    pg->ensure_grad();
    pb->ensure_grad();
    const std::size_t plane = static_cast<std::size_t>(L);
    for (int c = 0; c < C; ++c) {
      const double mu = (*mean_c)[static_cast<std::size_t>(c)];
      const double inv_std = (*inv_std_c)[static_cast<std::size_t>(c)];
      const double g = pg->val[static_cast<std::size_t>(c)];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int i = 0; i < N; ++i) {
        const double* xin = px->val.data() + (static_cast<std::size_t>(i) * C + c) * plane;
        const double* dy = self->grad.data() + (static_cast<std::size_t>(i) * C + c) * plane;
        for (int l = 0; l < L; ++l) {
          const double xhat = (xin[l] - mu) * inv_std;
          sum_dy += dy[l];
          sum_dy_xhat += dy[l] * xhat;
        }
      }
      pb->grad[static_cast<std::size_t>(c)] += sum_dy;
      pg->grad[static_cast<std::size_t>(c)] += sum_dy_xhat;
      if (train) {
        // backward through the batch statistics
        for (int i = 0; i < N; ++i) {
          const double* xin = px->val.data() + (static_cast<std::size_t>(i) * C + c) * plane;
          const double* dy = self->grad.data() + (static_cast<std::size_t>(i) * C + c) * plane;
          double* dx = px->grad.data() + (static_cast<std::size_t>(i) * C + c) * plane;
          for (int l = 0; l < L; ++l) {
            const double xhat = (xin[l] - mu) * inv_std;
            dx[l] += g * inv_std * (dy[l] - sum_dy / m - xhat * sum_dy_xhat / m);
          }
        }
      } else {
        for (int i = 0; i < N; ++i) {
          const double* dy = self->grad.data() + (static_cast<std::size_t>(i) * C + c) * plane;
          double* dx = px->grad.data() + (static_cast<std::size_t>(i) * C + c) * plane;
          for (int l = 0; l < L; ++l) dx[l] += g * inv_std * dy[l];
        }
      }
    }
  };
  detail::finite_scan(*n, "batchnorm1d");
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Losses (fused, with analytic backward)
// ---------------------------------------------------------------------------

/// Mean squared error against constant targets.
inline Tensor mse_loss(const Tensor& pred, const std::vector<double>& target) {
  if (pred.numel() != target.size()) throw std::invalid_argument("mse_loss: size mismatch");
  auto n = detail::make_node({1}, {pred.node()});
  const std::size_t m = target.size();
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = pred.val()[i] - target[i];
    s += d * d;
  }
  n->val[0] = s / static_cast<double>(m);
  Node* self = n.get();
  auto tgt = std::make_shared<std::vector<double>>(target);
  n->backprop = [self, tgt, m] {
    auto& p = self->parents[0];
    p->ensure_grad();
    const double g = self->grad[0] * 2.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) p->grad[i] += g * (p->val[i] - (*tgt)[i]);
  };
  detail::finite_scan(*n, "mse_loss");
  return Tensor(n);
}

/// Gaussian negative log-likelihood in log-variance parameterization:
/// mean over the batch of 0.5 log s2 + (y - mu)^2 / (2 s2) + 0.5 log(2 pi).
inline Tensor gaussian_nll(const Tensor& mu, const Tensor& logvar, const std::vector<double>& target) {
  if (mu.numel() != target.size() || logvar.numel() != target.size())
    throw std::invalid_argument("gaussian_nll: size mismatch");
  auto n = detail::make_node({1}, {mu.node(), logvar.node()});
  const std::size_t m = target.size();
  constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 log(2 pi)
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double lv = logvar.val()[i];
    const double d = target[i] - mu.val()[i];
    s += 0.5 * lv + 0.5 * d * d * std::exp(-lv) + kHalfLog2Pi;
  }
  n->val[0] = s / static_cast<double>(m);
  Node* self = n.get();
  auto tgt = std::make_shared<std::vector<double>>(target);
  n->backprop = [self, tgt, m] {
    auto& pmu = self->parents[0];
    auto& plv = self->parents[1];
    pmu->ensure_grad();
    plv->ensure_grad();
    const double g = self->grad[0] / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double lv = plv->val[i];
      const double inv_s2 = std::exp(-lv);
      const double d = pmu->val[i] - (*tgt)[i];
      pmu->grad[i] += g * d * inv_s2;
      plv->grad[i] += g * 0.5 * (1.0 - d * d * inv_s2);
    }
  };
  detail::finite_scan(*n, "gaussian_nll");
  return Tensor(n);
}

/// Softmax cross-entropy with integer class labels (1-based), mean over batch.
inline Tensor ce_with_logits(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size())
    throw std::invalid_argument("ce_with_logits: shape mismatch");
  const int N = logits.dim(0), K = logits.dim(1);
  auto n = detail::make_node({1}, {logits.node()});
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * K);
  double loss = 0.0;
  for (int i = 0; i < N; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 1 || y > K) throw std::invalid_argument("ce_with_logits: label out of range");
    const double* in = logits.val().data() + static_cast<std::size_t>(i) * K;
    double* pr = probs->data() + static_cast<std::size_t>(i) * K;
    const double mx = *std::max_element(in, in + K);
    double sum = 0.0;
    for (int c = 0; c < K; ++c) {
      pr[c] = std::exp(in[c] - mx);
      sum += pr[c];
    }
    for (int c = 0; c < K; ++c) pr[c] /= sum;
    loss -= std::log(std::max(pr[y - 1], 1e-300));
  }
  n->val[0] = loss / N;
  Node* self = n.get();
  auto lbl = std::make_shared<std::vector<int>>(labels);
  n->backprop = [self, probs, lbl, N, K] {
    auto& p = self->parents[0];
    p->ensure_grad();
    const double g = self->grad[0] / N;
    for (int i = 0; i < N; ++i) {
      const double* pr = probs->data() + static_cast<std::size_t>(i) * K;
      double* pg = p->grad.data() + static_cast<std::size_t>(i) * K;
      const int y = (*lbl)[static_cast<std::size_t>(i)];
      for (int c = 0; c < K; ++c) pg[c] += g * (pr[c] - (c == y - 1 ? 1.0 : 0.0));
    }
  };
  detail::finite_scan(*n, "ce_with_logits");
  return Tensor(n);
}

/// Element-wise binary cross-entropy on logits, mean over all entries.
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (logits.numel() != targets.size()) throw std::invalid_argument("bce_with_logits: size mismatch");
  auto n = detail::make_node({1}, {logits.node()});
  const std::size_t m = targets.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double z = logits.val()[i];
    const double t = targets[i];
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  n->val[0] = loss / static_cast<double>(m);
  Node* self = n.get();
  auto tgt = std::make_shared<std::vector<double>>(targets);
  n->backprop = [self, tgt, m] {
    auto& p = self->parents[0];
    p->ensure_grad();
    const double g = self->grad[0] / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double z = p->val[i];
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      p->grad[i] += g * (s - (*tgt)[i]);
    }
  };
  detail::finite_scan(*n, "bce_with_logits");
  return Tensor(n);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Trainable tensor plus Adam state.
struct Param {
  Tensor value;
  std::vector<double> m, v;

  explicit Param(Tensor t) : value(std::move(t)), m(value.numel(), 0.0), v(value.numel(), 0.0) {}

  void zero_grad() { std::fill(value.grad().begin(), value.grad().end(), 0.0); }
};

/// Adam with bias correction.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;

  void step(std::span<Param* const> params) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (Param* p : params) {
      auto& val = p->value.val();
      auto& grad = p->value.grad();
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double g = grad[i];
        p->m[i] = beta1 * p->m[i] + (1.0 - beta1) * g;
        p->v[i] = beta2 * p->v[i] + (1.0 - beta2) * g * g;
        const double mhat = p->m[i] / bc1;
        const double vhat = p->v[i] / bc2;
        val[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  void zero_grad(std::span<Param* const> params) {
    for (Param* p : params) p->zero_grad();
  }
};

}  // namespace elx::ad
