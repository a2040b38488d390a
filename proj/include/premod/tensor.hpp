#pragma once

// Dense 2-D tensors with reverse-mode automatic differentiation. A Tensor is
// a handle to a graph node; ops record backward closures on the tape. The
// engine is single-threaded per graph; independent graphs (model replicas)
// may live on different threads.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "premod/common.hpp"

namespace premod::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  std::size_t rows = 0, cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool consumed = false;  // set once backward has run through this node
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;  // pushes this->grad into parents

  std::size_t size() const { return rows * cols; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Thread-local switch: when grad mode is off, ops compute values only and
// record no tape (used for scoring/evaluation passes).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  bool prev;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value.assign(rows * cols, 0.0);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor from(std::vector<double> data, std::size_t rows, std::size_t cols,
                     bool requires_grad = false) {
    if (data.size() != rows * cols)
      throw Error("ShapeMismatch", "data length does not match shape");
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({v}, 1, 1, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad; }

  double& at(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw Error("ShapeMismatch", "item() on non-scalar");
    return node_->value[0];
  }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }

  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

inline Tensor make_op(std::size_t rows, std::size_t cols,
                      std::vector<NodePtr> parents,
                      std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(rows * cols, 0.0);
  if (grad_mode()) {
    bool any = false;
    for (const auto& p : parents)
      if (p->requires_grad) any = true;
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward = std::move(backward);
    }
  }
  return Tensor(n);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error("ShapeMismatch", std::string(op) + ": shapes differ");
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw Error("ShapeMismatch", "matmul: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto pa = a.node(), pb = b.node();
  Tensor out = detail::make_op(m, n, {pa, pb}, [pa, pb, m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (pa->requires_grad) {
      pa->ensure_grad();  // dA += dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          const double* brow = pb->value.data() + j;
          double* garow = pa->grad.data() + i * k;
          for (std::size_t t = 0; t < k; ++t) garow[t] += gij * brow[t * n];
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();  // dB += A^T * dC
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa->value.data() + i * k;
        const double* grow = g + i * n;
        for (std::size_t t = 0; t < k; ++t) {
          const double ait = arow[t];
          if (ait == 0.0) continue;
          double* gbrow = pb->grad.data() + t * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += ait * grow[j];
        }
      }
    }
  });
  // forward: C = A * B, ikj order
  double* c = out.data().data();
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const double ait = av[i * k + t];
      if (ait == 0.0) continue;
      const double* brow = bv + t * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ait * brow[j];
    }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  Tensor out = detail::make_op(a.rows(), a.cols(), {pa, pb}, [pa, pb](Node& self) {
    for (auto* p : {pa.get(), pb.get()}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

// A (m x n) + row vector b (1 x n), broadcast over rows.
inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
  if (b.rows() != 1 || b.cols() != a.cols())
    throw Error("ShapeMismatch", "add_rowvec: bias must be 1 x cols");
  auto pa = a.node(), pb = b.node();
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = detail::make_op(m, n, {pa, pb}, [pa, pb, m, n](Node& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pb->grad[j] += self.grad[i * n + j];
    }
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[i * n + j] = a.data()[i * n + j] + b.data()[j];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  auto pa = a.node();
  Tensor out = detail::make_op(a.rows(), a.cols(), {pa}, [pa, s](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += s * self.grad[i];
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = s * a.data()[i];
  return out;
}

inline Tensor relu(const Tensor& a) {
  auto pa = a.node();
  Tensor out = detail::make_op(a.rows(), a.cols(), {pa}, [pa](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (pa->value[i] > 0.0) pa->grad[i] += self.grad[i];
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  auto pa = a.node();
  Tensor out = detail::make_op(a.rows(), a.cols(), {pa}, [pa](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      pa->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return out;
}

// Row-wise softmax with the usual max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
  auto pa = a.node();
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = detail::make_op(m, n, {pa}, [pa, m, n](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      double* pg = pa->grad.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) pg[j] += y[j] * (g[j] - dot);
    }
  });
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.data().data() + i * n;
    double* y = out.data().data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= sum;
  }
  return out;
}

// Row-wise layer normalization with learnable scale/shift (1 x n each).
// Variance is the biased estimate; eps only guards the zero-variance row.
inline Tensor layer_norm_rows(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                              double eps = 1e-10) {
  if (gamma.rows() != 1 || gamma.cols() != a.cols() || beta.rows() != 1 ||
      beta.cols() != a.cols())
    throw Error("ShapeMismatch", "layer_norm: scale/shift must be 1 x cols");
  auto pa = a.node(), pg = gamma.node(), pb = beta.node();
  const std::size_t m = a.rows(), n = a.cols();
  auto cache = std::make_shared<std::vector<double>>(m * (n + 1));  // xhat rows + inv_sd
  Tensor out = detail::make_op(m, n, {pa, pg, pb}, [pa, pg, pb, cache, m, n](Node& self) {
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    if (pa->requires_grad) pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* xh = cache->data() + i * (n + 1);
      const double inv_sd = xh[n];
      const double* g = self.grad.data() + i * n;
      if (pg->requires_grad)
        for (std::size_t j = 0; j < n; ++j) pg->grad[j] += g[j] * xh[j];
      if (pb->requires_grad)
        for (std::size_t j = 0; j < n; ++j) pb->grad[j] += g[j];
      if (pa->requires_grad) {
        // dxhat = g * gamma; dx = inv_sd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dxh = g[j] * pg->value[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= static_cast<double>(n);
        mean_dxh_xh /= static_cast<double>(n);
        double* pgr = pa->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double dxh = g[j] * pg->value[j];
          pgr[j] += inv_sd * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
      }
    }
  });
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.data().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(n);
    const double inv_sd = 1.0 / std::sqrt(var + eps);
    double* xh = cache->data() + i * (n + 1);
    double* y = out.data().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (x[j] - mean) * inv_sd;
      y[j] = gamma.data()[j] * xh[j] + beta.data()[j];
    }
    xh[n] = inv_sd;
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  auto pa = a.node();
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = detail::make_op(n, m, {pa}, [pa, m, n](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j * m + i];
  });
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("ShapeMismatch", "concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.rows() != m) throw Error("ShapeMismatch", "concat_cols: row counts differ");
    n += p.cols();
    parents.push_back(p.node());
  }
  auto ps = parents;
  Tensor out = detail::make_op(m, n, std::move(parents), [ps, m, n](Node& self) {
    std::size_t off = 0;
    for (const auto& p : ps) {
      const std::size_t w = p->cols;
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j)
            p->grad[i * w + j] += self.grad[i * n + off + j];
      }
      off += w;
    }
  });
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out.data()[i * n + off + j] = p.data()[i * w + j];
    off += w;
  }
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("ShapeMismatch", "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    if (p.cols() != n) throw Error("ShapeMismatch", "concat_rows: col counts differ");
    m += p.rows();
    parents.push_back(p.node());
  }
  auto ps = parents;
  Tensor out = detail::make_op(m, n, std::move(parents), [ps, n](Node& self) {
    std::size_t off = 0;
    for (const auto& p : ps) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += self.grad[off + i];
      }
      off += p->size();
    }
  });
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
    off += p.size();
  }
  return out;
}

inline Tensor take_row(const Tensor& a, std::size_t r) {
  if (r >= a.rows()) throw Error("ShapeMismatch", "take_row: row out of range");
  auto pa = a.node();
  const std::size_t n = a.cols();
  Tensor out = detail::make_op(1, n, {pa}, [pa, r, n](Node& self) {
    pa->ensure_grad();
    for (std::size_t j = 0; j < n; ++j) pa->grad[r * n + j] += self.grad[j];
  });
  for (std::size_t j = 0; j < n; ++j) out.data()[j] = a.data()[r * n + j];
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  auto pa = a.node();
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = detail::make_op(1, 1, {pa}, [pa, inv](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += inv * self.grad[0];
  });
  double s = 0.0;
  for (double v : a.data()) s += v;
  out.data()[0] = s * inv;
  return out;
}

// Inverted dropout. Pass training=false (or p=0) for the identity.
inline Tensor dropout(const Tensor& a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  auto pa = a.node();
  auto mask = std::make_shared<std::vector<double>>(a.size());
  const double keep = 1.0 - p;
  for (auto& m : *mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  Tensor out = detail::make_op(a.rows(), a.cols(), {pa}, [pa, mask](Node& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      pa->grad[i] += self.grad[i] * (*mask)[i];
  });
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * (*mask)[i];
  return out;
}

// Runs reverse-mode accumulation from a scalar loss, then frees the tape.
// Parameter (leaf) grads survive; calling backward twice on the same graph
// throws GraphReused.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw Error("ShapeMismatch", "backward: loss must be scalar");
  NodePtr root = loss.node();
  if (root->consumed) throw Error("GraphReused", "backward already ran on this graph");
  // Iterative post-order DFS for the topological order.
  std::vector<NodePtr> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{root, 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr p = node->parents[next++];
      if (seen.insert(p.get()).second && !p->parents.empty()) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
  for (const auto& n : order) {
    n->consumed = true;
    n->backward = nullptr;
    n->parents.clear();
    if (!n->requires_grad) n->grad.clear();
  }
  root->consumed = true;
}

}  // namespace premod::ad
