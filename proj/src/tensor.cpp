#include "latsa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "latsa/kernels.hpp"

namespace latsa {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t product(const std::vector<std::size_t>& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void check_rank(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 3) throw ShapeError("tensor rank must be 1..3, got " + shape_str(shape));
}

Tensor make(std::vector<std::size_t> shape, std::vector<double> values, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  const bool needs = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                   [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

std::size_t rows_of(const Node& n) { return n.shape.size() == 1 ? 1 : n.shape[0]; }
std::size_t cols_of(const Node& n) { return n.shape.back(); }

void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.rank() > 2) throw ShapeError(std::string(op) + ": expected rank <= 2, got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require_matrix(a, op);
  require_matrix(b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::vector<std::size_t> mat(std::size_t r, std::size_t c) { return {r, c}; }

}  // namespace

std::size_t Node::numel() const { return product(shape); }

double* Node::grad_buffer() {
  if (grad.empty()) grad.assign(numel(), 0.0);
  return grad.data();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values) {
  check_rank(shape);
  if (product(shape) != values.size())
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(product(shape)) +
                     " values, got " + std::to_string(values.size()));
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::variable(std::vector<std::size_t> shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::size_t Tensor::rows() const { return rows_of(*node_); }
std::size_t Tensor::cols() const { return cols_of(*node_); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data()[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Parameter::Parameter(std::string name, std::vector<std::size_t> shape, std::vector<double> value)
    : name_(std::move(name)), shape_(std::move(shape)), value_(std::move(value)) {
  check_rank(shape_);
  if (product(shape_) != value_.size()) throw ShapeError("parameter " + name_ + ": value count does not match shape");
}

Tensor Parameter::var() const {
  auto node = std::make_shared<Node>();
  node->shape = shape_;
  node->external = value_.data();
  node->requires_grad = g_grad_enabled;
  node->param = this;
  return Tensor(std::move(node));
}

std::vector<double>& Gradients::at(const Parameter& p) {
  auto& g = grads_[&p];
  if (g.empty()) g.assign(p.numel(), 0.0);
  return g;
}

const std::vector<double>* Gradients::find(const Parameter& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

void Gradients::accumulate(const Gradients& other) {
  for (const auto& [p, g] : other.grads_) {
    auto& mine = at(*p);
    for (std::size_t i = 0; i < g.size(); ++i) mine[i] += g[i];
  }
}

void Gradients::scale(double s) {
  for (auto& [p, g] : grads_)
    for (double& v : g) v *= s;
}

Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) throw ShapeError("backward() needs a scalar loss");
  Gradients out;
  if (!loss.requires_grad()) return out;

  // Iterative post-order DFS gives a topological order of the recorded graph.
  std::vector<Node*> order;
  std::unordered_map<Node*, bool> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited[loss.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited[parent]) {
        visited[parent] = true;
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.clear();
  loss.node()->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->param || n->grad.empty()) continue;
    auto& g = out.at(*n->param);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n->grad[i];
  }
  return out;
}

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  kernels::serial::matmul(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make(mat(m, n), std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const double* g = self.grad.data();
    if (A.requires_grad) {
      // dA = G B^T. A few rows take row dot products directly; more rows pay
      // for transposing B once so the inner loop stays contiguous.
      const double* bv = B.data();
      if (m < 4) {
        double* ga = A.grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            const double* gi = g + i * n;
            const double* bt = bv + t * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gi[j] * bt[j];
            ga[i * k + t] += s;
          }
      } else {
        std::vector<double> bt(n * k);
        for (std::size_t t = 0; t < k; ++t)
          for (std::size_t j = 0; j < n; ++j) bt[j * k + t] = bv[t * n + j];
        kernels::serial::matmul(g, bt.data(), A.grad_buffer(), m, n, k, true);
      }
    }
    if (B.requires_grad) {
      double* gb = B.grad_buffer();
      const double* av = A.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          const double ait = av[i * k + t];
          const double* gi = g + i * n;
          double* gbt = gb + t * n;
          for (std::size_t j = 0; j < n; ++j) gbt[j] += ait * gi[j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make(mat(n, m), std::move(out), {a.node()}, [m, n](Node& self) {
    double* ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
  require_same(a, b, op);
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  return make(a.shape(), std::move(out), {a.node(), b.node()}, [n, bwd](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    double* ga = A.requires_grad ? A.grad_buffer() : nullptr;
    double* gb = B.requires_grad ? B.grad_buffer() : nullptr;
    const double* av = A.data();
    const double* bv = B.data();
    for (std::size_t i = 0; i < n; ++i) {
      double da, db;
      bwd(av[i], bv[i], self.grad[i], da, db);
      if (ga) ga[i] += da;
      if (gb) gb[i] += db;
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary_elementwise(const Tensor& a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  return make(a.shape(), std::move(out), {a.node()}, [n, deriv](Node& self) {
    double* ga = self.parents[0]->grad_buffer();
    const double* x = self.parents[0]->data();
    const double* y = self.value.data();
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) { da = g, db = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) { da = g, db = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) { da = g * y, db = g * x; });
}

Tensor scale(const Tensor& a, double s) {
  return unary_elementwise(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_elementwise(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_matrix(a, "add_row");
  require_matrix(row, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.rows() != 1 || row.cols() != n)
    throw ShapeError("add_row: shape mismatch " + shape_str(a.shape()) + " vs row " + shape_str(row.shape()));
  std::vector<double> out(a.values().begin(), a.values().end());
  const double* rv = row.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  return make(a.shape(), std::move(out), {a.node(), row.node()}, [m, n](Node& self) {
    Node& A = *self.parents[0];
    Node& R = *self.parents[1];
    if (A.requires_grad) {
      double* ga = A.grad_buffer();
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += self.grad[i];
    }
    if (R.requires_grad) {
      double* gr = R.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += self.grad[i * n + j];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != m)
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    offsets.push_back(total);
    total += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].cols();
    const double* pv = parts[k].values().data();
    for (std::size_t i = 0; i < m; ++i) std::copy(pv + i * c, pv + (i + 1) * c, out.begin() + i * total + offsets[k]);
  }
  return make(mat(m, total), std::move(out), std::move(parents), [m, total, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      Node& P = *self.parents[k];
      if (!P.requires_grad) continue;
      const std::size_t c = cols_of(P);
      double* gp = P.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += self.grad[i * total + offsets[k] + j];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<NodePtr> parents;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != n)
      throw ShapeError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    m += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
    parents.push_back(p.node());
  }
  return make(mat(m, n), std::move(out), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& parent : self.parents) {
      const std::size_t cnt = parent->numel();
      if (parent->requires_grad) {
        double* gp = parent->grad_buffer();
        for (std::size_t i = 0; i < cnt; ++i) gp[i] += self.grad[offset + i];
      }
      offset += cnt;
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > n)
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(a.shape()));
  std::vector<double> out(m * count);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < m; ++i) std::copy(av + i * n + begin, av + i * n + begin + count, out.begin() + i * count);
  return make(mat(m, count), std::move(out), {a.node()}, [m, n, begin, count](Node& self) {
    double* ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += self.grad[i * count + j];
  });
}

Tensor select_row(const Tensor& a, std::size_t r) {
  require_matrix(a, "select_row");
  const std::size_t n = a.cols();
  if (r >= a.rows()) throw ShapeError("select_row: row " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
  std::vector<double> out(a.values().begin() + r * n, a.values().begin() + (r + 1) * n);
  return make(mat(1, n), std::move(out), {a.node()}, [r, n](Node& self) {
    double* ga = self.parents[0]->grad_buffer();
    for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += self.grad[j];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::size_t n = a.numel();
  return make({1}, {s}, {a.node()}, [n](Node& self) {
    double* ga = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
  });
}

Tensor mean_rows(const Tensor& a) {
  require_matrix(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  const double* av = a.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  return make(mat(1, n), std::move(out), {a.node()}, [m, n](Node& self) {
    double* ga = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j] * inv;
  });
}

Tensor weighted_sum(const std::vector<Tensor>& parts, std::span<const double> weights) {
  if (parts.empty() || parts.size() != weights.size()) throw ShapeError("weighted_sum: need one weight per part");
  const std::size_t n = parts.front().numel();
  std::vector<double> out(n, 0.0);
  std::vector<NodePtr> parents;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    require_same(parts.front(), parts[k], "weighted_sum");
    const double* pv = parts[k].values().data();
    for (std::size_t i = 0; i < n; ++i) out[i] += weights[k] * pv[i];
    parents.push_back(parts[k].node());
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make(parts.front().shape(), std::move(out), std::move(parents), [n, w](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (!self.parents[k]->requires_grad) continue;
      double* gp = self.parents[k]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) gp[i] += w[k] * self.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t n = table.cols();
  const std::size_t vocab = table.rows();
  std::vector<double> out(ids.size() * n);
  const double* tv = table.values().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab)
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of range for table " + shape_str(table.shape()));
    std::copy(tv + ids[i] * n, tv + (ids[i] + 1) * n, out.begin() + i * n);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make(mat(ids.size(), n), std::move(out), {table.node()}, [idv, n](Node& self) {
    double* gt = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gt[idv[i] * n + j] += self.grad[i * n + j];
  });
}

namespace {

// Softmax of one row of (scores + mask) in place, with dropout on the finite
// entries. factor[j] receives the derivative scale of entry j. Returns false
// if every entry is masked.
bool softmax_row(double* row, const double* mask, double* factor, std::size_t n, double dropout_rate, bool drop,
                 Rng* rng) {
  const double keep_scale = drop ? 1.0 / (1.0 - dropout_rate) : 1.0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const double mk = mask[j];
    double z = row[j] + mk;
    factor[j] = 1.0;
    if (std::isinf(mk) && mk < 0) {
      z = -std::numeric_limits<double>::infinity();
    } else if (drop) {
      if (rng->uniform() < dropout_rate) {
        z = 0.0;
        factor[j] = 0.0;
      } else {
        z *= keep_scale;
        factor[j] = keep_scale;
      }
    }
    row[j] = z;
    best = std::max(best, z);
  }
  if (std::isinf(best)) return false;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::isinf(row[j]) ? 0.0 : std::exp(row[j] - best);
    total += row[j];
  }
  for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  return true;
}

// gs += factor * y * (gy - <gy, y>) for one row.
void softmax_row_backward(const double* y, const double* gy, const double* factor, double* gs, std::size_t n) {
  double dot = 0.0;
  for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
  for (std::size_t j = 0; j < n; ++j) gs[j] += factor[j] * y[j] * (gy[j] - dot);
}

}  // namespace

Tensor masked_softmax_rows(const Tensor& scores, std::span<const double> mask, double dropout_rate, Mode mode,
                           Rng* rng) {
  require_matrix(scores, "masked_softmax_rows");
  const std::size_t m = scores.rows(), n = scores.cols();
  if (mask.size() != m * n)
    throw ShapeError("masked_softmax_rows: mask has " + std::to_string(mask.size()) + " entries for scores " +
                     shape_str(scores.shape()));
  const bool drop = mode == Mode::train && dropout_rate > 0.0;
  if (drop && !rng) throw std::invalid_argument("masked_softmax_rows: dropout needs a generator");

  std::vector<double> factor(m * n);
  std::vector<double> out(scores.values().begin(), scores.values().end());
  for (std::size_t i = 0; i < m; ++i)
    if (!softmax_row(out.data() + i * n, mask.data() + i * n, factor.data() + i * n, n, dropout_rate, drop, rng))
      throw std::domain_error("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
  return make(mat(m, n), std::move(out), {scores.node()}, [m, n, factor = std::move(factor)](Node& self) {
    double* gs = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      softmax_row_backward(self.value.data() + i * n, self.grad.data() + i * n, factor.data() + i * n, gs + i * n, n);
  });
}

Tensor multi_head_attention(const Tensor& qkv, std::span<const double* const> masks, double scale, double dropout_rate,
                            Mode mode, Rng* rng, std::vector<std::vector<double>>* weights) {
  require_matrix(qkv, "multi_head_attention");
  const std::size_t heads = masks.size();
  const std::size_t n = qkv.rows(), w = qkv.cols();
  if (heads == 0 || w % (3 * heads) != 0)
    throw ShapeError("multi_head_attention: " + std::to_string(w) + " columns do not split into 3 x " +
                     std::to_string(heads) + " heads");
  const std::size_t d = w / 3, dh = d / heads;
  const bool drop = mode == Mode::train && dropout_rate > 0.0;
  if (drop && !rng) throw std::invalid_argument("multi_head_attention: dropout needs a generator");

  const double* x = qkv.values().data();
  // Attention weights and dropout factors, per head, kept for the backward pass.
  auto att = std::make_shared<std::vector<double>>(heads * n * n);
  auto factor = std::make_shared<std::vector<double>>(heads * n * n);
  std::vector<double> out(n * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
    double* a = att->data() + h * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      double* row = a + i * n;
      const double* qi = x + i * w + qo;
      for (std::size_t j = 0; j < n; ++j) {
        if (masks[h][i * n + j] == -std::numeric_limits<double>::infinity()) {
          row[j] = 0.0;
          continue;
        }
        const double* kj = x + j * w + ko;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        row[j] = scale * s;
      }
      if (!softmax_row(row, masks[h] + i * n, factor->data() + h * n * n + i * n, n, dropout_rate, drop, rng))
        throw std::domain_error("multi_head_attention: head " + std::to_string(h) + " row " + std::to_string(i) +
                                " is fully masked");
      double* oi = out.data() + i * d + h * dh;
      for (std::size_t j = 0; j < n; ++j) {
        const double aij = row[j];
        if (aij == 0.0) continue;
        const double* vj = x + j * w + vo;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += aij * vj[c];
      }
    }
    if (weights) weights->emplace_back(a, a + n * n);
  }
  return make(mat(n, d), std::move(out), {qkv.node()}, [n, w, d, dh, heads, scale, att, factor](Node& self) {
    Node& in = *self.parents[0];
    const double* x = in.data();
    double* gx = in.grad_buffer();
    const double* g = self.grad.data();
    std::vector<double> ga(n), gs(n);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
      const double* a = att->data() + h * n * n;
      const double* f = factor->data() + h * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const double* gi = g + i * d + h * dh;
        const double* ai = a + i * n;
        for (std::size_t j = 0; j < n; ++j) {
          ga[j] = 0.0;
          if (ai[j] == 0.0) continue;  // contributes nothing to either gradient
          const double* vj = x + j * w + vo;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
          ga[j] = s;
          double* gvj = gx + j * w + vo;
          for (std::size_t c = 0; c < dh; ++c) gvj[c] += ai[j] * gi[c];
        }
        std::fill(gs.begin(), gs.end(), 0.0);
        softmax_row_backward(ai, ga.data(), f + i * n, gs.data(), n);
        const double* qi = x + i * w + qo;
        double* gqi = gx + i * w + qo;
        for (std::size_t j = 0; j < n; ++j) {
          const double sij = scale * gs[j];
          if (sij == 0.0) continue;
          const double* kj = x + j * w + ko;
          double* gkj = gx + j * w + ko;
          for (std::size_t c = 0; c < dh; ++c) {
            gqi[c] += sij * kj[c];
            gkj[c] += sij * qi[c];
          }
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n)
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
  std::vector<double> xhat(m * n), inv_std(m), out(m * n);
  const double* xv = x.values().data();
  const double* gv = gain.values().data();
  const double* bv = bias.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xv[i * n + j] - mean) * inv_std[i];
      out[i * n + j] = gv[j] * xhat[i * n + j] + bv[j];
    }
  }
  return make(x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
              [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                Node& X = *self.parents[0];
                Node& G = *self.parents[1];
                Node& B = *self.parents[2];
                const double* gv = G.data();
                if (G.requires_grad) {
                  double* gg = G.grad_buffer();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gg[j] += self.grad[i * n + j] * xhat[i * n + j];
                }
                if (B.requires_grad) {
                  double* gb = B.grad_buffer();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
                }
                if (X.requires_grad) {
                  double* gx = X.grad_buffer();
                  const double dn = static_cast<double>(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = self.grad[i * n + j] * gv[j];
                      sum_d += d;
                      sum_dx += d * xhat[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = self.grad[i * n + j] * gv[j];
                      gx[i * n + j] += inv_std[i] * (d - sum_d / dn - xhat[i * n + j] * sum_dx / dn);
                    }
                  }
                }
              });
}

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return x;
  if (!rng) throw std::invalid_argument("dropout: train mode needs a generator");
  const std::size_t n = x.numel();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(n);
  std::vector<double> out(n);
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    factor[i] = rng->uniform() < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * factor[i];
  }
  return make(x.shape(), std::move(out), {x.node()}, [n, factor = std::move(factor)](Node& self) {
    double* gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[i] * factor[i];
  });
}

Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
  return add_row(matmul(relu(add_row(matmul(x, w1), b1)), w2), b2);
}

std::vector<double> log_softmax_row(std::span<const double> logits) {
  const double best = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - best);
  const double lse = best + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] - lse;
  return out;
}

Tensor smoothed_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets, double epsilon) {
  require_matrix(logits, "smoothed_cross_entropy");
  const std::size_t m = logits.rows(), v = logits.cols();
  if (targets.size() != m) throw ShapeError("smoothed_cross_entropy: need one target per row");
  if (epsilon < 0.0 || epsilon >= 1.0) throw std::invalid_argument("smoothed_cross_entropy: epsilon must be in [0, 1)");
  std::vector<double> probs(m * v);
  double loss = 0.0;
  const double uniform = epsilon / static_cast<double>(v);
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= v) throw ShapeError("smoothed_cross_entropy: target id out of range");
    const auto lp = log_softmax_row(logits.values().subspan(i * v, v));
    double row = -(1.0 - epsilon) * lp[targets[i]];
    for (std::size_t j = 0; j < v; ++j) {
      row -= uniform * lp[j];
      probs[i * v + j] = std::exp(lp[j]);
    }
    loss += row;
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return make({1}, {loss}, {logits.node()}, [m, v, uniform, epsilon, probs = std::move(probs), tg](Node& self) {
    double* gl = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < v; ++j) {
        const double target = (j == tg[i] ? 1.0 - epsilon : 0.0) + uniform;
        gl[i * v + j] += g * (probs[i * v + j] - target);
      }
  });
}

}  // namespace latsa
