#include "molingo/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "molingo/kernels.hpp"
#include "molingo/kinematics.hpp"

namespace molingo::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

Var make_op(Tensor value, const std::vector<Var>& parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool need = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    if (need) {
      node->requires_grad = true;
      for (const auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it takes no gradient.
Tensor* parent_grad(Node& out, std::size_t i) {
  Node& p = *out.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const Tensor& parent_value(Node& out, std::size_t i) { return out.parents[i]->value; }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root) {
  require(root.numel() == 1, "backward: root must be a single element, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  return make_op(std::move(y), {a, b}, [](Node& out) {
    for (std::size_t p = 0; p < 2; ++p)
      if (Tensor* g = parent_grad(out, p))
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += out.grad[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  return make_op(std::move(y), {a, b}, [](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += out.grad[i];
    if (Tensor* g = parent_grad(out, 1))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= out.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  return make_op(std::move(y), {a, b}, [](Node& out) {
    const Tensor& av = parent_value(out, 0);
    const Tensor& bv = parent_value(out, 1);
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += out.grad[i] * bv[i];
    if (Tensor* g = parent_grad(out, 1))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += out.grad[i] * av[i];
  });
}

Var scale(const Var& x, double c) {
  Tensor y = x.value();
  for (auto& v : y.data()) v *= c;
  return make_op(std::move(y), {x}, [c](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += c * out.grad[i];
  });
}

Var add_scalar(const Var& x, double c) {
  Tensor y = x.value();
  for (auto& v : y.data()) v += c;
  return make_op(std::move(y), {x}, [](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += out.grad[i];
  });
}

Var mul_scalar_var(const Var& x, const Var& s) {
  require(s.numel() == 1, "mul_scalar_var: scalar operand must have one element");
  const double sv = s.item();
  Tensor y = x.value();
  for (auto& v : y.data()) v *= sv;
  return make_op(std::move(y), {x, s}, [](Node& out) {
    const Tensor& xv = parent_value(out, 0);
    const double sv = parent_value(out, 1).item();
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += sv * out.grad[i];
    if (Tensor* g = parent_grad(out, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.numel(); ++i) acc += out.grad[i] * xv[i];
      (*g)[0] += acc;
    }
  });
}

Var silu(const Var& x) {
  Tensor y(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xv[i] / (1.0 + std::exp(-xv[i]));
  return make_op(std::move(y), {x}, [](Node& out) {
    const Tensor& xv = parent_value(out, 0);
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xv[i]));
        (*g)[i] += out.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
      }
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(const Var& x) {
  Tensor y(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double v = xv[i];
    y[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return make_op(std::move(y), {x}, [](Node& out) {
    const Tensor& xv = parent_value(out, 0);
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) {
        const double v = xv[i];
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        (*g)[i] += out.grad[i] * d;
      }
  });
}

Var exp(const Var& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::exp(x.value()[i]);
  return make_op(std::move(y), {x}, [](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += out.grad[i] * out.value[i];
  });
}

Var square(const Var& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] * x.value()[i];
  return make_op(std::move(y), {x}, [](Node& out) {
    const Tensor& xv = parent_value(out, 0);
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += 2.0 * xv[i] * out.grad[i];
  });
}

Var add_row(const Var& x, const Var& row) {
  const std::size_t cols = x.value().cols();
  require(row.numel() == cols, "add_row: row length " + std::to_string(row.numel()) + " vs cols " +
                                   std::to_string(cols));
  Tensor y = x.value();
  const std::size_t rows = y.rows();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += row.value()[c];
  return make_op(std::move(y), {x, row}, [rows, cols](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += out.grad[i];
    if (Tensor* g = parent_grad(out, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*g)[c] += out.grad[r * cols + c];
  });
}

Var mul_row(const Var& x, const Var& row) {
  const std::size_t cols = x.value().cols();
  require(row.numel() == cols, "mul_row: row length mismatch");
  Tensor y = x.value();
  const std::size_t rows = y.rows();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] *= row.value()[c];
  return make_op(std::move(y), {x, row}, [rows, cols](Node& out) {
    const Tensor& xv = parent_value(out, 0);
    const Tensor& rv = parent_value(out, 1);
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*g)[r * cols + c] += out.grad[r * cols + c] * rv[c];
    if (Tensor* g = parent_grad(out, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*g)[c] += out.grad[r * cols + c] * xv[r * cols + c];
  });
}

Var matmul(const Var& x, const Var& w) {
  require(w.shape().size() == 2, "matmul: weight must be 2-D");
  const std::size_t k = w.shape()[0];
  const std::size_t n = w.shape()[1];
  require(x.value().cols() == k, "matmul: inner dim " + std::to_string(x.value().cols()) + " vs " +
                                     std::to_string(k));
  const std::size_t m = x.value().rows();
  Shape ys = x.shape();
  ys.back() = n;
  Tensor y(ys);
  kernels::gemm(false, false, m, n, k, x.value().ptr(), k, w.value().ptr(), n, y.ptr(), n, false);
  return make_op(std::move(y), {x, w}, [m, n, k](Node& out) {
    const Tensor& xv = parent_value(out, 0);
    const Tensor& wv = parent_value(out, 1);
    if (Tensor* g = parent_grad(out, 0))
      kernels::gemm(false, true, m, k, n, out.grad.ptr(), n, wv.ptr(), n, g->ptr(), k, true);
    if (Tensor* g = parent_grad(out, 1))
      kernels::gemm(true, false, k, n, m, xv.ptr(), k, out.grad.ptr(), n, g->ptr(), n, true);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul_nt: operands must be 2-D");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  require(b.shape()[1] == k, "matmul_nt: inner dim mismatch");
  Tensor y({m, n});
  kernels::gemm(false, true, m, n, k, a.value().ptr(), k, b.value().ptr(), k, y.ptr(), n, false);
  return make_op(std::move(y), {a, b}, [m, n, k](Node& out) {
    const Tensor& av = parent_value(out, 0);
    const Tensor& bv = parent_value(out, 1);
    if (Tensor* g = parent_grad(out, 0))
      kernels::gemm(false, false, m, k, n, out.grad.ptr(), n, bv.ptr(), k, g->ptr(), k, true);
    if (Tensor* g = parent_grad(out, 1))
      kernels::gemm(true, false, n, k, m, out.grad.ptr(), n, av.ptr(), k, g->ptr(), k, true);
  });
}

Var bmm(const Var& a, const Var& b, bool trans_b) {
  require(a.shape().size() == 3 && b.shape().size() == 3, "bmm: operands must be 3-D");
  const std::size_t groups = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  require(b.shape()[0] == groups, "bmm: group mismatch");
  const std::size_t n = trans_b ? b.shape()[1] : b.shape()[2];
  require((trans_b ? b.shape()[2] : b.shape()[1]) == k, "bmm: inner dim mismatch");
  Tensor y({groups, m, n});
  const double* ap = a.value().ptr();
  const double* bp = b.value().ptr();
  double* yp = y.ptr();
#pragma omp parallel for schedule(static) if (groups * m * n * k >= (1u << 16))
  for (std::size_t g = 0; g < groups; ++g)
    kernels::gemm(false, trans_b, m, n, k, ap + g * m * k, k, bp + g * k * n, trans_b ? k : n,
                  yp + g * m * n, n, false);
  return make_op(std::move(y), {a, b}, [groups, m, n, k, trans_b](Node& out) {
    const double* ap = parent_value(out, 0).ptr();
    const double* bp = parent_value(out, 1).ptr();
    const double* gp = out.grad.ptr();
    Tensor* ga = parent_grad(out, 0);
    Tensor* gb = parent_grad(out, 1);
#pragma omp parallel for schedule(static) if (groups * m * n * k >= (1u << 16))
    for (std::size_t g = 0; g < groups; ++g) {
      const double* gg = gp + g * m * n;
      const double* ag = ap + g * m * k;
      const double* bg = bp + g * k * n;
      if (ga) {
        if (trans_b)
          kernels::gemm(false, false, m, k, n, gg, n, bg, k, ga->ptr() + g * m * k, k, true);
        else
          kernels::gemm(false, true, m, k, n, gg, n, bg, n, ga->ptr() + g * m * k, k, true);
      }
      if (gb) {
        if (trans_b)
          kernels::gemm(true, false, n, k, m, gg, n, ag, k, gb->ptr() + g * k * n, k, true);
        else
          kernels::gemm(true, false, k, n, m, ag, k, gg, n, gb->ptr() + g * k * n, n, true);
      }
    }
  });
}

Var masked_softmax(const Var& x, const std::vector<std::uint8_t>* key_mask, std::size_t heads) {
  require(x.shape().size() == 3, "masked_softmax: expects [G, M, N]");
  const std::size_t groups = x.shape()[0], m = x.shape()[1], n = x.shape()[2];
  if (key_mask) {
    require(heads > 0 && groups % heads == 0, "masked_softmax: groups not divisible by heads");
    require(key_mask->size() == (groups / heads) * n, "masked_softmax: key mask size mismatch");
  }
  Tensor y(x.shape());
  kernels::softmax_rows(x.value().ptr(), y.ptr(), groups * m, n, key_mask ? key_mask->data() : nullptr,
                        heads * m);
  return make_op(std::move(y), {x}, [groups, m, n](Node& out) {
    Tensor* g = parent_grad(out, 0);
    if (!g) return;
    for (std::size_t r = 0; r < groups * m; ++r) {
      const double* yr = out.value.ptr() + r * n;
      const double* gr = out.grad.ptr() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
      double* gx = g->ptr() + r * n;
      for (std::size_t j = 0; j < n; ++j) gx[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm(const Var& x, double eps) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  Tensor y(x.shape());
  std::vector<double> mu(rows), rstd(rows);
  kernels::layer_norm_rows(x.value().ptr(), y.ptr(), mu.data(), rstd.data(), rows, cols, eps);
  return make_op(std::move(y), {x}, [rows, cols, rstd = std::move(rstd)](Node& out) {
    Tensor* g = parent_grad(out, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = out.value.ptr() + r * cols;
      const double* gr = out.grad.ptr() + r * cols;
      double mg = 0.0, mgy = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        mg += gr[j];
        mgy += gr[j] * yr[j];
      }
      mg /= static_cast<double>(cols);
      mgy /= static_cast<double>(cols);
      double* gx = g->ptr() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) gx[j] += rstd[r] * (gr[j] - mg - yr[j] * mgy);
    }
  });
}

namespace {

// out[(b*H+h), t, e] <-> in[b, t, h*dh+e]
void permute_heads(const double* src, double* dst, std::size_t b, std::size_t t, std::size_t h,
                   std::size_t dh, bool split, bool accumulate) {
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t hi = 0; hi < h; ++hi)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t e = 0; e < dh; ++e) {
          const std::size_t merged = (bi * t + ti) * h * dh + hi * dh + e;
          const std::size_t heads = ((bi * h + hi) * t + ti) * dh + e;
          const std::size_t from = split ? merged : heads;
          const std::size_t to = split ? heads : merged;
          dst[to] = accumulate ? dst[to] + src[from] : src[from];
        }
}

}  // namespace

Var split_heads(const Var& x, std::size_t heads) {
  require(x.shape().size() == 3 && x.shape()[2] % heads == 0, "split_heads: expects [B, T, H*dh]");
  const std::size_t b = x.shape()[0], t = x.shape()[1], dh = x.shape()[2] / heads;
  Tensor y({b * heads, t, dh});
  permute_heads(x.value().ptr(), y.ptr(), b, t, heads, dh, true, false);
  return make_op(std::move(y), {x}, [b, t, heads, dh](Node& out) {
    if (Tensor* g = parent_grad(out, 0)) permute_heads(out.grad.ptr(), g->ptr(), b, t, heads, dh, false, true);
  });
}

Var merge_heads(const Var& x, std::size_t heads) {
  require(x.shape().size() == 3 && x.shape()[0] % heads == 0, "merge_heads: expects [B*H, T, dh]");
  const std::size_t b = x.shape()[0] / heads, t = x.shape()[1], dh = x.shape()[2];
  Tensor y({b, t, heads * dh});
  permute_heads(x.value().ptr(), y.ptr(), b, t, heads, dh, false, false);
  return make_op(std::move(y), {x}, [b, t, heads, dh](Node& out) {
    if (Tensor* g = parent_grad(out, 0)) permute_heads(out.grad.ptr(), g->ptr(), b, t, heads, dh, true, true);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return make_op(std::move(y), {x}, [](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += out.grad[i];
  });
}

Var slice_cols(const Var& x, std::size_t start, std::size_t len) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  require(start + len <= cols, "slice_cols: range out of bounds");
  Shape ys = x.shape();
  ys.back() = len;
  Tensor y(ys);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.value().ptr() + r * cols + start, len, y.ptr() + r * len);
  return make_op(std::move(y), {x}, [rows, cols, start, len](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < len; ++c) (*g)[r * cols + start + c] += out.grad[r * len + c];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require(p.value().rows() == rows, "concat_cols: row count mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Shape ys = parts[0].shape();
  ys.back() = total;
  Tensor y(ys);
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[i].value().ptr() + r * widths[i], widths[i], y.ptr() + r * total + off);
    off += widths[i];
  }
  return make_op(std::move(y), parts, [rows, total, widths](Node& out) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (Tensor* g = parent_grad(out, i))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[i]; ++c) (*g)[r * widths[i] + c] += out.grad[r * total + off + c];
      off += widths[i];
    }
  });
}

Var gather_rows(const Var& x, const std::vector<std::size_t>& rows) {
  const std::size_t n = x.value().rows(), cols = x.value().cols();
  Tensor y({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < n, "gather_rows: index out of range");
    std::copy_n(x.value().ptr() + rows[i] * cols, cols, y.ptr() + i * cols);
  }
  return make_op(std::move(y), {x}, [rows, cols](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < cols; ++c) (*g)[rows[i] * cols + c] += out.grad[i * cols + c];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s), {x}, [](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (auto& v : g->data()) v += out.grad[0];
  });
}

Var mean(const Var& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Var mse(const Var& a, const Var& b) {
  require_same(a, b, "mse");
  const std::size_t n = a.numel();
  require(n > 0, "mse: empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return make_op(Tensor::scalar(s / static_cast<double>(n)), {a, b}, [n](Node& out) {
    const Tensor& av = parent_value(out, 0);
    const Tensor& bv = parent_value(out, 1);
    const double c = 2.0 * out.grad[0] / static_cast<double>(n);
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t i = 0; i < n; ++i) (*g)[i] += c * (av[i] - bv[i]);
    if (Tensor* g = parent_grad(out, 1))
      for (std::size_t i = 0; i < n; ++i) (*g)[i] -= c * (av[i] - bv[i]);
  });
}

std::size_t conv_output_length(std::size_t length, const ConvSpec& spec) {
  const std::size_t span = (spec.kernel - 1) * spec.dilation + 1;
  if (length + spec.left_pad < span) return 0;
  return (length + spec.left_pad - span) / spec.stride + 1;
}

Var conv1d(const Var& x, const Var& w, const Var& bias, const ConvSpec& spec) {
  require(x.shape().size() == 3, "conv1d: input must be [B, T, C]");
  const std::size_t batch = x.shape()[0], len = x.shape()[1], cin = x.shape()[2];
  const std::size_t taps = spec.kernel * cin;
  require(w.shape().size() == 2 && w.shape()[0] == taps,
          "conv1d: weight must be [K*Cin, Cout], got " + shape_str(w.shape()));
  const std::size_t cout = w.shape()[1];
  const std::size_t olen = conv_output_length(len, spec);
  require(olen > 0, "conv1d: input too short");

  // Column matrix [B*Tout, K*Cin]; source row -1 marks a zero pad.
  std::vector<long> src(batch * olen * spec.kernel);
  for (std::size_t o = 0; o < olen; ++o)
    for (std::size_t k = 0; k < spec.kernel; ++k) {
      const long idx = static_cast<long>(o * spec.stride + k * spec.dilation) - static_cast<long>(spec.left_pad);
      const long s = idx < 0 ? (spec.replicate ? 0 : -1) : idx;
      for (std::size_t b = 0; b < batch; ++b)
        src[(b * olen + o) * spec.kernel + k] = s < 0 ? -1 : static_cast<long>(b * len) + s;
    }
  Tensor col({batch * olen, taps});
  const double* xp = x.value().ptr();
  for (std::size_t r = 0; r < batch * olen; ++r)
    for (std::size_t k = 0; k < spec.kernel; ++k) {
      const long s = src[r * spec.kernel + k];
      if (s >= 0) std::copy_n(xp + s * cin, cin, col.ptr() + r * taps + k * cin);
    }

  Tensor y({batch, olen, cout});
  kernels::gemm(false, false, batch * olen, cout, taps, col.ptr(), taps, w.value().ptr(), cout, y.ptr(), cout,
                false);
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias) {
    require(bias.numel() == cout, "conv1d: bias size mismatch");
    for (std::size_t r = 0; r < batch * olen; ++r)
      for (std::size_t c = 0; c < cout; ++c) y[r * cout + c] += bias.value()[c];
  }
  std::vector<Var> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_op(std::move(y), parents,
                 [batch, olen, cin, cout, taps, kernel = spec.kernel, has_bias, src = std::move(src),
                  col = std::move(col)](Node& out) {
                   const std::size_t rows = batch * olen;
                   const Tensor& wv = parent_value(out, 1);
                   if (Tensor* gw = parent_grad(out, 1))
                     kernels::gemm(true, false, taps, cout, rows, col.ptr(), taps, out.grad.ptr(), cout, gw->ptr(),
                                   cout, true);
                   if (has_bias)
                     if (Tensor* gb = parent_grad(out, 2))
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cout; ++c) (*gb)[c] += out.grad[r * cout + c];
                   if (Tensor* gx = parent_grad(out, 0)) {
                     Tensor gcol({rows, taps});
                     kernels::gemm(false, true, rows, taps, cout, out.grad.ptr(), cout, wv.ptr(), cout, gcol.ptr(),
                                   taps, false);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t k = 0; k < kernel; ++k) {
                         const long s = src[r * kernel + k];
                         if (s < 0) continue;
                         double* dst = gx->ptr() + s * cin;
                         const double* from = gcol.ptr() + r * taps + k * cin;
                         for (std::size_t c = 0; c < cin; ++c) dst[c] += from[c];
                       }
                   }
                 });
}

Var upsample2(const Var& x) {
  require(x.shape().size() == 3, "upsample2: input must be [B, T, C]");
  const std::size_t b = x.shape()[0], t = x.shape()[1], c = x.shape()[2];
  Tensor y({b, 2 * t, c});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti < 2 * t; ++ti)
      std::copy_n(x.value().ptr() + (bi * t + ti / 2) * c, c, y.ptr() + (bi * 2 * t + ti) * c);
  return make_op(std::move(y), {x}, [b, t, c](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ti = 0; ti < 2 * t; ++ti)
          for (std::size_t ci = 0; ci < c; ++ci)
            (*g)[(bi * t + ti / 2) * c + ci] += out.grad[(bi * 2 * t + ti) * c + ci];
  });
}

Var temporal_diff(const Var& x) {
  require(x.shape().size() == 3 && x.shape()[1] >= 2, "temporal_diff: expects [B, T>=2, F]");
  const std::size_t b = x.shape()[0], t = x.shape()[1], f = x.shape()[2];
  Tensor y({b, t - 1, f});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti + 1 < t; ++ti)
      for (std::size_t fi = 0; fi < f; ++fi)
        y[(bi * (t - 1) + ti) * f + fi] = x.value()[(bi * t + ti + 1) * f + fi] - x.value()[(bi * t + ti) * f + fi];
  return make_op(std::move(y), {x}, [b, t, f](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ti = 0; ti + 1 < t; ++ti)
          for (std::size_t fi = 0; fi < f; ++fi) {
            const double gv = out.grad[(bi * (t - 1) + ti) * f + fi];
            (*g)[(bi * t + ti + 1) * f + fi] += gv;
            (*g)[(bi * t + ti) * f + fi] -= gv;
          }
  });
}

Var mean_pool_time(const Var& x, const std::vector<std::size_t>& lengths) {
  require(x.shape().size() == 3, "mean_pool_time: expects [B, T, C]");
  const std::size_t b = x.shape()[0], t = x.shape()[1], c = x.shape()[2];
  require(lengths.size() == b, "mean_pool_time: one length per batch item required");
  Tensor y({b, c});
  for (std::size_t bi = 0; bi < b; ++bi) {
    require(lengths[bi] >= 1 && lengths[bi] <= t, "mean_pool_time: invalid length");
    for (std::size_t ti = 0; ti < lengths[bi]; ++ti)
      for (std::size_t ci = 0; ci < c; ++ci) y[bi * c + ci] += x.value()[(bi * t + ti) * c + ci];
    for (std::size_t ci = 0; ci < c; ++ci) y[bi * c + ci] /= static_cast<double>(lengths[bi]);
  }
  return make_op(std::move(y), {x}, [b, t, c, lengths](Node& out) {
    if (Tensor* g = parent_grad(out, 0))
      for (std::size_t bi = 0; bi < b; ++bi) {
        const double inv = 1.0 / static_cast<double>(lengths[bi]);
        for (std::size_t ti = 0; ti < lengths[bi]; ++ti)
          for (std::size_t ci = 0; ci < c; ++ci) (*g)[(bi * t + ti) * c + ci] += out.grad[bi * c + ci] * inv;
      }
  });
}

Var row_cosine(const Var& a, const Var& b, double eps) {
  require_same(a, b, "row_cosine");
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  Tensor y({rows});
  std::vector<double> na(rows), nb(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = a.value()[r * cols + c], z = b.value()[r * cols + c];
      dot += x * z;
      sa += x * x;
      sb += z * z;
    }
    na[r] = std::sqrt(sa);
    nb[r] = std::sqrt(sb);
    y[r] = dot / (std::max(na[r], eps) * std::max(nb[r], eps));
  }
  return make_op(std::move(y), {a, b}, [rows, cols, eps, na = std::move(na), nb = std::move(nb)](Node& out) {
    const Tensor& av = parent_value(out, 0);
    const Tensor& bv = parent_value(out, 1);
    Tensor* ga = parent_grad(out, 0);
    Tensor* gb = parent_grad(out, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const double ca = std::max(na[r], eps), cb = std::max(nb[r], eps);
      const double cos = out.value[r], g = out.grad[r];
      // Clamped norms are constants, so their radial term drops out.
      const double ka = na[r] > eps ? cos / (ca * ca) : 0.0;
      const double kb = nb[r] > eps ? cos / (cb * cb) : 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double x = av[r * cols + c], z = bv[r * cols + c];
        if (ga) (*ga)[r * cols + c] += g * (z / (ca * cb) - ka * x);
        if (gb) (*gb)[r * cols + c] += g * (x / (ca * cb) - kb * z);
      }
    }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  Tensor y(x.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x.value()[r * cols + c] * x.value()[r * cols + c];
    norms[r] = std::sqrt(s);
    const double inv = 1.0 / std::max(norms[r], eps);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = x.value()[r * cols + c] * inv;
  }
  return make_op(std::move(y), {x}, [rows, cols, eps, norms = std::move(norms)](Node& out) {
    Tensor* g = parent_grad(out, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double n = std::max(norms[r], eps);
      double dot = 0.0;
      if (norms[r] > eps)
        for (std::size_t c = 0; c < cols; ++c) dot += out.grad[r * cols + c] * out.value[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        (*g)[r * cols + c] += (out.grad[r * cols + c] - out.value[r * cols + c] * dot) / n;
    }
  });
}

Var cross_entropy_rows(const Var& logits, const std::vector<std::size_t>& targets) {
  require(logits.shape().size() == 2, "cross_entropy_rows: logits must be 2-D");
  const std::size_t rows = logits.shape()[0], cols = logits.shape()[1];
  require(targets.size() == rows, "cross_entropy_rows: one target per row required");
  Tensor probs({rows, cols});
  kernels::softmax_rows(logits.value().ptr(), probs.ptr(), rows, cols, nullptr, 1);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    require(targets[r] < cols, "cross_entropy_rows: target out of range");
    // log-softmax computed directly for accuracy
    double mx = logits.value()[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, logits.value()[r * cols + c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(logits.value()[r * cols + c] - mx);
    loss -= logits.value()[r * cols + targets[r]] - mx - std::log(s);
  }
  loss /= static_cast<double>(rows);
  return make_op(Tensor::scalar(loss), {logits},
                 [rows, cols, targets, probs = std::move(probs)](Node& out) {
                   Tensor* g = parent_grad(out, 0);
                   if (!g) return;
                   const double c0 = out.grad[0] / static_cast<double>(rows);
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t c = 0; c < cols; ++c)
                       (*g)[r * cols + c] += c0 * (probs[r * cols + c] - (c == targets[r] ? 1.0 : 0.0));
                 });
}

Var joint_positions(const Var& frames, std::size_t joints, double fps) {
  require(frames.shape().size() == 3, "joint_positions: expects [B, T, D]");
  const std::size_t b = frames.shape()[0], t = frames.shape()[1], d = frames.shape()[2];
  require(d == kinematics::feature_dim(joints), "joint_positions: feature dim " + std::to_string(d) +
                                                     " does not match " + std::to_string(joints) + " joints");
  Tensor y({b, t, joints * 3});
  for (std::size_t bi = 0; bi < b; ++bi)
    kinematics::integrate(frames.value().ptr() + bi * t * d, t, joints, fps, y.ptr() + bi * t * joints * 3);
  return make_op(std::move(y), {frames}, [b, t, d, joints, fps](Node& out) {
    Tensor* g = parent_grad(out, 0);
    if (!g) return;
    const Tensor& fv = parent_value(out, 0);
    for (std::size_t bi = 0; bi < b; ++bi)
      kinematics::integrate_backward(fv.ptr() + bi * t * d, out.grad.ptr() + bi * t * joints * 3, t, joints, fps,
                                     g->ptr() + bi * t * d);
  });
}

}  // namespace molingo::ag
