#include "flowerase/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "flowerase/error.hpp"

namespace flowerase::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

Tensor make_op(Shape shape, std::vector<double> data, const char* op,
               std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const NodePtr& p) { return p->requires_grad; });
  if (track) {
    n->requires_grad = true;
    n->op = op;
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return Tensor::from_node(std::move(n));
}

void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(r) + ", got " +
                         shape_str(a.shape()));
  }
}

// Elementwise binary op with scalar-tensor broadcasting only.
template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel_of(out_shape);
  const auto& av = a.node()->data;
  const auto& bv = b.node()->data;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  return make_op(out_shape, std::move(out), op, {a.node(), b.node()},
                 [a_scalar, b_scalar, da, db](Node& self) {
                   Node& an = *self.inputs[0];
                   Node& bn = *self.inputs[1];
                   const std::size_t m = self.data.size();
                   if (an.requires_grad) {
                     auto& g = an.ensure_grad();
                     for (std::size_t i = 0; i < m; ++i) {
                       const double x = an.data[a_scalar ? 0 : i];
                       const double y = bn.data[b_scalar ? 0 : i];
                       g[a_scalar ? 0 : i] += self.grad[i] * da(x, y, self.data[i]);
                     }
                   }
                   if (bn.requires_grad) {
                     auto& g = bn.ensure_grad();
                     for (std::size_t i = 0; i < m; ++i) {
                       const double x = an.data[a_scalar ? 0 : i];
                       const double y = bn.data[b_scalar ? 0 : i];
                       g[b_scalar ? 0 : i] += self.grad[i] * db(x, y, self.data[i]);
                     }
                   }
                 });
}

// Elementwise unary op; dfn(x, y) returns dy/dx.
template <typename F, typename D>
Tensor unary(const Tensor& a, const char* op, F f, D dfn) {
  const auto& av = a.node()->data;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_op(a.shape(), std::move(out), op, {a.node()}, [dfn](Node& self) {
    Node& an = *self.inputs[0];
    auto& g = an.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) g[i] += self.grad[i] * dfn(an.data[i], self.data[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel_of(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(data.size()) +
                         " values");
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->data, node_->requires_grad);
  return t;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.node()->data.data(), m, k) * ConstMap(b.node()->data.data(), k, n);
  return make_op({m, n}, std::move(out), "matmul", {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    ConstMap dc(self.grad.data(), m, n);
    if (an.requires_grad) {
      MutMap(an.ensure_grad().data(), m, k).noalias() += dc * ConstMap(bn.data.data(), k, n).transpose();
    }
    if (bn.requires_grad) {
      MutMap(bn.ensure_grad().data(), k, n).noalias() += ConstMap(an.data.data(), m, k).transpose() * dc;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
  if (w.dim(1) != k) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(x.node()->data.data(), m, k) * ConstMap(w.node()->data.data(), n, k).transpose();
  return make_op({m, n}, std::move(out), "linear", {x.node(), w.node()}, [m, k, n](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    ConstMap dc(self.grad.data(), m, n);
    if (xn.requires_grad) {
      MutMap(xn.ensure_grad().data(), m, k).noalias() += dc * ConstMap(wn.data.data(), n, k);
    }
    if (wn.requires_grad) {
      MutMap(wn.ensure_grad().data(), n, k).noalias() += dc.transpose() * ConstMap(xn.data.data(), m, k);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  MutMap(out.data(), c, r) = ConstMap(a.node()->data.data(), r, c).transpose();
  return make_op({c, r}, std::move(out), "transpose", {a.node()}, [r, c](Node& self) {
    Node& an = *self.inputs[0];
    MutMap(an.ensure_grad().data(), r, c) += ConstMap(self.grad.data(), c, r).transpose();
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw DimensionError("dot: length mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto& av = a.node()->data;
  const auto& bv = b.node()->data;
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return make_op({1}, {s}, "dot", {a.node(), b.node()}, [](Node& self) {
    Node& an = *self.inputs[0];
    Node& bn = *self.inputs[1];
    const double g = self.grad[0];
    if (an.requires_grad) {
      auto& ga = an.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bn.data[i];
    }
    if (bn.requires_grad) {
      auto& gb = bn.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * an.data[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  const auto& av = a.node()->data;
  const double s = std::accumulate(av.begin(), av.end(), 0.0);
  return make_op({1}, {s}, "sum", {a.node()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("sum_axis: axis out of range for " + shape_str(a.shape()));
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  const auto& av = a.node()->data;
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.extent + e) * s.inner + i];
  return make_op(out_shape, std::move(out), "sum_axis", {a.node()}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Tensor l2_norm_squared(const Tensor& a) {
  const auto& av = a.node()->data;
  double s = 0.0;
  for (double x : av) s += x * x;
  return make_op({1}, {s}, "l2_norm_squared", {a.node()}, [](Node& self) {
    Node& an = *self.inputs[0];
    auto& g = an.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * an.data[i] * self.grad[0];
  });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(a.shape()));
  const AxisSplit s = split_at(a.shape(), axis);
  const auto& av = a.node()->data;
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = av[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, av[base + e * s.inner]);
      double z = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double v = std::exp(av[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        z += v;
      }
      const double inv = 1.0 / z;
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] *= inv;
    }
  }
  return make_op(a.shape(), std::move(out), "softmax", {a.node()}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double inner = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) inner += dy[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t k = base + e * s.inner;
          g[k] += y[k] * (dy[k] - inner);
        }
      }
    }
  });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  require_rank(a, 2, "layer_norm_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto& av = a.node()->data;
  std::vector<double> out(av.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (x[c] - mu) * inv_std[r];
  }
  return make_op(a.shape(), std::move(out), "layer_norm_rows", {a.node()},
                 [rows, cols, inv_std = std::move(inv_std)](Node& self) {
                   auto& g = self.inputs[0]->ensure_grad();
                   const double n = static_cast<double>(cols);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* y = self.data.data() + r * cols;
                     const double* dy = self.grad.data() + r * cols;
                     double mean_dy = 0.0, mean_dyy = 0.0;
                     for (std::size_t c = 0; c < cols; ++c) {
                       mean_dy += dy[c];
                       mean_dyy += dy[c] * y[c];
                     }
                     mean_dy /= n;
                     mean_dyy /= n;
                     for (std::size_t c = 0; c < cols; ++c)
                       g[r * cols + c] += inv_std[r] * (dy[c] - mean_dy - y[c] * mean_dyy);
                   }
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return make_op(std::move(shape), a.node()->data, "reshape", {a.node()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range for " + shape_str(ref));
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != ref[d]) {
        throw DimensionError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(s));
      }
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::shared_ptr<Node>> inputs;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].node()->data;
    const std::size_t run = extents[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * run, run, out.data() + (o * s.extent + offset) * s.inner);
    offset += extents[k];
    inputs.push_back(parts[k].node());
  }
  return make_op(std::move(out_shape), std::move(out), "concat", std::move(inputs),
                 [s, extents](Node& self) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                     Node& in = *self.inputs[k];
                     const std::size_t run = extents[k] * s.inner;
                     if (in.requires_grad) {
                       auto& g = in.ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         const double* src = self.grad.data() + (o * s.extent + off) * s.inner;
                         for (std::size_t j = 0; j < run; ++j) g[o * run + j] += src[j];
                       }
                     }
                     off += extents[k];
                   }
                 });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t end) {
  if (axis >= a.rank()) throw DimensionError("slice: axis out of range for " + shape_str(a.shape()));
  if (start >= end || end > a.dim(axis)) {
    throw IndexError("slice [" + std::to_string(start) + ", " + std::to_string(end) + ") out of range for axis " +
                     std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  const AxisSplit s = split_at(a.shape(), axis);
  const std::size_t len = end - start;
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  const auto& av = a.node()->data;
  std::vector<double> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(av.data() + (o * s.extent + start) * s.inner, len * s.inner, out.data() + o * len * s.inner);
  return make_op(std::move(out_shape), std::move(out), "slice", {a.node()}, [s, start, len](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = g.data() + (o * s.extent + start) * s.inner;
      const double* src = self.grad.data() + o * len * s.inner;
      for (std::size_t j = 0; j < len * s.inner; ++j) dst[j] += src[j];
    }
  });
}

Tensor repeat_rows(const Tensor& a, std::size_t n) {
  require_rank(a, 2, "repeat_rows");
  if (a.dim(0) != 1) throw DimensionError("repeat_rows expects [1, D], got " + shape_str(a.shape()));
  const std::size_t d = a.dim(1);
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(a.node()->data.data(), d, out.data() + r * d);
  return make_op({n, d}, std::move(out), "repeat_rows", {a.node()}, [n, d](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
  });
}

Tensor gather(const Tensor& a, std::span<const std::size_t> indices, Shape shape) {
  if (numel_of(shape) != indices.size()) {
    throw DimensionError("gather: " + std::to_string(indices.size()) + " indices for shape " + shape_str(shape));
  }
  const auto& av = a.node()->data;
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.size()) throw IndexError("gather index " + std::to_string(indices[i]) + " out of range");
    out[i] = av[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_op(std::move(shape), std::move(out), "gather", {a.node()}, [idx = std::move(idx)](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

Tensor mask_last_axis(const Tensor& a, std::span<const std::size_t> columns) {
  if (a.rank() == 0) throw DimensionError("mask_last_axis on rank-0 tensor");
  const std::size_t last = a.shape().back();
  std::vector<bool> masked(last, false);
  for (auto c : columns) {
    if (c >= last) throw IndexError("column " + std::to_string(c) + " out of range " + std::to_string(last));
    masked[c] = true;
  }
  std::vector<double> out = a.node()->data;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (masked[i % last]) out[i] = 0.0;
  return make_op(a.shape(), std::move(out), "mask_last_axis", {a.node()},
                 [masked = std::move(masked), last](Node& self) {
                   auto& g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if (!masked[i % last]) g[i] += self.grad[i];
                 });
}

}  // namespace flowerase::ag
