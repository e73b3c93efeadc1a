#include "rainrecon/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "rainrecon/errors.hpp"

namespace rainrecon::ag {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatR>;
using MutMap = Eigen::Map<MatR>;

Var make(Shape shape, std::vector<double> value, std::initializer_list<Var> parents,
         std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

Var make_many(Shape shape, std::vector<double> value, const std::vector<Var>& parents,
              std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

// Parent i's gradient buffer, or nullptr when it takes no gradient.
double* pgrad(Node& n, std::size_t i) {
  Node& p = *n.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_string(a.shape()));
  }
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  std::vector<double> out(a.size());
  const auto in = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make(a.shape(), std::move(out), {a}, [dfdx](Node& n) {
    double* ga = pgrad(n, 0);
    if (!ga) return;
    const auto& x = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * dfdx(x[i], n.value[i]);
  });
}

}  // namespace

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << "]";
  return out.str();
}

double Var::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + shape_string(shape()));
  return node_->value[0];
}

Var constant(Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) {
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " +
                     shape_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Var(std::move(n));
}

Var constant_scalar(double v) { return constant({1}, {v}); }

Var zeros(Shape shape) {
  const std::size_t n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Var parameter(Shape shape, std::vector<double> values) {
  Var v = constant(std::move(shape), std::move(values));
  v.node()->requires_grad = true;
  return v;
}

void backward(const Var& root) {
  if (root.size() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
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
  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = pgrad(n, k)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& n) {
    if (double* g = pgrad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
    if (double* g = pgrad(n, 1)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& n) {
    const auto& x = n.parents[0]->value;
    const auto& y = n.parents[1]->value;
    if (double* g = pgrad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * y[i];
    }
    if (double* g = pgrad(n, 1)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * x[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.size() != 1) throw ShapeError("scale_by: factor must be a single element");
  const double f = s.value()[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * a.value()[i];
  return make(a.shape(), std::move(out), {a, s}, [](Node& n) {
    const auto& x = n.parents[0]->value;
    const double f = n.parents[1]->value[0];
    if (double* g = pgrad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += f * n.grad[i];
    }
    if (double* g = pgrad(n, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * x[i];
      g[0] += acc;
    }
  });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var one_minus(const Var& a) {
  return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var elu(const Var& a, double alpha) {
  return unary(a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
               [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var softplus(const Var& a) {
  return unary(a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
               [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  return make({1}, {s}, {a}, [](Node& n) {
    if (double* g = pgrad(n, 0)) {
      const std::size_t m = n.parents[0]->value.size();
      for (std::size_t i = 0; i < m; ++i) g[i] += n.grad[0];
    }
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> out(a.value().begin(), a.value().end());
  return make(std::move(shape), std::move(out), {a}, [](Node& n) {
    if (double* g = pgrad(n, 0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var gather(const Var& a, std::vector<std::size_t> index, Shape shape) {
  if (shape_size(shape) != index.size()) throw ShapeError("gather: index count does not match shape");
  std::vector<double> out(index.size());
  const auto in = a.value();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= in.size()) throw ShapeError("gather: index out of range");
    out[i] = in[index[i]];
  }
  return make(std::move(shape), std::move(out), {a}, [index = std::move(index)](Node& n) {
    if (double* g = pgrad(n, 0)) {
      for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += n.grad[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.value().data(), m, k) * ConstMap(b.value().data(), k, n);
  return make({m, n}, std::move(out), {a, b}, [m, k, n](Node& node) {
    ConstMap g(node.grad.data(), m, n);
    if (double* ga = pgrad(node, 0)) {
      MutMap(ga, m, k).noalias() += g * ConstMap(node.parents[1]->value.data(), k, n).transpose();
    }
    if (double* gb = pgrad(node, 1)) {
      MutMap(gb, k, n).noalias() += ConstMap(node.parents[0]->value.data(), m, k).transpose() * g;
    }
  });
}

Var matmul_bt(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul_bt");
  require_rank(b, 2, "matmul_bt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_bt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.value().data(), m, k) * ConstMap(b.value().data(), n, k).transpose();
  return make({m, n}, std::move(out), {a, b}, [m, k, n](Node& node) {
    ConstMap g(node.grad.data(), m, n);
    if (double* ga = pgrad(node, 0)) {
      MutMap(ga, m, k).noalias() += g * ConstMap(node.parents[1]->value.data(), n, k);
    }
    if (double* gb = pgrad(node, 1)) {
      MutMap(gb, n, k).noalias() += g.transpose() * ConstMap(node.parents[0]->value.data(), m, k);
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) throw ShapeError("add_bias: bias length does not match columns");
  std::vector<double> out(x.value().begin(), x.value().end());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
  }
  return make(x.shape(), std::move(out), {x, bias}, [m, n](Node& node) {
    if (double* g = pgrad(node, 0)) {
      for (std::size_t i = 0; i < m * n; ++i) g[i] += node.grad[i];
    }
    if (double* g = pgrad(node, 1)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[j] += node.grad[i * n + j];
      }
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(parts[k].value().data() + i * w, w, out.data() + i * total + offsets[k]);
    }
  }
  return make_many({m, total}, std::move(out), parts, [m, total, offsets](Node& node) {
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      double* g = pgrad(node, k);
      if (!g) continue;
      const std::size_t w = node.parents[k]->shape[1];
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) g[i * w + j] += node.grad[i * total + offsets[k] + j];
      }
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape shape = parts[0].shape();
  const std::size_t row = parts[0].size() / std::max<std::size_t>(shape[0], 1);
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    if (tail != Shape(shape.begin() + 1, shape.end())) throw ShapeError("concat_rows: trailing shapes differ");
    offsets.push_back(rows * row);
    rows += p.dim(0);
  }
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(rows * row);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make_many(std::move(shape), std::move(out), parts, [offsets](Node& node) {
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      double* g = pgrad(node, k);
      if (!g) continue;
      const std::size_t len = node.parents[k]->value.size();
      for (std::size_t i = 0; i < len; ++i) g[i] += node.grad[offsets[k] + i];
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin > end || end > a.dim(0)) throw ShapeError("slice_rows: bad range");
  const std::size_t row = a.dim(0) ? a.size() / a.dim(0) : 0;
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<double> out(a.value().begin() + begin * row, a.value().begin() + end * row);
  return make(std::move(shape), std::move(out), {a}, [off = begin * row](Node& node) {
    if (double* g = pgrad(node, 0)) {
      for (std::size_t i = 0; i < node.grad.size(); ++i) g[off + i] += node.grad[i];
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (begin > end || end > n) throw ShapeError("slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.value().data() + i * n + begin, w, out.data() + i * w);
  }
  return make({m, w}, std::move(out), {a}, [m, n, w, begin](Node& node) {
    if (double* g = pgrad(node, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += node.grad[i * w + j];
      }
    }
  });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> idx(m * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) idx[j * m + i] = i * n + j;
  }
  return gather(a, std::move(idx), {n, m});
}

Var softmax_rows(const Var& scores, std::span<const std::uint8_t> admissible) {
  require_rank(scores, 2, "softmax_rows");
  const std::size_t m = scores.dim(0), n = scores.dim(1);
  if (!admissible.empty() && admissible.size() != n) throw ShapeError("softmax_rows: mask length");
  std::vector<double> out(m * n, 0.0);
  const auto s = scores.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (admissible.empty() || admissible[j]) mx = std::max(mx, s[i * n + j]);
    }
    if (mx == -INFINITY) throw DomainError("softmax_rows: no admissible column");
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (admissible.empty() || admissible[j]) {
        out[i * n + j] = std::exp(s[i * n + j] - mx);
        z += out[i * n + j];
      }
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return make(scores.shape(), std::move(out), {scores}, [m, n](Node& node) {
    double* g = pgrad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = node.value.data() + i * n;
      const double* gy = node.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

namespace {

// col[(ci*k + ki)*k + kj, h*W + w] = x[ci, h + ki - pad, w + kj - pad]
void im2col(const double* x, std::size_t ci_n, std::size_t h_n, std::size_t w_n, std::size_t k,
            double* col) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h_n * w_n;
  for (std::size_t ci = 0; ci < ci_n; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* dst = col + ((ci * k + ki) * k + kj) * hw;
        for (std::size_t h = 0; h < h_n; ++h) {
          const long sh = static_cast<long>(h) + static_cast<long>(ki) - pad;
          for (std::size_t w = 0; w < w_n; ++w) {
            const long sw = static_cast<long>(w) + static_cast<long>(kj) - pad;
            dst[h * w_n + w] = (sh >= 0 && sh < static_cast<long>(h_n) && sw >= 0 &&
                                sw < static_cast<long>(w_n))
                                   ? x[(ci * h_n + sh) * w_n + sw]
                                   : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t ci_n, std::size_t h_n, std::size_t w_n, std::size_t k,
            double* x) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h_n * w_n;
  for (std::size_t ci = 0; ci < ci_n; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* src = col + ((ci * k + ki) * k + kj) * hw;
        for (std::size_t h = 0; h < h_n; ++h) {
          const long sh = static_cast<long>(h) + static_cast<long>(ki) - pad;
          if (sh < 0 || sh >= static_cast<long>(h_n)) continue;
          for (std::size_t w = 0; w < w_n; ++w) {
            const long sw = static_cast<long>(w) + static_cast<long>(kj) - pad;
            if (sw < 0 || sw >= static_cast<long>(w_n)) continue;
            x[(ci * h_n + sh) * w_n + sw] += src[h * w_n + w];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t nb = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != ci || weight.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel " + shape_string(weight.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  if (bias.defined() && bias.size() != co) throw ShapeError("conv2d: bias length");
  const std::size_t hw = h * w, kk = ci * k * k;
  std::vector<double> out(nb * co * hw);
  std::vector<double> col(k == 1 ? 0 : kk * hw);
  ConstMap wm(weight.value().data(), co, kk);
  for (std::size_t b = 0; b < nb; ++b) {
    const double* xb = x.value().data() + b * ci * hw;
    const double* cp = xb;
    if (k != 1) {
      im2col(xb, ci, h, w, k, col.data());
      cp = col.data();
    }
    MutMap y(out.data() + b * co * hw, co, hw);
    y.noalias() = wm * ConstMap(cp, kk, hw);
    if (bias.defined()) {
      for (std::size_t c = 0; c < co; ++c) y.row(c).array() += bias.value()[c];
    }
  }
  std::vector<Var> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_many({nb, co, h, w}, std::move(out), parents, [=](Node& node) {
    double* gx = pgrad(node, 0);
    double* gw = pgrad(node, 1);
    double* gbias = node.parents.size() > 2 ? pgrad(node, 2) : nullptr;
    const auto& xv = node.parents[0]->value;
    ConstMap wmat(node.parents[1]->value.data(), co, kk);
    std::vector<double> colbuf(k == 1 ? 0 : kk * hw);
    std::vector<double> dcol(gx && k != 1 ? kk * hw : 0);
    for (std::size_t b = 0; b < nb; ++b) {
      ConstMap g(node.grad.data() + b * co * hw, co, hw);
      if (gw) {
        const double* cp = xv.data() + b * ci * hw;
        if (k != 1) {
          im2col(cp, ci, h, w, k, colbuf.data());
          cp = colbuf.data();
        }
        MutMap(gw, co, kk).noalias() += g * ConstMap(cp, kk, hw).transpose();
      }
      if (gx) {
        if (k == 1) {
          MutMap(gx + b * ci * hw, ci, hw).noalias() += wmat.transpose() * g;
        } else {
          MutMap(dcol.data(), kk, hw).noalias() = wmat.transpose() * g;
          col2im(dcol.data(), ci, h, w, k, gx + b * ci * hw);
        }
      }
      if (gbias) {
        for (std::size_t c = 0; c < co; ++c) gbias[c] += g.row(c).sum();
      }
    }
  });
}

Var temporal_conv(const Var& x, const Var& kernel, const Var& bias) {
  require_rank(x, 4, "temporal_conv");
  require_rank(kernel, 2, "temporal_conv");
  const std::size_t t_n = x.dim(0), c_n = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t kt = kernel.dim(1);
  if (kernel.dim(0) != c_n || kt % 2 == 0) throw ShapeError("temporal_conv: kernel must be [C, odd kt]");
  if (bias.size() != c_n) throw ShapeError("temporal_conv: bias length");
  const long pad = static_cast<long>(kt / 2);
  const auto xv = x.value();
  const auto kv = kernel.value();
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < t_n; ++t) {
    for (std::size_t c = 0; c < c_n; ++c) {
      double* dst = out.data() + (t * c_n + c) * hw;
      std::fill(dst, dst + hw, bias.value()[c]);
      for (std::size_t j = 0; j < kt; ++j) {
        const long st = static_cast<long>(t) + static_cast<long>(j) - pad;
        if (st < 0 || st >= static_cast<long>(t_n)) continue;
        const double kc = kv[c * kt + j];
        const double* src = xv.data() + (st * c_n + c) * hw;
        for (std::size_t p = 0; p < hw; ++p) dst[p] += kc * src[p];
      }
    }
  }
  return make(x.shape(), std::move(out), {x, kernel, bias}, [=](Node& node) {
    double* gx = pgrad(node, 0);
    double* gk = pgrad(node, 1);
    double* gb = pgrad(node, 2);
    const auto& xv = node.parents[0]->value;
    const auto& kv = node.parents[1]->value;
    for (std::size_t t = 0; t < t_n; ++t) {
      for (std::size_t c = 0; c < c_n; ++c) {
        const double* g = node.grad.data() + (t * c_n + c) * hw;
        if (gb) {
          double s = 0.0;
          for (std::size_t p = 0; p < hw; ++p) s += g[p];
          gb[c] += s;
        }
        for (std::size_t j = 0; j < kt; ++j) {
          const long st = static_cast<long>(t) + static_cast<long>(j) - pad;
          if (st < 0 || st >= static_cast<long>(t_n)) continue;
          const std::size_t off = (st * c_n + c) * hw;
          if (gk) {
            double s = 0.0;
            for (std::size_t p = 0; p < hw; ++p) s += g[p] * xv[off + p];
            gk[c * kt + j] += s;
          }
          if (gx) {
            const double kc = kv[c * kt + j];
            for (std::size_t p = 0; p < hw; ++p) gx[off + p] += kc * g[p];
          }
        }
      }
    }
  });
}

Var avg_pool(const Var& x, std::size_t f) {
  require_rank(x, 4, "avg_pool");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (f == 0 || h % f != 0 || w % f != 0) {
    throw ShapeError("avg_pool: spatial extent " + shape_string(x.shape()) + " not divisible by " +
                     std::to_string(f));
  }
  const std::size_t ho = h / f, wo = w / f;
  const double inv = 1.0 / static_cast<double>(f * f);
  std::vector<double> out(nc * ho * wo, 0.0);
  const auto xv = x.value();
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        out[(c * ho + i / f) * wo + j / f] += xv[(c * h + i) * w + j] * inv;
      }
    }
  }
  return make({x.dim(0), x.dim(1), ho, wo}, std::move(out), {x}, [=](Node& node) {
    if (double* g = pgrad(node, 0)) {
      for (std::size_t c = 0; c < nc; ++c) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            g[(c * h + i) * w + j] += node.grad[(c * ho + i / f) * wo + j / f] * inv;
          }
        }
      }
    }
  });
}

Var upsample_nearest(const Var& x, std::size_t f) {
  require_rank(x, 4, "upsample_nearest");
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * f, wo = w * f;
  std::vector<std::size_t> idx(nc * ho * wo);
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) idx[(c * ho + i) * wo + j] = (c * h + i / f) * w + j / f;
    }
  }
  return gather(x, std::move(idx), {x.dim(0), x.dim(1), ho, wo});
}

Var add_spacetime(const Var& x, const Var& temporal, const Var& spatial) {
  require_rank(x, 4, "add_spacetime");
  const std::size_t t_n = x.dim(0), c_n = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (temporal.rank() != 2 || temporal.dim(1) != c_n || temporal.dim(0) < t_n) {
    throw ShapeError("add_spacetime: temporal table " + shape_string(temporal.shape()) +
                     " does not cover " + shape_string(x.shape()));
  }
  if (spatial.rank() != 2 || spatial.dim(1) != c_n || spatial.dim(0) != hw) {
    throw ShapeError("add_spacetime: spatial table " + shape_string(spatial.shape()) +
                     " does not match " + shape_string(x.shape()));
  }
  std::vector<double> out(x.value().begin(), x.value().end());
  const auto tv = temporal.value();
  const auto sv = spatial.value();
  for (std::size_t t = 0; t < t_n; ++t) {
    for (std::size_t c = 0; c < c_n; ++c) {
      double* dst = out.data() + (t * c_n + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) dst[p] += tv[t * c_n + c] + sv[p * c_n + c];
    }
  }
  return make(x.shape(), std::move(out), {x, temporal, spatial}, [=](Node& node) {
    double* gx = pgrad(node, 0);
    double* gt = pgrad(node, 1);
    double* gs = pgrad(node, 2);
    for (std::size_t t = 0; t < t_n; ++t) {
      for (std::size_t c = 0; c < c_n; ++c) {
        const double* g = node.grad.data() + (t * c_n + c) * hw;
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
          if (gx) gx[(t * c_n + c) * hw + p] += g[p];
          if (gs) gs[p * c_n + c] += g[p];
          acc += g[p];
        }
        if (gt) gt[t * c_n + c] += acc;
      }
    }
  });
}

Var graph_attention(const Var& wh, const Var& src, const Var& dst,
                    const std::vector<std::vector<int>>& groups, double slope) {
  require_rank(wh, 2, "graph_attention");
  const std::size_t n = wh.dim(0), d = wh.dim(1);
  if (src.size() != n || dst.size() != n || groups.size() != n) {
    throw ShapeError("graph_attention: node counts disagree");
  }
  std::vector<std::vector<double>> alpha(n);
  std::vector<double> out(n * d, 0.0);
  const auto hv = wh.value();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& grp = groups[i];
    if (grp.empty()) throw DomainError("graph_attention: empty neighbourhood");
    auto& a = alpha[i];
    a.resize(grp.size());
    double mx = -INFINITY;
    for (std::size_t m = 0; m < grp.size(); ++m) {
      const double e = src.value()[i] + dst.value()[grp[m]];
      a[m] = e > 0.0 ? e : slope * e;
      mx = std::max(mx, a[m]);
    }
    double z = 0.0;
    for (double& v : a) {
      v = std::exp(v - mx);
      z += v;
    }
    for (std::size_t m = 0; m < grp.size(); ++m) {
      a[m] /= z;
      const double* hj = hv.data() + grp[m] * d;
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] += a[m] * hj[c];
    }
  }
  return make({n, d}, std::move(out), {wh, src, dst},
              [=, alpha = std::move(alpha)](Node& node) {
                double* gh = pgrad(node, 0);
                double* gs = pgrad(node, 1);
                double* gd = pgrad(node, 2);
                const auto& hv = node.parents[0]->value;
                const auto& sv = node.parents[1]->value;
                const auto& dv = node.parents[2]->value;
                std::vector<double> da;
                for (std::size_t i = 0; i < n; ++i) {
                  const auto& grp = groups[i];
                  const auto& a = alpha[i];
                  const double* g = node.grad.data() + i * d;
                  da.assign(grp.size(), 0.0);
                  double dot = 0.0;
                  for (std::size_t m = 0; m < grp.size(); ++m) {
                    const double* hj = hv.data() + grp[m] * d;
                    double s = 0.0;
                    for (std::size_t c = 0; c < d; ++c) s += g[c] * hj[c];
                    da[m] = s;
                    dot += a[m] * s;
                    if (gh) {
                      for (std::size_t c = 0; c < d; ++c) gh[grp[m] * d + c] += a[m] * g[c];
                    }
                  }
                  for (std::size_t m = 0; m < grp.size(); ++m) {
                    const double de = a[m] * (da[m] - dot);
                    const double pre = sv[i] + dv[grp[m]];
                    const double dpre = de * (pre > 0.0 ? 1.0 : slope);
                    if (gs) gs[i] += dpre;
                    if (gd) gd[grp[m]] += dpre;
                  }
                }
              });
}

Var subset_attention(const Var& q, const Var& k, const Var& v,
                     const std::vector<std::vector<int>>& groups, double scale_factor) {
  require_rank(q, 2, "subset_attention");
  require_rank(k, 2, "subset_attention");
  require_rank(v, 2, "subset_attention");
  const std::size_t nq = q.dim(0), d = q.dim(1), nk = k.dim(0), dv = v.dim(1);
  if (k.dim(1) != d || v.dim(0) != nk || groups.size() != nq) {
    throw ShapeError("subset_attention: incompatible operands");
  }
  std::vector<std::vector<double>> alpha(nq);
  std::vector<double> out(nq * dv, 0.0);
  const auto qv = q.value();
  const auto kv = k.value();
  const auto vv = v.value();
  for (std::size_t i = 0; i < nq; ++i) {
    const auto& grp = groups[i];
    if (grp.empty()) throw DomainError("subset_attention: empty key subset");
    auto& a = alpha[i];
    a.resize(grp.size());
    double mx = -INFINITY;
    for (std::size_t m = 0; m < grp.size(); ++m) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += qv[i * d + c] * kv[grp[m] * d + c];
      a[m] = scale_factor * s;
      mx = std::max(mx, a[m]);
    }
    double z = 0.0;
    for (double& x : a) {
      x = std::exp(x - mx);
      z += x;
    }
    for (std::size_t m = 0; m < grp.size(); ++m) {
      a[m] /= z;
      for (std::size_t c = 0; c < dv; ++c) out[i * dv + c] += a[m] * vv[grp[m] * dv + c];
    }
  }
  return make({nq, dv}, std::move(out), {q, k, v},
              [=, alpha = std::move(alpha)](Node& node) {
                double* gq = pgrad(node, 0);
                double* gk = pgrad(node, 1);
                double* gv = pgrad(node, 2);
                const auto& qv = node.parents[0]->value;
                const auto& kv = node.parents[1]->value;
                const auto& vv = node.parents[2]->value;
                std::vector<double> da;
                for (std::size_t i = 0; i < nq; ++i) {
                  const auto& grp = groups[i];
                  const auto& a = alpha[i];
                  const double* g = node.grad.data() + i * dv;
                  da.assign(grp.size(), 0.0);
                  double dot = 0.0;
                  for (std::size_t m = 0; m < grp.size(); ++m) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < dv; ++c) s += g[c] * vv[grp[m] * dv + c];
                    da[m] = s;
                    dot += a[m] * s;
                    if (gv) {
                      for (std::size_t c = 0; c < dv; ++c) gv[grp[m] * dv + c] += a[m] * g[c];
                    }
                  }
                  for (std::size_t m = 0; m < grp.size(); ++m) {
                    const double ds = scale_factor * a[m] * (da[m] - dot);
                    for (std::size_t c = 0; c < d; ++c) {
                      if (gq) gq[i * d + c] += ds * kv[grp[m] * d + c];
                      if (gk) gk[grp[m] * d + c] += ds * qv[i * d + c];
                    }
                  }
                }
              });
}

Var pair_cosine(const Var& x, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  require_rank(x, 2, "pair_cosine");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  const auto xv = x.value();
  std::vector<double> squares(rows), norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += xv[r * n + c] * xv[r * n + c];
    squares[r] = s;
    norms[r] = std::sqrt(s);
  }
  std::vector<double> out(pairs.size(), 0.0);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    if (i >= rows || j >= rows) throw ShapeError("pair_cosine: row index out of range");
    if (norms[i] == 0.0 || norms[j] == 0.0) continue;
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += xv[i * n + c] * xv[j * n + c];
    // A single square root keeps the similarity of identical rows at exactly 1.
    out[p] = s / std::sqrt(squares[i] * squares[j]);
  }
  return make({pairs.size()}, std::move(out), {x}, [=](Node& node) {
    double* g = pgrad(node, 0);
    if (!g) return;
    const auto& xv = node.parents[0]->value;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [i, j] = pairs[p];
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      const double c = node.value[p];
      const double gp = node.grad[p];
      const double inv = 1.0 / (norms[i] * norms[j]);
      for (std::size_t k = 0; k < n; ++k) {
        const double xi = xv[i * n + k], xj = xv[j * n + k];
        g[i * n + k] += gp * (xj * inv - c * xi / (norms[i] * norms[i]));
        g[j * n + k] += gp * (xi * inv - c * xj / (norms[j] * norms[j]));
      }
    }
  });
}

Var masked_mse(const Var& pred, const Var& target, std::span<const std::uint8_t> mask) {
  if (pred.size() != target.size()) throw ShapeError("masked_mse: size mismatch");
  if (!mask.empty() && mask.size() != pred.size()) throw ShapeError("masked_mse: mask length");
  std::size_t count = 0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double r = pred.value()[i] - target.value()[i];
    s += r * r;
    ++count;
  }
  if (count == 0) throw DomainError("mse: empty mask");
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  const double inv = 1.0 / static_cast<double>(count);
  return make({1}, {s * inv}, {pred, target}, [m = std::move(m), inv](Node& node) {
    const auto& p = node.parents[0]->value;
    const auto& t = node.parents[1]->value;
    double* gp = pgrad(node, 0);
    double* gt = pgrad(node, 1);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!m.empty() && !m[i]) continue;
      const double d = 2.0 * inv * (p[i] - t[i]) * node.grad[0];
      if (gp) gp[i] += d;
      if (gt) gt[i] -= d;
    }
  });
}

}  // namespace rainrecon::ag
