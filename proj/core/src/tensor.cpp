#include "moesumm/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <sstream>

namespace moesumm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Strided = Eigen::OuterStride<>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Strided>;
using MutStridedMap = Eigen::Map<RowMat, 0, Strided>;

thread_local Tape* g_active_tape = nullptr;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

std::size_t rows_of(const Shape& s) {
  if (s.size() <= 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                   shape_to_string(b));
}

void require_2d(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

ConstMap as_matrix(const detail::Node& n) {
  return ConstMap(n.value.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
                  static_cast<Eigen::Index>(cols_of(n.shape)));
}

MutMap grad_matrix(detail::Node& n) {
  n.ensure_grad();
  return MutMap(n.grad.data(), static_cast<Eigen::Index>(rows_of(n.shape)),
                static_cast<Eigen::Index>(cols_of(n.shape)));
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_derivative(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// Elementwise unary op with derivative expressed from (input, output).
template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  const auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a}, [dfdx](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      x.grad[i] += o.grad[i] * dfdx(x.value[i], o.value[i]);
    }
  });
}

}  // namespace

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

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double fill) {
  std::vector<double> v(shape_size(shape), fill);
  return from(std::move(shape), std::move(v));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return rows_of(node_->shape); }
std::size_t Tensor::cols() const { return cols_of(node_->shape); }
std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t = from(node_->shape, node_->value);
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

// ---- Tape -----------------------------------------------------------------

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

void Tape::clear() {
  for (auto& n : nodes_) {
    n->inputs.clear();
    n->backward = nullptr;
  }
  nodes_.clear();
}

void Tape::record(const std::shared_ptr<detail::Node>& node) {
  node->tape = this;
  node->tape_index = nodes_.size();
  nodes_.push_back(node);
}

void Tape::backward(const Tensor& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  if (root.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + shape_to_string(root.shape()));
  }
  auto* node = root.node();
  if (node->tape != this || node->tape_index >= nodes_.size() ||
      nodes_[node->tape_index].get() != node) {
    throw std::invalid_argument("backward: root was not recorded on the active tape");
  }
  node->ensure_grad();
  node->grad[0] += 1.0;
  for (std::size_t i = node->tape_index + 1; i-- > 0;) {
    auto& n = *nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& root) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw std::invalid_argument("backward: no active tape");
  tape->backward(root);
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward_rule) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  Tape* tape = g_active_tape;
  if (tape != nullptr) {
    const bool live = std::any_of(inputs.begin(), inputs.end(),
                                  [](const Tensor& t) { return t.requires_grad(); });
    if (live) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node_ptr());
      node->backward = std::move(backward_rule);
      tape->record(node);
    }
  }
  return Tensor(std::move(node));
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  if (a.shape()[1] != b.shape()[0]) shape_fail("matmul", a.shape(), b.shape());
  const auto m = a.shape()[0], n = b.shape()[1];
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = as_matrix(*a.node()) * as_matrix(*b.node());
  return make_result({m, n}, std::move(out), {a, b}, [](detail::Node& o) {
    auto& x = *o.inputs[0];
    auto& y = *o.inputs[1];
    const ConstMap g(o.grad.data(), o.shape[0], o.shape[1]);
    if (x.requires_grad) grad_matrix(x).noalias() += g * as_matrix(y).transpose();
    if (y.requires_grad) grad_matrix(y).noalias() += as_matrix(x).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  require_2d("transpose", a);
  const auto r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  MutMap(out.data(), c, r) = as_matrix(*a.node()).transpose();
  return make_result({c, r}, std::move(out), {a}, [](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    grad_matrix(x) += ConstMap(o.grad.data(), o.shape[0], o.shape[1]).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
    for (auto& in : o.inputs) {
      if (!in->requires_grad) continue;
      in->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) in->grad[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
  std::vector<double> out(a.size());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
    auto& x = *o.inputs[0];
    auto& y = *o.inputs[1];
    if (x.requires_grad) {
      x.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) x.grad[i] += o.grad[i];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) y.grad[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  std::vector<double> out(a.size());
  const auto x = a.values(), y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& o) {
    auto& x = *o.inputs[0];
    auto& y = *o.inputs[1];
    if (x.requires_grad) {
      x.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) x.grad[i] += o.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      y.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) y.grad[i] += o.grad[i] * x.value[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  const auto r = a.rows(), c = a.cols();
  if (bias.size() != c) shape_fail("add_row", a.shape(), bias.shape());
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto b = bias.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  }
  return make_result(a.shape(), std::move(out), {a, bias}, [r, c](detail::Node& o) {
    auto& x = *o.inputs[0];
    auto& b = *o.inputs[1];
    if (x.requires_grad) {
      x.ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) x.grad[i] += o.grad[i];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) b.grad[j] += o.grad[i * c + j];
      }
    }
  });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  const auto r = a.rows(), c = a.cols();
  if (s.size() != r) shape_fail("scale_rows", a.shape(), s.shape());
  std::vector<double> out(a.size());
  const auto x = a.values(), f = s.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * f[i];
  }
  return make_result(a.shape(), std::move(out), {a, s}, [r, c](detail::Node& o) {
    auto& x = *o.inputs[0];
    auto& f = *o.inputs[1];
    if (x.requires_grad) {
      x.ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) x.grad[i * c + j] += o.grad[i * c + j] * f.value[i];
      }
    }
    if (f.requires_grad) {
      f.ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += o.grad[i * c + j] * x.value[i * c + j];
        f.grad[i] += acc;
      }
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const auto r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) shape_fail("concat_cols", parts[0].shape(), p.shape());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto c = p.cols();
    const auto v = p.values();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(v.begin() + i * c, c, out.begin() + i * total + off);
    }
    off += c;
  }
  Shape shape = parts[0].shape();
  if (shape.empty()) shape = {1};
  shape.back() = total;
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(std::move(shape), std::move(out), std::move(inputs),
                     [r, total, offsets](detail::Node& o) {
                       for (std::size_t k = 0; k < o.inputs.size(); ++k) {
                         auto& in = *o.inputs[k];
                         if (!in.requires_grad) continue;
                         in.ensure_grad();
                         const auto c = cols_of(in.shape);
                         for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j) {
                             in.grad[i * c + j] += o.grad[i * total + offsets[k] + j];
                           }
                         }
                       }
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const auto r = a.rows(), c = a.cols();
  if (begin >= end || end > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_to_string(a.shape()));
  }
  const auto w = end - begin;
  std::vector<double> out(r * w);
  const auto v = a.values();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(v.begin() + i * c + begin, w, out.begin() + i * w);
  Shape shape = a.shape();
  shape.back() = w;
  return make_result(std::move(shape), std::move(out), {a}, [r, c, w, begin](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) x.grad[i * c + begin + j] += o.grad[i * w + j];
    }
  });
}

Tensor softmax_rows(const Tensor& a) {
  const auto r = a.rows(), c = a.cols();
  std::vector<double> out(a.size());
  const auto v = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = v.data() + i * c;
    double* dst = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (dst[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) dst[j] /= total;
  }
  return make_result(a.shape(), std::move(out), {a}, [r, c](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = o.value.data() + i * c;
      const double* g = o.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < c; ++j) x.grad[i * c + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  const auto r = a.rows(), c = a.cols();
  std::vector<double> out(a.size());
  const auto v = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = v.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return make_result(a.shape(), std::move(out), {a}, [r, c](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = o.value.data() + i * c;
      const double* g = o.grad.data() + i * c;
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += g[j];
      for (std::size_t j = 0; j < c; ++j) x.grad[i * c + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset) {
  const auto r = x.rows(), c = x.cols();
  if (gain.size() != c) shape_fail("layer_norm", x.shape(), gain.shape());
  if (offset.size() != c) shape_fail("layer_norm", x.shape(), offset.shape());
  std::vector<double> out(x.size());
  // Normalized activations and inverse std are needed again in backward.
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(r);
  const auto v = x.values(), g = gain.values(), b = offset.values();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = v.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * g[j] + b[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, offset},
                     [r, c, xhat, inv_std](detail::Node& o) {
                       auto& xn = *o.inputs[0];
                       auto& gn = *o.inputs[1];
                       auto& bn = *o.inputs[2];
                       if (gn.requires_grad) {
                         gn.ensure_grad();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             gn.grad[j] += o.grad[i * c + j] * (*xhat)[i * c + j];
                       }
                       if (bn.requires_grad) {
                         bn.ensure_grad();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) bn.grad[j] += o.grad[i * c + j];
                       }
                       if (!xn.requires_grad) return;
                       xn.ensure_grad();
                       const double inv_c = 1.0 / static_cast<double>(c);
                       for (std::size_t i = 0; i < r; ++i) {
                         double sum_d = 0.0, sum_dh = 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double d = o.grad[i * c + j] * gn.value[j];
                           sum_d += d;
                           sum_dh += d * (*xhat)[i * c + j];
                         }
                         for (std::size_t j = 0; j < c; ++j) {
                           const double d = o.grad[i * c + j] * gn.value[j];
                           xn.grad[i * c + j] += (*inv_std)[i] *
                                                 (d - inv_c * sum_d - (*xhat)[i * c + j] * inv_c * sum_dh);
                         }
                       }
                     });
}

Tensor gelu(const Tensor& a) {
  return unary(a, gelu_scalar, [](double x, double) { return gelu_derivative(x); });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor activate(const Tensor& a, Activation kind) {
  return kind == Activation::gelu ? gelu(a) : relu(a);
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_2d("embedding", table);
  const auto vocab = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw ShapeError("embedding: empty index list");
  std::vector<double> out(ids.size() * d);
  const auto v = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: index " + std::to_string(ids[i]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(v.begin() + static_cast<std::size_t>(ids[i]) * d, d, out.begin() + i * d);
  }
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table}, [idx, d](detail::Node& o) {
    auto& t = *o.inputs[0];
    if (!t.requires_grad) return;
    t.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = t.grad.data() + static_cast<std::size_t>(idx[i]) * d;
      const double* src = o.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tensor sum(const Tensor& a) {
  const auto v = a.values();
  double total = 0.0;
  for (double x : v) total += x;
  return make_result({1}, {total}, {a}, [](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (auto& g : x.grad) g += o.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor pow_int(const Tensor& a, int exponent) {
  if (exponent < 0) throw std::invalid_argument("pow_int: negative exponent");
  const auto ipow = [](double x, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= x;
    return r;
  };
  return unary(
      a, [=](double x) { return ipow(x, exponent); },
      [=](double x, double) {
        return exponent == 0 ? 0.0 : static_cast<double>(exponent) * ipow(x, exponent - 1);
      });
}

Tensor pick_cols(const Tensor& a, std::span<const std::size_t> index) {
  const auto r = a.rows(), c = a.cols();
  if (index.size() != r) {
    throw ShapeError("pick_cols: " + std::to_string(index.size()) + " indices for " +
                     shape_to_string(a.shape()));
  }
  std::vector<double> out(r);
  const auto v = a.values();
  for (std::size_t i = 0; i < r; ++i) {
    if (index[i] >= c) throw std::out_of_range("pick_cols: column index out of range");
    out[i] = v[i * c + index[i]];
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result({r}, std::move(out), {a}, [idx, c](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) x.grad[i * c + idx[i]] += o.grad[i];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  // A vector is a column here: one element per row.
  const bool vec = a.rank() <= 1;
  const auto r = vec ? a.size() : a.rows();
  const auto c = vec ? std::size_t{1} : a.cols();
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  std::vector<double> out(rows.size() * c);
  const auto v = a.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= r) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(v.begin() + rows[i] * c, c, out.begin() + i * c);
  }
  Shape shape = vec ? Shape{rows.size()} : Shape{rows.size(), c};
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(std::move(shape), std::move(out), {a}, [idx, c](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) x.grad[idx[i] * c + j] += o.grad[i * c + j];
    }
  });
}

Tensor scatter_rows(const Tensor& a, std::span<const std::size_t> rows, std::size_t n_rows) {
  const auto c = a.cols();
  if (rows.size() != a.rows()) {
    throw ShapeError("scatter_rows: " + std::to_string(rows.size()) + " targets for " +
                     shape_to_string(a.shape()));
  }
  std::vector<double> out(n_rows * c, 0.0);
  const auto v = a.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_rows) throw std::out_of_range("scatter_rows: row index out of range");
    for (std::size_t j = 0; j < c; ++j) out[rows[i] * c + j] += v[i * c + j];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({n_rows, c}, std::move(out), {a}, [idx, c](detail::Node& o) {
    auto& x = *o.inputs[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) x.grad[i * c + j] += o.grad[idx[i] * c + j];
    }
  });
}

Tensor detach(const Tensor& a) { return Tensor::from(a.shape(), {a.values().begin(), a.values().end()}); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
  return make_result(std::move(shape), {a.values().begin(), a.values().end()}, {a},
                     [](detail::Node& o) {
                       auto& x = *o.inputs[0];
                       if (!x.requires_grad) return;
                       x.ensure_grad();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) x.grad[i] += o.grad[i];
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                 std::span<const AttentionSegment> segments, bool causal) {
  require_2d("attention", q);
  require_2d("attention", k);
  require_2d("attention", v);
  const auto d = q.shape()[1];
  if (k.shape()[1] != d || v.shape() != k.shape()) shape_fail("attention", q.shape(), k.shape());
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("attention: " + std::to_string(n_heads) + " heads do not divide width " +
                     std::to_string(d));
  }
  const auto nq = q.shape()[0], nk = k.shape()[0];
  for (const auto& s : segments) {
    if (s.q_len == 0 || s.k_len == 0 || s.q_begin + s.q_len > nq || s.k_begin + s.k_len > nk) {
      throw ShapeError("attention: segment outside operand rows");
    }
    if (causal && s.q_len != s.k_len) throw ShapeError("attention: causal segment must be square");
  }
  const auto dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> out(nq * d, 0.0);
  // Attention probabilities per (segment, head), reused by backward.
  auto probs = std::make_shared<std::vector<RowMat>>();
  probs->reserve(segments.size() * n_heads);
  const double* qd = q.values().data();
  const double* kd = k.values().data();
  const double* vd = v.values().data();
  const auto sd = static_cast<Eigen::Index>(d);
  for (const auto& s : segments) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const auto qlen = static_cast<Eigen::Index>(s.q_len);
      const auto klen = static_cast<Eigen::Index>(s.k_len);
      const auto w = static_cast<Eigen::Index>(dh);
      ConstStridedMap qh(qd + s.q_begin * d + h * dh, qlen, w, Strided(sd));
      ConstStridedMap kh(kd + s.k_begin * d + h * dh, klen, w, Strided(sd));
      ConstStridedMap vh(vd + s.k_begin * d + h * dh, klen, w, Strided(sd));
      RowMat p = (qh * kh.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < qlen; ++i) {
        const Eigen::Index visible = causal ? i + 1 : klen;
        double mx = p(i, 0);
        for (Eigen::Index j = 1; j < visible; ++j) mx = std::max(mx, p(i, j));
        double total = 0.0;
        for (Eigen::Index j = 0; j < visible; ++j) total += (p(i, j) = std::exp(p(i, j) - mx));
        for (Eigen::Index j = 0; j < visible; ++j) p(i, j) /= total;
        for (Eigen::Index j = visible; j < klen; ++j) p(i, j) = 0.0;
      }
      MutStridedMap oh(out.data() + s.q_begin * d + h * dh, qlen, w, Strided(sd));
      oh.noalias() = p * vh;
      probs->push_back(std::move(p));
    }
  }
  std::vector<AttentionSegment> segs(segments.begin(), segments.end());
  return make_result(
      {nq, d}, std::move(out), {q, k, v},
      [segs, probs, n_heads, d, dh, inv_sqrt](detail::Node& o) {
        auto& qn = *o.inputs[0];
        auto& kn = *o.inputs[1];
        auto& vn = *o.inputs[2];
        if (qn.requires_grad) qn.ensure_grad();
        if (kn.requires_grad) kn.ensure_grad();
        if (vn.requires_grad) vn.ensure_grad();
        const auto sd = static_cast<Eigen::Index>(d);
        const auto w = static_cast<Eigen::Index>(dh);
        std::size_t slot = 0;
        for (const auto& s : segs) {
          for (std::size_t h = 0; h < n_heads; ++h, ++slot) {
            const RowMat& p = (*probs)[slot];
            const auto qlen = static_cast<Eigen::Index>(s.q_len);
            const auto klen = static_cast<Eigen::Index>(s.k_len);
            const std::size_t qoff = s.q_begin * d + h * dh;
            const std::size_t koff = s.k_begin * d + h * dh;
            ConstStridedMap go(o.grad.data() + qoff, qlen, w, Strided(sd));
            ConstStridedMap qh(qn.value.data() + qoff, qlen, w, Strided(sd));
            ConstStridedMap kh(kn.value.data() + koff, klen, w, Strided(sd));
            ConstStridedMap vh(vn.value.data() + koff, klen, w, Strided(sd));
            if (vn.requires_grad) {
              MutStridedMap gv(vn.grad.data() + koff, klen, w, Strided(sd));
              gv.noalias() += p.transpose() * go;
            }
            if (!qn.requires_grad && !kn.requires_grad) continue;
            RowMat dp = go * vh.transpose();
            // softmax backward: ds = p * (dp - rowsum(p * dp))
            for (Eigen::Index i = 0; i < qlen; ++i) {
              double dot = 0.0;
              for (Eigen::Index j = 0; j < klen; ++j) dot += p(i, j) * dp(i, j);
              for (Eigen::Index j = 0; j < klen; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * inv_sqrt;
            }
            if (qn.requires_grad) {
              MutStridedMap gq(qn.grad.data() + qoff, qlen, w, Strided(sd));
              gq.noalias() += dp * kh;
            }
            if (kn.requires_grad) {
              MutStridedMap gk(kn.grad.data() + koff, klen, w, Strided(sd));
              gk.noalias() += dp.transpose() * qh;
            }
          }
        }
      });
}

}  // namespace moesumm
