#pragma once

// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// Every primitive returns a fresh Tensor. When a Tape is active on the
// calling thread and at least one operand requires a gradient, the result
// is recorded on that tape together with its backward rule. Without an
// active tape nothing is recorded, which is how inference runs.
//
// Row-wise primitives (softmax, layer_norm, add_row, ...) treat the last
// axis as columns and flatten all leading axes into rows.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moesumm {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Raised for operand shapes a primitive cannot accept.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const Tape* tape = nullptr;
  std::size_t tape_index = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double fill);
  static Tensor from(Shape shape, std::vector<double> values);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  /// Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy of values (and the requires_grad flag), detached from any tape.
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations. Single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  std::size_t size() const { return nodes_.size(); }
  void clear();

  /// Seeds d(root)/d(root) = 1 and runs every recorded rule once in reverse.
  void backward(const Tensor& root);

 private:
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
  void record(const std::shared_ptr<detail::Node>& node);
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Makes `tape` the active tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Backward on the active tape. Rejects non-scalar roots and roots that
/// were not recorded on the active tape.
void backward(const Tensor& root);

// Builds a result tensor and records it when differentiation is live.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward_rule);

enum class Activation { gelu, relu };

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a[r x c] + bias[c] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// Multiplies row i of a by s[i].
Tensor scale_rows(const Tensor& a, const Tensor& s);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor activate(const Tensor& a, Activation kind);
/// Rows of table[V x d] indexed by ids; ids must be < V.
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor pow_int(const Tensor& a, int exponent);
/// out[i] = a[i, index[i]], one entry per row.
Tensor pick_cols(const Tensor& a, std::span<const std::size_t> index);
/// Selected rows of a, in the given order.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// Inverse of gather_rows: a [k x c] placed at `rows` of an [n_rows x c] zero matrix.
Tensor scatter_rows(const Tensor& a, std::span<const std::size_t> rows, std::size_t n_rows);
/// Same values, no gradient flow.
Tensor detach(const Tensor& a);
/// Same values under a new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);

/// One attention problem inside a row-stacked batch: queries occupy rows
/// [q_begin, q_begin + q_len) of q, keys/values rows [k_begin, k_begin + k_len).
struct AttentionSegment {
  std::size_t q_begin = 0;
  std::size_t q_len = 0;
  std::size_t k_begin = 0;
  std::size_t k_len = 0;
};

/// Multi-head scaled dot-product attention over row-stacked segments.
/// q [Nq x d], k, v [Nk x d]; heads split d evenly. With `causal`, query i
/// of a segment sees keys 0..i of the same segment.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                 std::span<const AttentionSegment> segments, bool causal);

}  // namespace moesumm
