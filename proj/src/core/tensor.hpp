#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace md {

namespace detail {

// One node of the recorded computation. Nodes form a DAG through `parents`;
// the backward pass linearizes reachable nodes into a tape (topological
// order) and replays it in reverse exactly once.
struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates partials into parents' grad buffers.
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats participating in reverse-mode
// differentiation. Cheap to copy: a Tensor is a handle to a shared node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int64_t numel() const;
  int dim(int axis) const;
  bool requires_grad() const;

  const std::vector<double>& value() const;
  // Direct access for optimizer updates; never call on a tensor that is part
  // of a live graph other than as a leaf.
  std::vector<double>& mutable_value();
  const std::vector<double>& grad() const;
  double item() const;

  void zero_grad();
  void set_requires_grad(bool v);

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- elementwise arithmetic (trailing-dimension broadcasting) --------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Division. With guard_eps == 0 a zero denominator element raises
// InvalidArgument; a positive guard_eps nudges denominators away from zero by
// at least that amount (sign-preserving).
Tensor div(const Tensor& a, const Tensor& b, double guard_eps = 0.0);

Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, double b);
Tensor div(double a, const Tensor& b, double guard_eps = 0.0);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator+(double a, const Tensor& b) { return add(b, a); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, b); }
inline Tensor operator/(double a, const Tensor& b) { return div(a, b); }

Tensor neg(const Tensor& a);
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor abs(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);   // raises on non-positive elements
Tensor sqrt(const Tensor& a);  // backward denominator clamped near zero
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reduce over the given axes (removed from the output shape).
Tensor sum(const Tensor& a, const std::vector<int>& axes);
Tensor mean(const Tensor& a, const std::vector<int>& axes);

// ---- structured ops --------------------------------------------------------

// Cross-correlation of input [C,H,W] with weight [F,C,k,k], zero padding.
// bias may be an undefined Tensor or shape [F].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// Nearest-neighbor 2x upsampling of [C,H,W].
Tensor upsample2x(const Tensor& input);

// 2x2 mean pooling of [C,H,W]; extents must be even.
Tensor downsample2x_avg(const Tensor& input);

// Concatenate along axis 0; trailing dimensions must match.
Tensor concat0(const Tensor& a, const Tensor& b);

// Single element as a scalar tensor (flat row-major index).
Tensor element(const Tensor& a, int64_t flat_index);

// Same data, new shape; element count must match.
Tensor reshape(const Tensor& a, std::vector<int> shape);

// 3x3 stencil with edge-replicate padding, applied per channel of [H,W] or
// [C,H,W]. Kernel is row-major (dy, dx).
Tensor stencil3x3_replicate(const Tensor& a, const std::array<double, 9>& k);

// ---- graph -----------------------------------------------------------------

using BackwardFn = std::function<void(detail::Node&)>;

// Builds a custom differentiable op. `fn` must accumulate (+=) into the grad
// buffers of the parents that require it. Dropped if no parent requires grad.
Tensor make_op(std::vector<int> shape, std::vector<double> value,
               std::vector<Tensor> parents, BackwardFn fn, const char* name);

// Reverse-mode sweep from a scalar root: linearizes the reachable recorded
// ops in topological order and visits each exactly once, in reverse.
void backward(const Tensor& root);

}  // namespace md
