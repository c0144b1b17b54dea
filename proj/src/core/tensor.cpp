#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "core/error.hpp"

namespace md {

using detail::Node;

namespace {

int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void check_shape(const std::vector<int>& shape, const char* who) {
  for (int e : shape) {
    if (e <= 0)
      throw InvalidArgument(std::string(who) + ": non-positive extent in shape " +
                            shape_str(shape));
  }
}

std::shared_ptr<Node> new_leaf(std::vector<int> shape, std::vector<double> data,
                               bool requires_grad) {
  check_shape(shape, "tensor");
  auto n = std::make_shared<Node>();
  if (static_cast<int64_t>(data.size()) != numel_of(shape))
    throw InvalidArgument("tensor: data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

bool any_requires(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

// Row-major strides for a shape.
std::vector<int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<int64_t> s(shape.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    s[i] = acc;
    acc *= shape[i];
  }
  return s;
}

// Trailing-dimension broadcast plan: shapes are right-aligned, each aligned
// pair of extents must match or one of them must be 1.
struct BroadcastPlan {
  std::vector<int> out_shape;
  std::vector<int64_t> out_strides;
  std::vector<int64_t> stride_a;  // 0 on broadcast axes
  std::vector<int64_t> stride_b;
  int64_t n = 0;
  bool same_shape = false;
};

BroadcastPlan make_broadcast(const std::vector<int>& a, const std::vector<int>& b,
                             const char* who) {
  BroadcastPlan p;
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  p.out_shape.resize(r);
  for (int i = 0; i < r; ++i) {
    const int ea = i < r - ra ? 1 : a[i - (r - ra)];
    const int eb = i < r - rb ? 1 : b[i - (r - rb)];
    if (ea != eb && ea != 1 && eb != 1)
      throw InvalidArgument(std::string(who) + ": shapes " + shape_str(a) +
                            " and " + shape_str(b) + " are not broadcast-compatible");
    p.out_shape[i] = std::max(ea, eb);
  }
  p.out_strides = strides_of(p.out_shape);
  const auto sa = strides_of(a);
  const auto sb = strides_of(b);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  for (int i = 0; i < r; ++i) {
    if (i >= r - ra && a[i - (r - ra)] != 1) p.stride_a[i] = sa[i - (r - ra)];
    if (i >= r - rb && b[i - (r - rb)] != 1) p.stride_b[i] = sb[i - (r - rb)];
  }
  p.n = numel_of(p.out_shape);
  p.same_shape = (a == b);
  return p;
}

// Maps a flat output index to the flat index of one operand under the plan.
inline int64_t map_index(int64_t flat, const BroadcastPlan& p,
                         const std::vector<int64_t>& stride) {
  int64_t off = 0;
  for (size_t d = 0; d < p.out_shape.size(); ++d) {
    const int64_t idx = flat / p.out_strides[d];
    flat -= idx * p.out_strides[d];
    off += idx * stride[d];
  }
  return off;
}

Tensor make_node(std::vector<int> shape, std::vector<double> value,
                 std::vector<Tensor> parents, BackwardFn fn, const char* name) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = name;
  n->requires_grad = any_requires(parents);
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents)
      if (p.defined()) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
  }
  return Tensor(std::move(n));
}

// Generic broadcasting binary op. dfa/dfb produce the local partials given
// (a, b, out) element values.
template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb,
                 const char* name) {
  if (!a.defined() || !b.defined())
    throw InvalidArgument(std::string(name) + ": undefined operand");
  auto plan = make_broadcast(a.shape(), b.shape(), name);
  std::vector<double> out(plan.n);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (plan.same_shape) {
    for (int64_t i = 0; i < plan.n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (int64_t i = 0; i < plan.n; ++i)
      out[i] = f(av[map_index(i, plan, plan.stride_a)],
                 bv[map_index(i, plan, plan.stride_b)]);
  }
  return make_node(
      plan.out_shape, std::move(out), {a, b},
      [plan, dfa, dfb](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        const bool ga = pa->requires_grad;
        const bool gb = pb->requires_grad;
        if (ga) pa->ensure_grad();
        if (gb) pb->ensure_grad();
        if (plan.same_shape) {
          for (int64_t i = 0; i < plan.n; ++i) {
            const double g = self.grad[i];
            if (g == 0.0) continue;
            const double x = pa->value[i], y = pb->value[i];
            if (ga) pa->grad[i] += g * dfa(x, y, self.value[i]);
            if (gb) pb->grad[i] += g * dfb(x, y, self.value[i]);
          }
        } else {
          for (int64_t i = 0; i < plan.n; ++i) {
            const double g = self.grad[i];
            if (g == 0.0) continue;
            const int64_t ia = map_index(i, plan, plan.stride_a);
            const int64_t ib = map_index(i, plan, plan.stride_b);
            const double x = pa->value[ia], y = pb->value[ib];
            if (ga) pa->grad[ia] += g * dfa(x, y, self.value[i]);
            if (gb) pb->grad[ib] += g * dfb(x, y, self.value[i]);
          }
        }
      },
      name);
}

// Elementwise unary op; df receives (x, y) with y the forward output.
template <class F, class DF>
Tensor unary_op(const Tensor& a, F f, DF df, const char* name) {
  if (!a.defined()) throw InvalidArgument(std::string(name) + ": undefined operand");
  const auto& av = a.value();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_node(
      a.shape(), std::move(out), {a},
      [df](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i)
          p->grad[i] += self.grad[i] * df(p->value[i], self.value[i]);
      },
      name);
}

}  // namespace

// ---- Tensor basics ---------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = numel_of(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  auto n = numel_of(shape);
  return Tensor(new_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_leaf({1}, {value}, requires_grad));
}

const std::vector<int>& Tensor::shape() const {
  if (!node_) throw InvalidArgument("shape(): undefined tensor");
  return node_->shape;
}

int64_t Tensor::numel() const {
  if (!node_) return 0;
  return static_cast<int64_t>(node_->value.size());
}

int Tensor::dim(int axis) const {
  const auto& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw InvalidArgument("dim(): axis out of range");
  return s[axis];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::value() const {
  if (!node_) throw InvalidArgument("value(): undefined tensor");
  return node_->value;
}

std::vector<double>& Tensor::mutable_value() {
  if (!node_) throw InvalidArgument("mutable_value(): undefined tensor");
  return node_->value;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_) throw InvalidArgument("grad(): undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1)
    throw InvalidArgument("item(): tensor has " + std::to_string(numel()) +
                          " elements, expected 1");
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_) return;
  node_->ensure_grad();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw InvalidArgument("set_requires_grad(): undefined tensor");
  if (!node_->parents.empty())
    throw InvalidArgument("set_requires_grad(): only valid on leaf tensors");
  node_->requires_grad = v;
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; }, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; }, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; }, "mul");
}

Tensor div(const Tensor& a, const Tensor& b, double guard_eps) {
  if (guard_eps < 0.0) throw InvalidArgument("div: negative guard_eps");
  if (guard_eps == 0.0) {
    for (double y : b.value())
      if (y == 0.0) throw InvalidArgument("div: zero denominator element");
  }
  const double eps = guard_eps;
  auto guard = [eps](double y) {
    if (eps == 0.0) return y;
    if (y >= 0.0) return y < eps ? eps : y;
    return y > -eps ? -eps : y;
  };
  return binary_op(
      a, b, [guard](double x, double y) { return x / guard(y); },
      [guard](double, double y, double) { return 1.0 / guard(y); },
      [guard](double x, double y, double) {
        const double d = guard(y);
        return -x / (d * d);
      },
      "div");
}

Tensor add(const Tensor& a, double b) {
  return unary_op(
      a, [b](double x) { return x + b; }, [](double, double) { return 1.0; },
      "add_scalar");
}

Tensor sub(const Tensor& a, double b) { return add(a, -b); }

Tensor sub(double a, const Tensor& b) {
  return unary_op(
      b, [a](double x) { return a - x; }, [](double, double) { return -1.0; },
      "rsub_scalar");
}

Tensor mul(const Tensor& a, double b) {
  return unary_op(
      a, [b](double x) { return x * b; }, [b](double, double) { return b; },
      "mul_scalar");
}

Tensor div(const Tensor& a, double b) {
  if (b == 0.0) throw InvalidArgument("div: zero scalar denominator");
  return mul(a, 1.0 / b);
}

Tensor div(double a, const Tensor& b, double guard_eps) {
  return div(Tensor::scalar(a), b, guard_eps);
}

Tensor neg(const Tensor& a) {
  return unary_op(
      a, [](double x) { return -x; }, [](double, double) { return -1.0; }, "neg");
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); },
      "abs");
}

Tensor pow(const Tensor& a, double e) {
  return unary_op(
      a, [e](double x) { return std::pow(x, e); },
      [e](double x, double) { return e * std::pow(x, e - 1.0); }, "pow");
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& a) {
  for (double x : a.value())
    if (x <= 0.0)
      throw InvalidArgument("log: non-positive element " + std::to_string(x));
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; }, "log");
}

Tensor sqrt(const Tensor& a) {
  // Backward denominator clamped so the zero vector (common at the first
  // optimizer step, before any pose signal exists) yields zero, not NaN.
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / std::max(y, 1e-12); }, "sqrt");
}

Tensor sin(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); }, "sin");
}

Tensor cos(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); }, "cos");
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Tensor elu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x >= 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x >= 0.0 ? 1.0 : y + 1.0; }, "elu");
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary_op(
      a, [lo](double x) { return x < lo ? lo : x; },
      [lo](double x, double) { return x < lo ? 0.0 : 1.0; }, "clamp_min");
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  const auto& av = a.value();
  if (av.empty()) throw InvalidArgument("sum: empty tensor");
  double acc = 0.0;
  for (double x : av) acc += x;  // fixed sequential order
  return make_node(
      {1}, {acc}, {a},
      [](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        const double g = self.grad[0];
        for (auto& gx : p->grad) gx += g;
      },
      "sum");
}

Tensor mean(const Tensor& a) {
  const int64_t n = a.numel();
  if (n == 0) throw InvalidArgument("mean: empty tensor");
  return mul(sum(a), 1.0 / static_cast<double>(n));
}

Tensor sum(const Tensor& a, const std::vector<int>& axes) {
  const auto& shape = a.shape();
  const int r = static_cast<int>(shape.size());
  std::vector<bool> reduce(r, false);
  for (int ax : axes) {
    if (ax < 0 || ax >= r)
      throw InvalidArgument("sum: axis " + std::to_string(ax) +
                            " out of range for shape " + shape_str(shape));
    if (reduce[ax]) throw InvalidArgument("sum: duplicate axis");
    reduce[ax] = true;
  }
  std::vector<int> out_shape;
  for (int d = 0; d < r; ++d)
    if (!reduce[d]) out_shape.push_back(shape[d]);
  if (out_shape.empty()) return sum(a);

  const auto in_strides = strides_of(shape);
  const auto out_strides = strides_of(out_shape);
  const int64_t n = a.numel();
  // out offset contribution of each input axis
  std::vector<int64_t> out_axis_stride(r, 0);
  {
    int od = 0;
    for (int d = 0; d < r; ++d)
      if (!reduce[d]) out_axis_stride[d] = out_strides[od++];
  }
  auto out_index = [in_strides, out_axis_stride, r](int64_t flat) {
    int64_t off = 0;
    for (int d = 0; d < r; ++d) {
      const int64_t idx = flat / in_strides[d];
      flat -= idx * in_strides[d];
      off += idx * out_axis_stride[d];
    }
    return off;
  };
  std::vector<double> out(numel_of(out_shape), 0.0);
  const auto& av = a.value();
  for (int64_t i = 0; i < n; ++i) out[out_index(i)] += av[i];
  return make_node(
      out_shape, std::move(out), {a},
      [out_index, n](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int64_t i = 0; i < n; ++i) p->grad[i] += self.grad[out_index(i)];
      },
      "sum_axes");
}

Tensor mean(const Tensor& a, const std::vector<int>& axes) {
  int64_t k = 1;
  for (int ax : axes) k *= a.dim(ax);
  return mul(sum(a, axes), 1.0 / static_cast<double>(k));
}

// ---- structured ops --------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  if (input.shape().size() != 3 || weight.shape().size() != 4)
    throw InvalidArgument("conv2d: expected input [C,H,W] and weight [F,C,k,k]");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const int F = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != C)
    throw InvalidArgument("conv2d: weight channel count " +
                          std::to_string(weight.dim(1)) + " != input channels " +
                          std::to_string(C));
  if (weight.dim(3) != k || k % 2 == 0)
    throw InvalidArgument("conv2d: kernel must be square with odd size");
  if (stride < 1 || padding < 0) throw InvalidArgument("conv2d: bad stride/padding");
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != F))
    throw InvalidArgument("conv2d: bias must have shape [F]");
  const int Ho = (H + 2 * padding - k) / stride + 1;
  const int Wo = (W + 2 * padding - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0)
    throw InvalidArgument("conv2d: non-positive output extent (" +
                          std::to_string(Ho) + "x" + std::to_string(Wo) + ")");

  const auto& in = input.value();
  const auto& w = weight.value();
  const double* bp = bias.defined() ? bias.value().data() : nullptr;
  std::vector<double> out(static_cast<size_t>(F) * Ho * Wo);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int f = 0; f < F; ++f) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = bp ? bp[f] : 0.0;
        const int y0 = oy * stride - padding;
        const int x0 = ox * stride - padding;
        for (int c = 0; c < C; ++c) {
          const double* ic = in.data() + static_cast<size_t>(c) * H * W;
          const double* wc =
              w.data() + ((static_cast<size_t>(f) * C + c) * k) * k;
          for (int ky = 0; ky < k; ++ky) {
            const int y = y0 + ky;
            if (y < 0 || y >= H) continue;
            const double* irow = ic + static_cast<size_t>(y) * W;
            const double* wrow = wc + static_cast<size_t>(ky) * k;
            for (int kx = 0; kx < k; ++kx) {
              const int x = x0 + kx;
              if (x < 0 || x >= W) continue;
              acc += irow[x] * wrow[kx];
            }
          }
        }
        out[(static_cast<size_t>(f) * Ho + oy) * Wo + ox] = acc;
      }
    }
  }

  std::vector<Tensor> parents = {input, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool has_bias = bias.defined();
  return make_node(
      {F, Ho, Wo}, std::move(out), std::move(parents),
      [C, H, W, F, k, Ho, Wo, stride, padding, has_bias](Node& self) {
        Node* pi = self.parents[0].get();
        Node* pw = self.parents[1].get();
        Node* pb = has_bias ? self.parents[2].get() : nullptr;
        const auto& g = self.grad;
        // input gradient: gather form, parallel-safe over input cells
        if (pi->requires_grad) {
          pi->ensure_grad();
          const auto& w = pw->value;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
          for (int c = 0; c < C; ++c) {
            for (int y = 0; y < H; ++y) {
              for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int ky = 0; ky < k; ++ky) {
                  const int ynum = y + padding - ky;
                  if (ynum < 0 || ynum % stride) continue;
                  const int oy = ynum / stride;
                  if (oy >= Ho) continue;
                  for (int kx = 0; kx < k; ++kx) {
                    const int xnum = x + padding - kx;
                    if (xnum < 0 || xnum % stride) continue;
                    const int ox = xnum / stride;
                    if (ox >= Wo) continue;
                    for (int f = 0; f < F; ++f) {
                      acc += g[(static_cast<size_t>(f) * Ho + oy) * Wo + ox] *
                             w[((static_cast<size_t>(f) * C + c) * k + ky) * k + kx];
                    }
                  }
                }
                pi->grad[(static_cast<size_t>(c) * H + y) * W + x] += acc;
              }
            }
          }
        }
        // weight gradient: gather per (f,c,ky,kx)
        if (pw->requires_grad) {
          pw->ensure_grad();
          const auto& in = pi->value;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
          for (int f = 0; f < F; ++f) {
            for (int c = 0; c < C; ++c) {
              for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                  double acc = 0.0;
                  for (int oy = 0; oy < Ho; ++oy) {
                    const int y = oy * stride - padding + ky;
                    if (y < 0 || y >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                      const int x = ox * stride - padding + kx;
                      if (x < 0 || x >= W) continue;
                      acc += g[(static_cast<size_t>(f) * Ho + oy) * Wo + ox] *
                             in[(static_cast<size_t>(c) * H + y) * W + x];
                    }
                  }
                  pw->grad[((static_cast<size_t>(f) * C + c) * k + ky) * k + kx] += acc;
                }
              }
            }
          }
        }
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (int f = 0; f < F; ++f) {
            double acc = 0.0;
            const double* gf = g.data() + static_cast<size_t>(f) * Ho * Wo;
            for (int i = 0; i < Ho * Wo; ++i) acc += gf[i];
            pb->grad[f] += acc;
          }
        }
      },
      "conv2d");
}

Tensor upsample2x(const Tensor& input) {
  if (input.shape().size() != 3)
    throw InvalidArgument("upsample2x: expected [C,H,W]");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const auto& in = input.value();
  std::vector<double> out(static_cast<size_t>(C) * 4 * H * W);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int x = 0; x < 2 * W; ++x)
        out[(static_cast<size_t>(c) * 2 * H + y) * 2 * W + x] =
            in[(static_cast<size_t>(c) * H + y / 2) * W + x / 2];
  return make_node(
      {C, 2 * H, 2 * W}, std::move(out), {input},
      [C, H, W](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < 2 * H; ++y)
            for (int x = 0; x < 2 * W; ++x)
              p->grad[(static_cast<size_t>(c) * H + y / 2) * W + x / 2] +=
                  self.grad[(static_cast<size_t>(c) * 2 * H + y) * 2 * W + x];
      },
      "upsample2x");
}

Tensor downsample2x_avg(const Tensor& input) {
  if (input.shape().size() != 3)
    throw InvalidArgument("downsample2x_avg: expected [C,H,W]");
  const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (H % 2 || W % 2)
    throw InvalidArgument("downsample2x_avg: extents must be even, got " +
                          std::to_string(H) + "x" + std::to_string(W));
  const int Ho = H / 2, Wo = W / 2;
  const auto& in = input.value();
  std::vector<double> out(static_cast<size_t>(C) * Ho * Wo);
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        const double* base = in.data() + (static_cast<size_t>(c) * H + 2 * oy) * W + 2 * ox;
        out[(static_cast<size_t>(c) * Ho + oy) * Wo + ox] =
            (base[0] + base[1] + base[W] + base[W + 1]) * 0.25;
      }
  return make_node(
      {C, Ho, Wo}, std::move(out), {input},
      [C, H, W, Ho, Wo](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
              const double g =
                  0.25 * self.grad[(static_cast<size_t>(c) * Ho + oy) * Wo + ox];
              double* base =
                  p->grad.data() + (static_cast<size_t>(c) * H + 2 * oy) * W + 2 * ox;
              base[0] += g;
              base[1] += g;
              base[W] += g;
              base[W + 1] += g;
            }
      },
      "downsample2x_avg");
}

Tensor concat0(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || sa.empty())
    throw InvalidArgument("concat0: rank mismatch");
  for (size_t d = 1; d < sa.size(); ++d)
    if (sa[d] != sb[d])
      throw InvalidArgument("concat0: trailing dims differ, " + shape_str(sa) +
                            " vs " + shape_str(sb));
  std::vector<int> out_shape = sa;
  out_shape[0] += sb[0];
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.value().begin(), a.value().end());
  out.insert(out.end(), b.value().begin(), b.value().end());
  const int64_t na = a.numel();
  return make_node(
      out_shape, std::move(out), {a, b},
      [na](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (int64_t i = 0; i < na; ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          const int64_t nb = static_cast<int64_t>(pb->value.size());
          for (int64_t i = 0; i < nb; ++i) pb->grad[i] += self.grad[na + i];
        }
      },
      "concat0");
}

Tensor element(const Tensor& a, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= a.numel())
    throw InvalidArgument("element: index " + std::to_string(flat_index) +
                          " out of range for numel " + std::to_string(a.numel()));
  return make_node(
      {1}, {a.value()[flat_index]}, {a},
      [flat_index](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        p->grad[flat_index] += self.grad[0];
      },
      "element");
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  check_shape(shape, "reshape");
  if (numel_of(shape) != a.numel())
    throw InvalidArgument("reshape: element count mismatch, " +
                          shape_str(a.shape()) + " -> " + shape_str(shape));
  return make_node(
      std::move(shape), a.value(), {a},
      [](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      },
      "reshape");
}

Tensor stencil3x3_replicate(const Tensor& a, const std::array<double, 9>& k) {
  const auto& s = a.shape();
  if (s.size() != 2 && s.size() != 3)
    throw InvalidArgument("stencil3x3: expected [H,W] or [C,H,W]");
  const int C = s.size() == 3 ? s[0] : 1;
  const int H = s[s.size() - 2], W = s[s.size() - 1];
  const auto& in = a.value();
  std::vector<double> out(in.size());
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int c = 0; c < C; ++c) {
    const double* ic = in.data() + static_cast<size_t>(c) * H * W;
    double* oc = out.data() + static_cast<size_t>(c) * H * W;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            acc += k[(dy + 1) * 3 + dx + 1] *
                   ic[static_cast<size_t>(clampi(y + dy, H - 1)) * W +
                      clampi(x + dx, W - 1)];
        oc[static_cast<size_t>(y) * W + x] = acc;
      }
  }
  return make_node(
      a.shape(), std::move(out), {a},
      [C, H, W, k, clampi](Node& self) {
        Node* p = self.parents[0].get();
        p->ensure_grad();
        for (int c = 0; c < C; ++c) {
          const double* gc = self.grad.data() + static_cast<size_t>(c) * H * W;
          double* pg = p->grad.data() + static_cast<size_t>(c) * H * W;
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
              const double g = gc[static_cast<size_t>(y) * W + x];
              if (g == 0.0) continue;
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                  pg[static_cast<size_t>(clampi(y + dy, H - 1)) * W +
                     clampi(x + dx, W - 1)] += g * k[(dy + 1) * 3 + dx + 1];
            }
        }
      },
      "stencil3x3");
}

// ---- graph -----------------------------------------------------------------

Tensor make_op(std::vector<int> shape, std::vector<double> value,
               std::vector<Tensor> parents, BackwardFn fn, const char* name) {
  check_shape(shape, name);
  if (static_cast<int64_t>(value.size()) != numel_of(shape))
    throw InvalidArgument(std::string(name) + ": value length does not match shape");
  return make_node(std::move(shape), std::move(value), std::move(parents),
                   std::move(fn), name);
}

void backward(const Tensor& root) {
  if (!root.defined()) throw InvalidArgument("backward: undefined tensor");
  Node* r = root.node().get();
  if (r->value.size() != 1)
    throw InvalidArgument("backward: root must be scalar, got numel " +
                          std::to_string(r->value.size()));
  if (!r->requires_grad) return;

  // Iterative post-order DFS over the requires-grad subgraph. The resulting
  // list is a topological order of the recorded ops.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  r->ensure_grad();
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace md
