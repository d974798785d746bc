#pragma once

// Dense row-major double tensors with reverse-mode gradient accumulation.
// Operations executed while a Tape is active append backward closures; the
// tape replays them in reverse order, which is a reverse topological order of
// the computation because inputs always exist before the op that uses them.
// Every op validates that its outputs are finite and fails fast otherwise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vaca/rng.hpp"
#include "vaca/special.hpp"

namespace vaca {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), 0.0, requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    return Tensor(std::move(shape), v, requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{}, v, requires_grad);
  }
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) +
                                  " does not match data length " + std::to_string(data.size()));
    t.p_->shape = std::move(shape);
    t.p_->value = std::move(data);
    t.set_requires_grad(requires_grad);
    return t;
  }
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.p_->value) v = rng.uniform(lo, hi);
    return t;
  }

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  std::size_t ndim() const { return p_->shape.size(); }
  std::size_t size() const { return p_->value.size(); }
  double* data() { return p_->value.data(); }
  const double* data() const { return p_->value.data(); }
  std::vector<double>& values() { return p_->value; }
  const std::vector<double>& values() const { return p_->value; }
  double& operator[](std::size_t i) { return p_->value[i]; }
  double operator[](std::size_t i) const { return p_->value[i]; }

  double item() const {
    if (size() != 1) throw std::logic_error("Tensor::item: tensor is not a scalar");
    return p_->value[0];
  }

  bool requires_grad() const { return p_ && p_->requires_grad; }
  void set_requires_grad(bool rg) {
    p_->requires_grad = rg;
    if (rg)
      p_->grad.assign(p_->value.size(), 0.0);
    else
      p_->grad.clear();
  }
  double* grad() { return p_->grad.data(); }
  const double* grad() const { return p_->grad.data(); }
  std::vector<double>& grad_vec() { return p_->grad; }
  void zero_grad() {
    if (requires_grad()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
  }

  // Value copy that does not participate in gradient tracking.
  Tensor detach() const {
    Tensor t;
    t.p_ = std::make_shared<Payload>();
    t.p_->shape = p_->shape;
    t.p_->value = p_->value;
    return t;
  }

  bool same_payload(const Tensor& o) const { return p_ == o.p_; }

 private:
  struct Payload {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  Tensor(Shape shape, double fill, bool requires_grad) {
    p_ = std::make_shared<Payload>();
    p_->shape = std::move(shape);
    p_->value.assign(shape_numel(p_->shape), fill);
    set_requires_grad(requires_grad);
  }

  std::shared_ptr<Payload> p_;
};

// Records the backward closures of ops executed while it is the active tape
// for this thread. Tapes nest; inner tape wins.
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(const char* name, std::function<void()> backward) {
    ops_.emplace_back(name, std::move(backward));
  }

  std::size_t num_ops() const { return ops_.size(); }

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every
  // requires_grad tensor reachable from the recorded ops.
  void backward(Tensor& root) {
    if (root.size() != 1)
      throw std::logic_error("Tape::backward: root must be a scalar");
    if (!root.requires_grad())
      throw std::logic_error("Tape::backward: root does not require gradients");
    root.grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->second();
  }

  void clear() { ops_.clear(); }

 private:
  std::vector<std::pair<const char*, std::function<void()>>> ops_;
  Tape* prev_ = nullptr;
  static inline thread_local Tape* active_ = nullptr;
};

namespace detail {

inline void ensure_finite(const Tensor& t, const char* op) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i]))
      throw std::runtime_error(std::string("non-finite result in op '") + op + "' at index " +
                               std::to_string(i));
  }
}

inline bool taping(const Tensor& a) { return Tape::active() && a.requires_grad(); }
inline bool taping(const Tensor& a, const Tensor& b) {
  return Tape::active() && (a.requires_grad() || b.requires_grad());
}

// Trailing-aligned broadcast shape of a and b.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string("shape mismatch in op '") + op + "': " +
                                  shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides padded/zeroed for broadcasting against `out`.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t axis = in.size() - 1 - i;          // axis in `in`
    const std::size_t out_axis = out.size() - 1 - i;     // aligned axis in `out`
    st[out_axis] = (in[axis] == 1) ? 0 : stride;
    stride *= in[axis];
  }
  return st;
}

// Calls fn(flat_out, off_a, off_b) for every output position.
template <class Fn>
inline void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                               const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t n = shape_numel(out);
  const std::size_t nd = out.size();
  std::vector<std::size_t> idx(nd, 0);
  std::size_t offa = 0, offb = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    fn(flat, offa, offb);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      offa += sa[d];
      offb += sb[d];
      if (idx[d] < out[d]) break;
      offa -= sa[d] * out[d];
      offb -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class F, class DA, class DB>
inline Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA dfda,
                        DB dfdb) {
  Tensor out;
  const bool same = a.shape() == b.shape();
  if (same) {
    out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  } else {
    const Shape os = broadcast_shape(a.shape(), b.shape(), name);
    out = Tensor::zeros(os);
    const auto sa = broadcast_strides(a.shape(), os);
    const auto sb = broadcast_strides(b.shape(), os);
    for_each_broadcast(os, sa, sb, [&](std::size_t fo, std::size_t oa, std::size_t ob) {
      out[fo] = f(a[oa], b[ob]);
    });
  }
  ensure_finite(out, name);
  if (taping(a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record(name, [ac, bc, oc, dfda, dfdb]() mutable {
      const double* g = oc.grad();
      if (ac.shape() == bc.shape()) {
        for (std::size_t i = 0; i < ac.size(); ++i) {
          if (ac.requires_grad()) ac.grad()[i] += g[i] * dfda(ac[i], bc[i]);
          if (bc.requires_grad()) bc.grad()[i] += g[i] * dfdb(ac[i], bc[i]);
        }
      } else {
        const Shape os = oc.shape();
        const auto sa = broadcast_strides(ac.shape(), os);
        const auto sb = broadcast_strides(bc.shape(), os);
        for_each_broadcast(os, sa, sb, [&](std::size_t fo, std::size_t oa, std::size_t ob) {
          if (ac.requires_grad()) ac.grad()[oa] += g[fo] * dfda(ac[oa], bc[ob]);
          if (bc.requires_grad()) bc.grad()[ob] += g[fo] * dfdb(ac[oa], bc[ob]);
        });
      }
    });
  }
  return out;
}

// df receives (x, y) with y = f(x).
template <class F, class DF>
inline Tensor unary_op(const Tensor& a, const char* name, F f, DF df) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  ensure_finite(out, name);
  if (taping(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record(name, [ac, oc, df]() mutable {
      const double* g = oc.grad();
      for (std::size_t i = 0; i < ac.size(); ++i) ac.grad()[i] += g[i] * df(ac[i], oc[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor add(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor mul(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor sub(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor sub(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Tensor log(const Tensor& a) {
  return detail::unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}
inline Tensor abs(const Tensor& a) {
  return detail::unary_op(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}
inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a, "sigmoid",
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}
inline Tensor square(const Tensor& a) {
  return detail::unary_op(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Tensor softplus(const Tensor& a) {
  return detail::unary_op(
      a, "softplus",
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}
inline Tensor neg(const Tensor& a) {
  return detail::unary_op(
      a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

// Elementwise ln Gamma / digamma with analytic derivatives (digamma and
// trigamma respectively); domain is strictly positive entries.
inline Tensor lgamma(const Tensor& a) {
  return detail::unary_op(
      a, "lgamma", [](double x) { return vaca::lgamma(x); },
      [](double x, double) { return vaca::digamma(x); });
}
inline Tensor digamma(const Tensor& a) {
  return detail::unary_op(
      a, "digamma", [](double x) { return vaca::digamma(x); },
      [](double x, double) { return vaca::trigamma(x); });
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  Tensor out = Tensor::scalar(acc);
  detail::ensure_finite(out, "sum");
  if (detail::taping(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record("sum", [ac, oc]() mutable {
      const double g = oc.grad()[0];
      for (std::size_t i = 0; i < ac.size(); ++i) ac.grad()[i] += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  Tensor out = Tensor::scalar(acc / static_cast<double>(a.size()));
  detail::ensure_finite(out, "mean");
  if (detail::taping(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record("mean", [ac, oc]() mutable {
      const double g = oc.grad()[0] / static_cast<double>(ac.size());
      for (std::size_t i = 0; i < ac.size(); ++i) ac.grad()[i] += g;
    });
  }
  return out;
}

// 2-D matrix product {m,k} x {k,n} -> {m,n}.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a[i * k + l];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[l * n + j];
    }
  detail::ensure_finite(out, "matmul");
  if (detail::taping(a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record("matmul", [ac, bc, oc, m, k, n]() mutable {
      const double* g = oc.grad();
      if (ac.requires_grad()) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bc[l * n + j];
            ac.grad()[i * k + l] += acc;
          }
      }
      if (bc.requires_grad()) {
        for (std::size_t l = 0; l < k; ++l)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += ac[i * k + l] * g[i * n + j];
            bc.grad()[l * n + j] += acc;
          }
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose: expects a 2-D tensor");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  if (detail::taping(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record("transpose", [ac, oc, m, n]() mutable {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ac.grad()[i * n + j] += oc.grad()[j * m + i];
    });
  }
  return out;
}

// Same data, new shape (copy; gradient passes through unchanged).
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                " -> " + shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape), a.values());
  if (detail::taping(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record("reshape", [ac, oc]() mutable {
      for (std::size_t i = 0; i < ac.size(); ++i) ac.grad()[i] += oc.grad()[i];
    });
  }
  return out;
}

// Concatenate along the last axis; all leading extents must match.
inline Tensor cat_last(const Tensor& a, const Tensor& b) {
  if (a.ndim() != b.ndim() || a.ndim() == 0)
    throw std::invalid_argument("cat_last: rank mismatch");
  for (std::size_t d = 0; d + 1 < a.ndim(); ++d)
    if (a.shape()[d] != b.shape()[d])
      throw std::invalid_argument("cat_last: leading extents differ: " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
  const std::size_t ca = a.shape().back(), cb = b.shape().back();
  Shape os = a.shape();
  os.back() = ca + cb;
  const std::size_t rows = a.size() / ca;
  Tensor out = Tensor::zeros(os);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < ca; ++i) out[r * (ca + cb) + i] = a[r * ca + i];
    for (std::size_t i = 0; i < cb; ++i) out[r * (ca + cb) + ca + i] = b[r * cb + i];
  }
  if (detail::taping(a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record("cat_last", [ac, bc, oc, rows, ca, cb]() mutable {
      for (std::size_t r = 0; r < rows; ++r) {
        if (ac.requires_grad())
          for (std::size_t i = 0; i < ca; ++i)
            ac.grad()[r * ca + i] += oc.grad()[r * (ca + cb) + i];
        if (bc.requires_grad())
          for (std::size_t i = 0; i < cb; ++i)
            bc.grad()[r * cb + i] += oc.grad()[r * (ca + cb) + ca + i];
      }
    });
  }
  return out;
}

// Contiguous slice [start, start+len) of the last axis.
inline Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.ndim() == 0) throw std::invalid_argument("slice_last: scalar input");
  const std::size_t c = a.shape().back();
  if (start + len > c) throw std::invalid_argument("slice_last: range out of bounds");
  Shape os = a.shape();
  os.back() = len;
  const std::size_t rows = a.size() / c;
  Tensor out = Tensor::zeros(os);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = a[r * c + start + i];
  if (detail::taping(a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record("slice_last", [ac, oc, rows, c, start, len]() mutable {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < len; ++i)
          ac.grad()[r * c + start + i] += oc.grad()[r * len + i];
    });
  }
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return sub(s, a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace vaca
