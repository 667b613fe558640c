#include <cmath>

#include "ops_internal.hpp"

namespace mvstr::ops {

using namespace detail;

namespace {

enum class BinOp { add, sub, mul, div };

template <class T>
T apply(BinOp op, T a, T b) {
  switch (op) {
    case BinOp::add: return a + b;
    case BinOp::sub: return a - b;
    case BinOp::mul: return a * b;
    case BinOp::div: return a / b;
  }
  return T(0);
}

Tensor binary_raw(BinOp op, const Tensor& a, const Tensor& b, const char* what) {
  check_same_precision(a, b, what);
  const Shape out = broadcast_shape(a.shape(), b.shape(), what);
  return dispatch(a.precision(), [&]<class T>() {
    const auto n = static_cast<std::size_t>(shape_numel(out));
    std::vector<T> buf(n);
    if (b.numel() == 1 && a.shape() == out) {
      auto x = a.data<T>();
      const T y = b.data<T>()[0];
      for (std::size_t i = 0; i < n; ++i) buf[i] = apply(op, x[i], y);
    } else {
      const Tensor ea = a.shape() == out ? a : expand_raw(a, out);
      const Tensor eb = b.shape() == out ? b : expand_raw(b, out);
      auto x = ea.data<T>();
      auto y = eb.data<T>();
      switch (op) {
        case BinOp::add: for (std::size_t i = 0; i < n; ++i) buf[i] = x[i] + y[i]; break;
        case BinOp::sub: for (std::size_t i = 0; i < n; ++i) buf[i] = x[i] - y[i]; break;
        case BinOp::mul: for (std::size_t i = 0; i < n; ++i) buf[i] = x[i] * y[i]; break;
        case BinOp::div: for (std::size_t i = 0; i < n; ++i) buf[i] = x[i] / y[i]; break;
      }
    }
    return Tensor::from_buffer<T>(out, std::move(buf));
  });
}

template <class F>
Tensor unary_raw(const Tensor& x, F f) {
  return dispatch(x.precision(), [&]<class T>() {
    auto src = x.data<T>();
    std::vector<T> buf(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) buf[i] = f(src[i]);
    return Tensor::from_buffer<T>(x.shape(), std::move(buf));
  });
}

// out[i] = g[i] * f(x[i])
template <class F>
Tensor grad_unary(const Tensor& g, const Tensor& x, F f) {
  return dispatch(x.precision(), [&]<class T>() {
    auto gs = g.data<T>();
    auto xs = x.data<T>();
    std::vector<T> buf(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) buf[i] = gs[i] * f(xs[i]);
    return Tensor::from_buffer<T>(x.shape(), std::move(buf));
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = binary_raw(BinOp::add, a, b, "add");
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record_op(out, {a, b}, [sa = a.shape(), sb = b.shape(), ga, gb](const Tensor& g) {
    return std::vector<Tensor>{ga ? sum_to(g, sa) : Tensor{}, gb ? sum_to(g, sb) : Tensor{}};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = binary_raw(BinOp::sub, a, b, "sub");
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record_op(out, {a, b}, [sa = a.shape(), sb = b.shape(), ga, gb](const Tensor& g) {
    return std::vector<Tensor>{ga ? sum_to(g, sa) : Tensor{},
                               gb ? sum_to(mul_scalar(g, -1.0), sb) : Tensor{}};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = binary_raw(BinOp::mul, a, b, "mul");
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record_op(out, {a, b}, [a = a.detach(), b = b.detach(), ga, gb](const Tensor& g) {
    return std::vector<Tensor>{ga ? sum_to(mul(g, b), a.shape()) : Tensor{},
                               gb ? sum_to(mul(g, a), b.shape()) : Tensor{}};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = binary_raw(BinOp::div, a, b, "div");
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record_op(out, {a, b},
                   [a = a.detach(), b = b.detach(), o = out.detach(), ga, gb](const Tensor& g) {
                     Tensor gq = div(g, b);
                     return std::vector<Tensor>{
                         ga ? sum_to(gq, a.shape()) : Tensor{},
                         gb ? sum_to(mul_scalar(mul(gq, o), -1.0), b.shape()) : Tensor{}};
                   });
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = dispatch(a.precision(), [&]<class T>() {
    const T v = static_cast<T>(s);
    return unary_raw(a, [v](T x) { return x + v; });
  });
  return record_op(out, {a}, [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  Tensor out = dispatch(a.precision(), [&]<class T>() {
    const T v = static_cast<T>(s);
    return unary_raw(a, [v](T x) { return x * v; });
  });
  return record_op(out, {a}, [s](const Tensor& g) {
    return std::vector<Tensor>{mul_scalar(g, s)};
  });
}

Tensor elu(const Tensor& x) {
  Tensor out = unary_raw(x, [](auto v) { return v > 0 ? v : std::expm1(v); });
  return record_op(out, {x}, [x = x.detach()](const Tensor& g) {
    return std::vector<Tensor>{grad_unary(g, x, [](auto v) {
      return v > 0 ? decltype(v)(1) : std::exp(v);
    })};
  });
}

Tensor elu_plus_one(const Tensor& x) {
  Tensor out = unary_raw(x, [](auto v) { return v > 0 ? v + 1 : std::exp(v); });
  return record_op(out, {x}, [x = x.detach()](const Tensor& g) {
    return std::vector<Tensor>{grad_unary(g, x, [](auto v) {
      return v > 0 ? decltype(v)(1) : std::exp(v);
    })};
  });
}

Tensor relu(const Tensor& x) {
  Tensor out = unary_raw(x, [](auto v) { return v > 0 ? v : decltype(v)(0); });
  return record_op(out, {x}, [x = x.detach()](const Tensor& g) {
    return std::vector<Tensor>{grad_unary(g, x, [](auto v) {
      return v > 0 ? decltype(v)(1) : decltype(v)(0);
    })};
  });
}

Tensor exp(const Tensor& x) {
  Tensor out = unary_raw(x, [](auto v) { return std::exp(v); });
  return record_op(out, {x}, [o = out.detach()](const Tensor& g) {
    return std::vector<Tensor>{mul(g, o)};
  });
}

Tensor smooth_l1(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("smooth_l1: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  const Tensor d = binary_raw(BinOp::sub, a, b, "smooth_l1");
  Tensor out = unary_raw(d, [](auto v) {
    using T = decltype(v);
    const T m = std::abs(v);
    return m < T(1) ? T(0.5) * v * v : m - T(0.5);
  });
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record_op(out, {a, b}, [d, ga, gb](const Tensor& g) {
    Tensor gd = grad_unary(g, d, [](auto v) {
      using T = decltype(v);
      if (std::abs(v) < T(1)) return v;
      return v > 0 ? T(1) : T(-1);
    });
    return std::vector<Tensor>{ga ? gd : Tensor{}, gb ? mul_scalar(gd, -1.0) : Tensor{}};
  });
}

Tensor sum(const Tensor& x) {
  Tensor out = dispatch(x.precision(), [&]<class T>() {
    auto s = x.data<T>();
    // Pairwise summation keeps float32 error small on large buffers.
    auto rec = [&](auto&& self, std::size_t lo, std::size_t hi) -> T {
      if (hi - lo <= 64) {
        T acc = 0;
        for (std::size_t i = lo; i < hi; ++i) acc += s[i];
        return acc;
      }
      const std::size_t mid = lo + (hi - lo) / 2;
      return self(self, lo, mid) + self(self, mid, hi);
    };
    return Tensor::from_buffer<T>({}, std::vector<T>{rec(rec, 0, s.size())});
  });
  return record_op(out, {x}, [shape = x.shape()](const Tensor& g) {
    return std::vector<Tensor>{expand_raw(g, shape)};
  });
}

Tensor sum(const Tensor& x, int dim, bool keepdim) {
  const int d = norm_dim(dim, x.rank(), "sum");
  const auto sp = split_axis(x.shape(), d);
  Shape kept = x.shape();
  kept[static_cast<std::size_t>(d)] = 1;
  Tensor out = dispatch(x.precision(), [&]<class T>() {
    auto s = x.data<T>();
    std::vector<T> buf(static_cast<std::size_t>(sp.outer * sp.inner), T(0));
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      T* dst = buf.data() + o * sp.inner;
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T* src = s.data() + (o * sp.n + k) * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
    }
    return Tensor::from_buffer<T>(kept, std::move(buf));
  });
  out = record_op(out, {x}, [shape = x.shape(), kept](const Tensor& g) {
    return std::vector<Tensor>{expand_raw(g.view_as(kept), shape)};
  });
  if (keepdim) return out;
  return squeeze(out, d);
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw UsageError("mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, int dim, bool keepdim) {
  const int d = norm_dim(dim, x.rank(), "mean");
  const auto n = x.shape()[static_cast<std::size_t>(d)];
  if (n == 0) throw UsageError("mean over empty dimension");
  return mul_scalar(sum(x, d, keepdim), 1.0 / static_cast<double>(n));
}

}  // namespace mvstr::ops
