#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ops_internal.hpp"

namespace mvstr::ops {

namespace detail {

template <class T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> A(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const Mat> B(b, trans_b ? n : k, trans_b ? k : n);
  Eigen::Map<Mat> C(c, m, n);
  if (!accumulate) C.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) C.noalias() += A * B;
  else if (trans_a && !trans_b) C.noalias() += A.transpose() * B;
  else if (!trans_a && trans_b) C.noalias() += A * B.transpose();
  else C.noalias() += A.transpose() * B.transpose();
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const double*,
                           const double*, double*, bool);

}  // namespace detail

using namespace detail;

// ---- matmul ------------------------------------------------------------------

namespace {

struct BatchPlan {
  Shape batch;
  std::vector<std::int64_t> a_off, b_off;  // matrix index per output batch
};

BatchPlan plan_batches(const Shape& a, const Shape& b) {
  const Shape ab(a.begin(), a.end() - 2);
  const Shape bb(b.begin(), b.end() - 2);
  BatchPlan p;
  p.batch = broadcast_shape(ab, bb, "matmul");
  const auto sa = broadcast_strides(ab, p.batch);
  const auto sb = broadcast_strides(bb, p.batch);
  const auto n = shape_numel(p.batch);
  const int r = static_cast<int>(p.batch.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    p.a_off.push_back(oa);
    p.b_off.push_back(ob);
    for (int k = r - 1; k >= 0; --k) {
      auto ku = static_cast<std::size_t>(k);
      ++idx[ku];
      oa += sa[ku];
      ob += sb[ku];
      if (idx[ku] < p.batch[ku]) break;
      oa -= idx[ku] * sa[ku];
      ob -= idx[ku] * sb[ku];
      idx[ku] = 0;
    }
  }
  return p;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_precision(a, b, "matmul");
  if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  const BatchPlan plan = plan_batches(a.shape(), b.shape());
  Shape out_shape = plan.batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = dispatch(a.precision(), [&]<class T>() {
    std::vector<T> buf(static_cast<std::size_t>(shape_numel(out_shape)));
    auto A = a.data<T>();
    auto B = b.data<T>();
    for (std::size_t i = 0; i < plan.a_off.size(); ++i) {
      gemm<T>(false, false, m, n, k, A.data() + plan.a_off[i] * m * k,
              B.data() + plan.b_off[i] * k * n, buf.data() + static_cast<std::int64_t>(i) * m * n,
              false);
    }
    return Tensor::from_buffer<T>(out_shape, std::move(buf));
  });
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return record_op(out, {a, b}, [a = a.detach(), b = b.detach(), plan, m, n, k, ga, gb](
                                    const Tensor& g) {
    return dispatch(g.precision(), [&]<class T>() {
      std::vector<Tensor> grads(2);
      auto G = g.data<T>();
      auto A = a.data<T>();
      auto B = b.data<T>();
      if (ga) {
        std::vector<T> da(static_cast<std::size_t>(a.numel()), T(0));
        for (std::size_t i = 0; i < plan.a_off.size(); ++i) {
          gemm<T>(false, true, m, k, n, G.data() + static_cast<std::int64_t>(i) * m * n,
                  B.data() + plan.b_off[i] * k * n, da.data() + plan.a_off[i] * m * k, true);
        }
        grads[0] = Tensor::from_buffer<T>(a.shape(), std::move(da));
      }
      if (gb) {
        std::vector<T> db(static_cast<std::size_t>(b.numel()), T(0));
        for (std::size_t i = 0; i < plan.b_off.size(); ++i) {
          gemm<T>(true, false, k, n, m, A.data() + plan.a_off[i] * m * k,
                  G.data() + static_cast<std::int64_t>(i) * m * n, db.data() + plan.b_off[i] * k * n,
                  true);
        }
        grads[1] = Tensor::from_buffer<T>(b.shape(), std::move(db));
      }
      return grads;
    });
  });
}

// ---- convolution --------------------------------------------------------------

namespace {

struct ConvGeom {
  std::int64_t B, C, D, H, W;
  std::int64_t O, kd, kh, kw;
  std::int64_t sd, sh, sw, pd, ph, pw;
  std::int64_t Do, Ho, Wo;
  std::int64_t ck() const { return C * kd * kh * kw; }
  std::int64_t in_plane() const { return C * D * H * W; }
  std::int64_t out_pix() const { return Do * Ho * Wo; }
  bool pointwise() const {
    return kd == 1 && kh == 1 && kw == 1 && sd == 1 && sh == 1 && sw == 1 && pd == 0 && ph == 0 &&
           pw == 0;
  }
};

// Output columns [lo, hi) whose tap e lands inside the input row.
std::pair<std::int64_t, std::int64_t> valid_cols(const ConvGeom& g, std::int64_t e) {
  // iw = ow * sw - pw + e must satisfy 0 <= iw < W.
  const std::int64_t off = e - g.pw;
  std::int64_t lo = off >= 0 ? 0 : (-off + g.sw - 1) / g.sw;
  std::int64_t hi = g.W - off <= 0 ? 0 : (g.W - off + g.sw - 1) / g.sw;
  lo = std::min(lo, g.Wo);
  hi = std::clamp(hi, lo, g.Wo);
  return {lo, hi};
}

template <class T>
void im2col(const ConvGeom& g, const T* x, T* col) {
  const auto P = g.out_pix();
  for (std::int64_t c = 0; c < g.C; ++c) {
    for (std::int64_t a = 0; a < g.kd; ++a) {
      for (std::int64_t bb = 0; bb < g.kh; ++bb) {
        for (std::int64_t e = 0; e < g.kw; ++e) {
          const std::int64_t r = ((c * g.kd + a) * g.kh + bb) * g.kw + e;
          T* dst = col + r * P;
          for (std::int64_t od = 0; od < g.Do; ++od) {
            const std::int64_t id = od * g.sd - g.pd + a;
            for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
              const std::int64_t ih = oh * g.sh - g.ph + bb;
              T* row = dst + (od * g.Ho + oh) * g.Wo;
              if (id < 0 || id >= g.D || ih < 0 || ih >= g.H) {
                std::fill_n(row, g.Wo, T(0));
                continue;
              }
              const T* src = x + ((c * g.D + id) * g.H + ih) * g.W;
              const auto [lo, hi] = valid_cols(g, e);
              std::fill_n(row, lo, T(0));
              if (g.sw == 1) {
                std::copy_n(src + lo - g.pw + e, hi - lo, row + lo);
              } else {
                for (std::int64_t ow = lo; ow < hi; ++ow) row[ow] = src[ow * g.sw - g.pw + e];
              }
              std::fill(row + hi, row + g.Wo, T(0));
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeom& g, const T* col, T* dx) {
  const auto P = g.out_pix();
  for (std::int64_t c = 0; c < g.C; ++c) {
    for (std::int64_t a = 0; a < g.kd; ++a) {
      for (std::int64_t bb = 0; bb < g.kh; ++bb) {
        for (std::int64_t e = 0; e < g.kw; ++e) {
          const std::int64_t r = ((c * g.kd + a) * g.kh + bb) * g.kw + e;
          const T* src = col + r * P;
          for (std::int64_t od = 0; od < g.Do; ++od) {
            const std::int64_t id = od * g.sd - g.pd + a;
            if (id < 0 || id >= g.D) continue;
            for (std::int64_t oh = 0; oh < g.Ho; ++oh) {
              const std::int64_t ih = oh * g.sh - g.ph + bb;
              if (ih < 0 || ih >= g.H) continue;
              const T* row = src + (od * g.Ho + oh) * g.Wo;
              T* dst = dx + ((c * g.D + id) * g.H + ih) * g.W;
              const auto [lo, hi] = valid_cols(g, e);
              T* d0 = dst - g.pw + e;
              if (g.sw == 1) {
                for (std::int64_t ow = lo; ow < hi; ++ow) d0[ow] += row[ow];
              } else {
                for (std::int64_t ow = lo; ow < hi; ++ow) d0[ow * g.sw] += row[ow];
              }
            }
          }
        }
      }
    }
  }
}

Tensor conv_core(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvGeom& geom) {
  const Shape out_shape{geom.B, geom.O, geom.Do, geom.Ho, geom.Wo};
  Tensor out = dispatch(x.precision(), [&]<class T>() {
    const auto P = geom.out_pix();
    const auto CK = geom.ck();
    std::vector<T> buf(static_cast<std::size_t>(shape_numel(out_shape)));
    std::vector<T> col(geom.pointwise() ? 0 : static_cast<std::size_t>(CK * P));
    auto X = x.data<T>();
    auto Wt = w.data<T>();
    for (std::int64_t b = 0; b < geom.B; ++b) {
      const T* xb = X.data() + b * geom.in_plane();
      const T* cb = xb;
      if (!geom.pointwise()) {
        im2col<T>(geom, xb, col.data());
        cb = col.data();
      }
      T* ob = buf.data() + b * geom.O * P;
      gemm<T>(false, false, geom.O, P, CK, Wt.data(), cb, ob, false);
      if (bias.defined()) {
        auto bs = bias.data<T>();
        for (std::int64_t o = 0; o < geom.O; ++o) {
          T* row = ob + o * P;
          for (std::int64_t p = 0; p < P; ++p) row[p] += bs[static_cast<std::size_t>(o)];
        }
      }
    }
    return Tensor::from_buffer<T>(out_shape, std::move(buf));
  });
  const bool gx = x.requires_grad(), gw = w.requires_grad(),
             gbias = bias.defined() && bias.requires_grad();
  return record_op(out, {x, w, bias}, [x = x.detach(), w = w.detach(), geom, gx, gw, gbias,
                                       has_bias = bias.defined()](const Tensor& g) {
    return dispatch(g.precision(), [&]<class T>() {
      const auto P = geom.out_pix();
      const auto CK = geom.ck();
      auto G = g.data<T>();
      auto X = x.data<T>();
      auto Wt = w.data<T>();
      std::vector<T> dx(gx ? static_cast<std::size_t>(x.numel()) : 0, T(0));
      std::vector<T> dw(gw ? static_cast<std::size_t>(w.numel()) : 0, T(0));
      std::vector<T> db(gbias ? static_cast<std::size_t>(geom.O) : 0, T(0));
      std::vector<T> col(geom.pointwise() ? 0 : static_cast<std::size_t>(CK * P));
      std::vector<T> dcol(gx && !geom.pointwise() ? static_cast<std::size_t>(CK * P) : 0);
      for (std::int64_t b = 0; b < geom.B; ++b) {
        const T* gb = G.data() + b * geom.O * P;
        if (gw) {
          const T* cb = X.data() + b * geom.in_plane();
          if (!geom.pointwise()) {
            im2col<T>(geom, cb, col.data());
            cb = col.data();
          }
          gemm<T>(false, true, geom.O, CK, P, gb, cb, dw.data(), true);
        }
        if (gx) {
          T* dxb = dx.data() + b * geom.in_plane();
          if (geom.pointwise()) {
            gemm<T>(true, false, CK, P, geom.O, Wt.data(), gb, dxb, true);
          } else {
            gemm<T>(true, false, CK, P, geom.O, Wt.data(), gb, dcol.data(), false);
            col2im<T>(geom, dcol.data(), dxb);
          }
        }
        if (gbias) {
          for (std::int64_t o = 0; o < geom.O; ++o) {
            const T* row = gb + o * P;
            T acc = 0;
            for (std::int64_t p = 0; p < P; ++p) acc += row[p];
            db[static_cast<std::size_t>(o)] += acc;
          }
        }
      }
      std::vector<Tensor> grads(3);
      if (gx) grads[0] = Tensor::from_buffer<T>(x.shape(), std::move(dx));
      if (gw) grads[1] = Tensor::from_buffer<T>(w.shape(), std::move(dw));
      if (gbias) grads[2] = Tensor::from_buffer<T>({geom.O}, std::move(db));
      (void)has_bias;
      return grads;
    });
  });
}

ConvGeom make_geom(const Shape& xs, const Shape& ws, std::array<int, 3> stride,
                   std::array<int, 3> padding, const char* what) {
  if (xs.size() != 5 || ws.size() != 5) {
    throw DimensionError(std::string(what) + ": bad ranks " + shape_str(xs) + ", " + shape_str(ws));
  }
  if (xs[1] != ws[1]) {
    throw DimensionError(std::string(what) + ": input channels of " + shape_str(xs) +
                         " do not match kernel " + shape_str(ws));
  }
  for (int i = 0; i < 3; ++i) {
    if (stride[static_cast<std::size_t>(i)] < 1 || padding[static_cast<std::size_t>(i)] < 0) {
      throw DimensionError(std::string(what) + ": invalid stride or padding");
    }
  }
  ConvGeom g{};
  g.B = xs[0];
  g.C = xs[1];
  g.D = xs[2];
  g.H = xs[3];
  g.W = xs[4];
  g.O = ws[0];
  g.kd = ws[2];
  g.kh = ws[3];
  g.kw = ws[4];
  g.sd = stride[0];
  g.sh = stride[1];
  g.sw = stride[2];
  g.pd = padding[0];
  g.ph = padding[1];
  g.pw = padding[2];
  g.Do = (g.D + 2 * g.pd - g.kd) / g.sd + 1;
  g.Ho = (g.H + 2 * g.ph - g.kh) / g.sh + 1;
  g.Wo = (g.W + 2 * g.pw - g.kw) / g.sw + 1;
  if (g.Do <= 0 || g.Ho <= 0 || g.Wo <= 0) {
    throw DimensionError(std::string(what) + ": kernel larger than padded input");
  }
  return g;
}

void check_conv_operands(const Tensor& x, const Tensor& w, const Tensor& bias, const char* what) {
  check_same_precision(x, w, what);
  if (bias.defined()) {
    check_same_precision(x, bias, what);
    if (bias.rank() != 1 || bias.dim(0) != w.dim(0)) {
      throw DimensionError(std::string(what) + ": bias " + shape_str(bias.shape()) +
                           " does not match kernel " + shape_str(w.shape()));
    }
  }
  for (int i = 2; i < w.rank(); ++i) {
    if (w.dim(i) % 2 == 0) {
      throw DimensionError(std::string(what) + ": kernel sizes must be odd, got " +
                           shape_str(w.shape()));
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::array<int, 2> stride,
              std::array<int, 2> padding) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw DimensionError("conv2d: expected x[B,C,H,W] and w[O,C,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  check_conv_operands(x, w, bias, "conv2d");
  const Shape xs{x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)};
  const Shape ws{w.dim(0), w.dim(1), 1, w.dim(2), w.dim(3)};
  const auto geom = make_geom(xs, ws, {1, stride[0], stride[1]}, {0, padding[0], padding[1]}, "conv2d");
  Tensor y = conv_core(reshape(x, xs), reshape(w, ws), bias, geom);
  return squeeze(y, 2);
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias, std::array<int, 3> stride,
              std::array<int, 3> padding) {
  if (x.rank() != 5 || w.rank() != 5) {
    throw DimensionError("conv3d: expected x[B,C,D,H,W] and w[O,C,kd,kh,kw], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  check_conv_operands(x, w, bias, "conv3d");
  const auto geom = make_geom(x.shape(), w.shape(), stride, padding, "conv3d");
  return conv_core(x, w, bias, geom);
}

// ---- normalization / softmax ----------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, int axis) {
  const int ax = norm_dim(axis, x.rank(), "layer_norm");
  const auto sp = split_axis(x.shape(), ax);
  if (sp.n < 1) throw DimensionError("layer_norm: empty normalized dimension");
  if (gamma.shape() != Shape{sp.n} || beta.shape() != Shape{sp.n}) {
    throw DimensionError("layer_norm: affine parameters must have shape [" + std::to_string(sp.n) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  check_same_precision(x, gamma, "layer_norm");
  check_same_precision(x, beta, "layer_norm");

  Tensor xhat_t, rstd_t;
  Tensor out = dispatch(x.precision(), [&]<class T>() {
    auto X = x.data<T>();
    auto gm = gamma.data<T>();
    auto bt = beta.data<T>();
    std::vector<T> y(X.size()), xhat(X.size());
    std::vector<T> rstd(static_cast<std::size_t>(sp.outer * sp.inner));
    std::vector<double> mu(static_cast<std::size_t>(sp.inner)), var(static_cast<std::size_t>(sp.inner));
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      const T* xo = X.data() + o * sp.n * sp.inner;
      std::fill(mu.begin(), mu.end(), 0.0);
      std::fill(var.begin(), var.end(), 0.0);
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T* row = xo + k * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) mu[static_cast<std::size_t>(i)] += row[i];
      }
      for (auto& m : mu) m /= static_cast<double>(sp.n);
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T* row = xo + k * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const double d = row[i] - mu[static_cast<std::size_t>(i)];
          var[static_cast<std::size_t>(i)] += d * d;
        }
      }
      T* rs = rstd.data() + o * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        rs[i] = static_cast<T>(1.0 / std::sqrt(var[static_cast<std::size_t>(i)] / static_cast<double>(sp.n) + eps));
      }
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const std::int64_t base = (o * sp.n + k) * sp.inner;
        const T gk = gm[static_cast<std::size_t>(k)], bk = bt[static_cast<std::size_t>(k)];
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const T h = static_cast<T>((X[static_cast<std::size_t>(base + i)] - mu[static_cast<std::size_t>(i)]) * rs[i]);
          xhat[static_cast<std::size_t>(base + i)] = h;
          y[static_cast<std::size_t>(base + i)] = gk * h + bk;
        }
      }
    }
    xhat_t = Tensor::from_buffer<T>(x.shape(), std::move(xhat));
    rstd_t = Tensor::from_buffer<T>({sp.outer, sp.inner}, std::move(rstd));
    return Tensor::from_buffer<T>(x.shape(), std::move(y));
  });
  const bool gx = x.requires_grad(), gg = gamma.requires_grad(), gb = beta.requires_grad();
  return record_op(out, {x, gamma, beta}, [xhat_t, rstd_t, gamma = gamma.detach(), sp, gx, gg,
                                           gb](const Tensor& g) {
    return dispatch(g.precision(), [&]<class T>() {
      auto G = g.data<T>();
      auto H = xhat_t.data<T>();
      auto R = rstd_t.data<T>();
      auto gm = gamma.data<T>();
      std::vector<T> dx(gx ? G.size() : 0);
      std::vector<T> dgamma(static_cast<std::size_t>(sp.n), T(0)), dbeta(static_cast<std::size_t>(sp.n), T(0));
      std::vector<double> m1(static_cast<std::size_t>(sp.inner)), m2(static_cast<std::size_t>(sp.inner));
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        std::fill(m1.begin(), m1.end(), 0.0);
        std::fill(m2.begin(), m2.end(), 0.0);
        for (std::int64_t k = 0; k < sp.n; ++k) {
          const std::int64_t base = (o * sp.n + k) * sp.inner;
          const T gk = gm[static_cast<std::size_t>(k)];
          double dg = 0, dbt = 0;
          for (std::int64_t i = 0; i < sp.inner; ++i) {
            const auto idx = static_cast<std::size_t>(base + i);
            const double dh = static_cast<double>(G[idx]) * gk;
            m1[static_cast<std::size_t>(i)] += dh;
            m2[static_cast<std::size_t>(i)] += dh * H[idx];
            dg += static_cast<double>(G[idx]) * H[idx];
            dbt += G[idx];
          }
          dgamma[static_cast<std::size_t>(k)] += static_cast<T>(dg);
          dbeta[static_cast<std::size_t>(k)] += static_cast<T>(dbt);
        }
        if (!gx) continue;
        const double inv_n = 1.0 / static_cast<double>(sp.n);
        for (std::int64_t k = 0; k < sp.n; ++k) {
          const std::int64_t base = (o * sp.n + k) * sp.inner;
          const T gk = gm[static_cast<std::size_t>(k)];
          for (std::int64_t i = 0; i < sp.inner; ++i) {
            const auto idx = static_cast<std::size_t>(base + i);
            const auto iu = static_cast<std::size_t>(i);
            const double dh = static_cast<double>(G[idx]) * gk;
            dx[idx] = static_cast<T>(R[static_cast<std::size_t>(o * sp.inner + i)] *
                                     (dh - m1[iu] * inv_n - H[idx] * m2[iu] * inv_n));
          }
        }
      }
      std::vector<Tensor> grads(3);
      if (gx) grads[0] = Tensor::from_buffer<T>(g.shape(), std::move(dx));
      if (gg) grads[1] = Tensor::from_buffer<T>({sp.n}, std::move(dgamma));
      if (gb) grads[2] = Tensor::from_buffer<T>({sp.n}, std::move(dbeta));
      return grads;
    });
  });
}

Tensor softmax(const Tensor& x, int dim) {
  const int d = norm_dim(dim, x.rank(), "softmax");
  const auto sp = split_axis(x.shape(), d);
  Tensor out = dispatch(x.precision(), [&]<class T>() {
    auto X = x.data<T>();
    std::vector<T> y(X.size());
    std::vector<T> mx(static_cast<std::size_t>(sp.inner)), sum(static_cast<std::size_t>(sp.inner));
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      const std::int64_t base = o * sp.n * sp.inner;
      std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
      std::fill(sum.begin(), sum.end(), T(0));
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T* row = X.data() + base + k * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) mx[static_cast<std::size_t>(i)] = std::max(mx[static_cast<std::size_t>(i)], row[i]);
      }
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const T* row = X.data() + base + k * sp.inner;
        T* yr = y.data() + base + k * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          yr[i] = std::exp(row[i] - mx[static_cast<std::size_t>(i)]);
          sum[static_cast<std::size_t>(i)] += yr[i];
        }
      }
      for (std::int64_t k = 0; k < sp.n; ++k) {
        T* yr = y.data() + base + k * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) yr[i] /= sum[static_cast<std::size_t>(i)];
      }
    }
    return Tensor::from_buffer<T>(x.shape(), std::move(y));
  });
  return record_op(out, {x}, [o = out.detach(), sp](const Tensor& g) {
    return std::vector<Tensor>{dispatch(g.precision(), [&]<class T>() {
      auto G = g.data<T>();
      auto Y = o.data<T>();
      std::vector<T> dx(G.size());
      std::vector<T> dot(static_cast<std::size_t>(sp.inner));
      for (std::int64_t ou = 0; ou < sp.outer; ++ou) {
        const std::int64_t base = ou * sp.n * sp.inner;
        std::fill(dot.begin(), dot.end(), T(0));
        for (std::int64_t k = 0; k < sp.n; ++k) {
          for (std::int64_t i = 0; i < sp.inner; ++i) {
            const auto idx = static_cast<std::size_t>(base + k * sp.inner + i);
            dot[static_cast<std::size_t>(i)] += G[idx] * Y[idx];
          }
        }
        for (std::int64_t k = 0; k < sp.n; ++k) {
          for (std::int64_t i = 0; i < sp.inner; ++i) {
            const auto idx = static_cast<std::size_t>(base + k * sp.inner + i);
            dx[idx] = Y[idx] * (G[idx] - dot[static_cast<std::size_t>(i)]);
          }
        }
      }
      return Tensor::from_buffer<T>(g.shape(), std::move(dx));
    })};
  });
}

// ---- sampling ----------------------------------------------------------------------

GridSample grid_sample_bilinear(const Tensor& x, const Tensor& grid) {
  if (x.rank() != 4 || grid.rank() != 4 || grid.dim(3) != 2 || grid.dim(0) != x.dim(0)) {
    throw DimensionError("grid_sample_bilinear: expected x[B,C,H,W] and grid[B,H',W',2], got " +
                         shape_str(x.shape()) + " and " + shape_str(grid.shape()));
  }
  check_same_precision(x, grid, "grid_sample_bilinear");
  const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto Ho = grid.dim(1), Wo = grid.dim(2);
  const auto P = Ho * Wo;

  GridSample res;
  dispatch(x.precision(), [&]<class T>() {
    auto X = x.data<T>();
    auto Gd = grid.data<T>();
    std::vector<T> out(static_cast<std::size_t>(B * C * P), T(0));
    std::vector<T> valid(static_cast<std::size_t>(B * P), T(0));
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t p = 0; p < P; ++p) {
        const T gx = Gd[static_cast<std::size_t>((b * P + p) * 2)];
        const T gy = Gd[static_cast<std::size_t>((b * P + p) * 2 + 1)];
        if (!std::isfinite(gx) || !std::isfinite(gy)) continue;
        valid[static_cast<std::size_t>(b * P + p)] =
            (gx >= 0 && gx <= W - 1 && gy >= 0 && gy <= H - 1) ? T(1) : T(0);
        const T fx = std::floor(gx), fy = std::floor(gy);
        if (fx < -1 || fy < -1 || fx > W - 1 || fy > H - 1) continue;
        const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
        const T ax = gx - fx, ay = gy - fy;
        const std::int64_t xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
        const T wx[2] = {1 - ax, ax}, wy[2] = {1 - ay, ay};
        for (int j = 0; j < 2; ++j) {
          if (ys[j] < 0 || ys[j] >= H) continue;
          for (int i = 0; i < 2; ++i) {
            if (xs[i] < 0 || xs[i] >= W) continue;
            const T wgt = wx[i] * wy[j];
            const T* src = X.data() + b * C * H * W + ys[j] * W + xs[i];
            T* dst = out.data() + b * C * P + p;
            for (std::int64_t c = 0; c < C; ++c) dst[c * P] += wgt * src[c * H * W];
          }
        }
      }
    }
    res.output = Tensor::from_buffer<T>({B, C, Ho, Wo}, std::move(out));
    res.valid = Tensor::from_buffer<T>({B, Ho, Wo}, std::move(valid));
  });

  const bool gx_need = x.requires_grad(), gg_need = grid.requires_grad();
  record_op(res.output, {x, grid}, [x = x.detach(), grid = grid.detach(), gx_need, gg_need](
                                       const Tensor& g) {
    return dispatch(g.precision(), [&]<class T>() {
      const auto B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const auto P = grid.dim(1) * grid.dim(2);
      auto X = x.data<T>();
      auto Gd = grid.data<T>();
      auto G = g.data<T>();
      std::vector<T> dx(gx_need ? X.size() : 0, T(0));
      std::vector<T> dgrid(gg_need ? Gd.size() : 0, T(0));
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t p = 0; p < P; ++p) {
          const T gx = Gd[static_cast<std::size_t>((b * P + p) * 2)];
          const T gy = Gd[static_cast<std::size_t>((b * P + p) * 2 + 1)];
          if (!std::isfinite(gx) || !std::isfinite(gy)) continue;
          const T fx = std::floor(gx), fy = std::floor(gy);
          if (fx < -1 || fy < -1 || fx > W - 1 || fy > H - 1) continue;
          const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
          const T ax = gx - fx, ay = gy - fy;
          const std::int64_t xs[2] = {x0, x0 + 1}, ys[2] = {y0, y0 + 1};
          const T wx[2] = {1 - ax, ax}, wy[2] = {1 - ay, ay};
          const T dwx[2] = {-1, 1}, dwy[2] = {-1, 1};
          T dgx = 0, dgy = 0;
          for (int j = 0; j < 2; ++j) {
            if (ys[j] < 0 || ys[j] >= H) continue;
            for (int i = 0; i < 2; ++i) {
              if (xs[i] < 0 || xs[i] >= W) continue;
              const std::int64_t off = b * C * H * W + ys[j] * W + xs[i];
              const T* gp = G.data() + b * C * P + p;
              if (gx_need) {
                const T wgt = wx[i] * wy[j];
                for (std::int64_t c = 0; c < C; ++c) dx[static_cast<std::size_t>(off + c * H * W)] += wgt * gp[c * P];
              }
              if (gg_need) {
                T dot = 0;
                for (std::int64_t c = 0; c < C; ++c) dot += gp[c * P] * X[static_cast<std::size_t>(off + c * H * W)];
                dgx += dot * dwx[i] * wy[j];
                dgy += dot * wx[i] * dwy[j];
              }
            }
          }
          if (gg_need) {
            dgrid[static_cast<std::size_t>((b * P + p) * 2)] = dgx;
            dgrid[static_cast<std::size_t>((b * P + p) * 2 + 1)] = dgy;
          }
        }
      }
      std::vector<Tensor> grads(2);
      if (gx_need) grads[0] = Tensor::from_buffer<T>(x.shape(), std::move(dx));
      if (gg_need) grads[1] = Tensor::from_buffer<T>(grid.shape(), std::move(dgrid));
      return grads;
    });
  });
  return res;
}

namespace {

struct Taps1d {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w1;
};

Taps1d upsample_taps(std::int64_t n, int factor) {
  Taps1d t;
  for (std::int64_t u = 0; u < n * factor; ++u) {
    double s = static_cast<double>(u) / factor;
    s = std::min(s, static_cast<double>(n - 1));
    const auto a = static_cast<std::int64_t>(std::floor(s));
    t.i0.push_back(a);
    t.i1.push_back(std::min(a + 1, n - 1));
    t.w1.push_back(s - static_cast<double>(a));
  }
  return t;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int factor) {
  if (x.rank() < 2 || factor < 1) throw DimensionError("upsample_bilinear: need rank >= 2 and factor >= 1");
  const auto h = x.dim(-2), w = x.dim(-1);
  const auto planes = x.numel() / (h * w);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = h * factor;
  out_shape[out_shape.size() - 1] = w * factor;
  const auto ty = upsample_taps(h, factor), tx = upsample_taps(w, factor);
  const auto Ho = h * factor, Wo = w * factor;
  Tensor out = dispatch(x.precision(), [&]<class T>() {
    auto X = x.data<T>();
    std::vector<T> y(static_cast<std::size_t>(planes * Ho * Wo));
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = X.data() + p * h * w;
      T* dst = y.data() + p * Ho * Wo;
      for (std::int64_t v = 0; v < Ho; ++v) {
        const auto vu = static_cast<std::size_t>(v);
        const T wy = static_cast<T>(ty.w1[vu]);
        const T* r0 = src + ty.i0[vu] * w;
        const T* r1 = src + ty.i1[vu] * w;
        for (std::int64_t u = 0; u < Wo; ++u) {
          const auto uu = static_cast<std::size_t>(u);
          const T wx = static_cast<T>(tx.w1[uu]);
          const T top = (1 - wx) * r0[tx.i0[uu]] + wx * r0[tx.i1[uu]];
          const T bot = (1 - wx) * r1[tx.i0[uu]] + wx * r1[tx.i1[uu]];
          dst[v * Wo + u] = (1 - wy) * top + wy * bot;
        }
      }
    }
    return Tensor::from_buffer<T>(out_shape, std::move(y));
  });
  return record_op(out, {x}, [in_shape = x.shape(), ty, tx, h, w, Ho, Wo, planes](const Tensor& g) {
    return std::vector<Tensor>{dispatch(g.precision(), [&]<class T>() {
      auto G = g.data<T>();
      std::vector<T> dx(static_cast<std::size_t>(planes * h * w), T(0));
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* gs = G.data() + p * Ho * Wo;
        T* d = dx.data() + p * h * w;
        for (std::int64_t v = 0; v < Ho; ++v) {
          const auto vu = static_cast<std::size_t>(v);
          const T wy = static_cast<T>(ty.w1[vu]);
          T* r0 = d + ty.i0[vu] * w;
          T* r1 = d + ty.i1[vu] * w;
          for (std::int64_t u = 0; u < Wo; ++u) {
            const auto uu = static_cast<std::size_t>(u);
            const T wx = static_cast<T>(tx.w1[uu]);
            const T gv = gs[v * Wo + u];
            r0[tx.i0[uu]] += (1 - wy) * (1 - wx) * gv;
            r0[tx.i1[uu]] += (1 - wy) * wx * gv;
            r1[tx.i0[uu]] += wy * (1 - wx) * gv;
            r1[tx.i1[uu]] += wy * wx * gv;
          }
        }
      }
      return Tensor::from_buffer<T>(in_shape, std::move(dx));
    })};
  });
}

Tensor upsample_nearest(const Tensor& x, int factor, int spatial_dims) {
  if (spatial_dims < 1 || spatial_dims > x.rank() || factor < 1) {
    throw DimensionError("upsample_nearest: invalid spatial_dims or factor for " + shape_str(x.shape()));
  }
  const Shape& in = x.shape();
  Shape out = in;
  const std::size_t first = in.size() - static_cast<std::size_t>(spatial_dims);
  for (std::size_t i = first; i < in.size(); ++i) out[i] *= factor;
  // Flat source index for every output element.
  const auto n = shape_numel(out);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  {
    const auto in_strides = contiguous_strides(in);
    std::vector<std::int64_t> idx(out.size(), 0);
    for (std::int64_t f = 0; f < n; ++f) {
      std::int64_t s = 0;
      for (std::size_t k = 0; k < out.size(); ++k) {
        const auto ik = k >= first ? idx[k] / factor : idx[k];
        s += ik * in_strides[k];
      }
      map[static_cast<std::size_t>(f)] = s;
      for (int k = static_cast<int>(out.size()) - 1; k >= 0; --k) {
        auto ku = static_cast<std::size_t>(k);
        if (++idx[ku] < out[ku]) break;
        idx[ku] = 0;
      }
    }
  }
  Tensor y = dispatch(x.precision(), [&]<class T>() {
    auto X = x.data<T>();
    std::vector<T> buf(static_cast<std::size_t>(n));
    for (std::size_t f = 0; f < buf.size(); ++f) buf[f] = X[static_cast<std::size_t>(map[f])];
    return Tensor::from_buffer<T>(out, std::move(buf));
  });
  return record_op(y, {x}, [in, map](const Tensor& g) {
    return std::vector<Tensor>{dispatch(g.precision(), [&]<class T>() {
      auto G = g.data<T>();
      std::vector<T> dx(static_cast<std::size_t>(shape_numel(in)), T(0));
      for (std::size_t f = 0; f < map.size(); ++f) dx[static_cast<std::size_t>(map[f])] += G[f];
      return Tensor::from_buffer<T>(in, std::move(dx));
    })};
  });
}

}  // namespace mvstr::ops
