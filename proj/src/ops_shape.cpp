#include <algorithm>
#include <numeric>

#include "ops_internal.hpp"

namespace mvstr::ops {

namespace detail {

Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(what) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcast-compatible");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
  const auto cs = contiguous_strides(shape);
  std::vector<std::int64_t> s(out.size(), 0);
  const std::size_t off = out.size() - shape.size();
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s[i + off] = shape[i] == 1 ? 0 : cs[i];
  }
  return s;
}

}  // namespace detail

using namespace detail;

namespace {

// Gathers src into a fresh row-major buffer of `out_shape`, reading src at
// sum(index[i] * src_strides[i]).
template <class T>
std::vector<T> strided_gather(const Shape& out_shape, const std::vector<std::int64_t>& src_strides,
                              const T* src) {
  const auto n = shape_numel(out_shape);
  std::vector<T> out(static_cast<std::size_t>(n));
  if (n == 0) return out;
  const int r = static_cast<int>(out_shape.size());
  if (r == 0) {
    out[0] = src[0];
    return out;
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  const auto inner = out_shape.back();
  const auto inner_stride = src_strides.back();
  std::int64_t base = 0;
  for (std::int64_t o = 0; o < n; o += inner) {
    const T* s = src + base;
    T* d = out.data() + o;
    for (std::int64_t i = 0; i < inner; ++i) d[i] = s[i * inner_stride];
    for (int k = r - 2; k >= 0; --k) {
      auto ku = static_cast<std::size_t>(k);
      ++idx[ku];
      base += src_strides[ku];
      if (idx[ku] < out_shape[ku]) break;
      base -= idx[ku] * src_strides[ku];
      idx[ku] = 0;
    }
  }
  return out;
}

Tensor permute_raw(const Tensor& x, const std::vector<int>& dims) {
  const auto& in = x.shape();
  const auto cs = contiguous_strides(in);
  Shape out(dims.size());
  std::vector<std::int64_t> strides(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    out[i] = in[static_cast<std::size_t>(dims[i])];
    strides[i] = cs[static_cast<std::size_t>(dims[i])];
  }
  return dispatch(x.precision(), [&]<class T>() {
    return Tensor::from_buffer<T>(out, strided_gather<T>(out, strides, x.data<T>().data()));
  });
}

// Copies the box of `src` starting at `src_start` with extent `box` into
// `dst` at `dst_start`.
template <class T>
void copy_box(const Shape& src_shape, const T* src, const std::vector<std::int64_t>& src_start,
              const Shape& dst_shape, T* dst, const std::vector<std::int64_t>& dst_start,
              const Shape& box) {
  const auto n = shape_numel(box);
  if (n == 0) return;
  const int r = static_cast<int>(box.size());
  const auto ss = contiguous_strides(src_shape);
  const auto ds = contiguous_strides(dst_shape);
  std::int64_t so = 0, dof = 0;
  for (int i = 0; i < r; ++i) {
    so += src_start[static_cast<std::size_t>(i)] * ss[static_cast<std::size_t>(i)];
    dof += dst_start[static_cast<std::size_t>(i)] * ds[static_cast<std::size_t>(i)];
  }
  if (r == 0) {
    dst[dof] = src[so];
    return;
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  const auto inner = box.back();
  for (std::int64_t done = 0; done < n; done += inner) {
    std::copy_n(src + so, inner, dst + dof);
    for (int k = r - 2; k >= 0; --k) {
      auto ku = static_cast<std::size_t>(k);
      ++idx[ku];
      so += ss[ku];
      dof += ds[ku];
      if (idx[ku] < box[ku]) break;
      so -= idx[ku] * ss[ku];
      dof -= idx[ku] * ds[ku];
      idx[ku] = 0;
    }
  }
}

Tensor pad_raw(const Tensor& x, const std::vector<std::pair<std::int64_t, std::int64_t>>& full) {
  Shape out = x.shape();
  std::vector<std::int64_t> start(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += full[i].first + full[i].second;
    start[i] = full[i].first;
  }
  return dispatch(x.precision(), [&]<class T>() {
    std::vector<T> buf(static_cast<std::size_t>(shape_numel(out)), T(0));
    copy_box<T>(x.shape(), x.data<T>().data(), std::vector<std::int64_t>(out.size(), 0), out,
                buf.data(), start, x.shape());
    return Tensor::from_buffer<T>(out, std::move(buf));
  });
}

Tensor crop_raw(const Tensor& x, const std::vector<std::int64_t>& start, const Shape& box) {
  return dispatch(x.precision(), [&]<class T>() {
    std::vector<T> buf(static_cast<std::size_t>(shape_numel(box)));
    copy_box<T>(x.shape(), x.data<T>().data(), start, box, buf.data(),
                std::vector<std::int64_t>(box.size(), 0), box);
    return Tensor::from_buffer<T>(box, std::move(buf));
  });
}

}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred dimension");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw DimensionError("reshape: cannot infer dimension for " + shape_str(x.shape()) +
                           " -> " + shape_str(shape));
    }
    shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  }
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
  }
  Tensor out = x.view_as(shape);
  const Shape in_shape = x.shape();
  return record_op(out, {x}, [in_shape](const Tensor& g) {
    return std::vector<Tensor>{g.view_as(in_shape)};
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  const int r = x.rank();
  if (static_cast<int>(dims.size()) != r) {
    throw DimensionError("permute: expected " + std::to_string(r) + " dims for shape " +
                         shape_str(x.shape()));
  }
  std::vector<int> d(dims.size());
  std::vector<bool> seen(dims.size(), false);
  for (std::size_t i = 0; i < dims.size(); ++i) {
    d[i] = norm_dim(dims[i], r, "permute");
    if (seen[static_cast<std::size_t>(d[i])]) throw DimensionError("permute: repeated dimension");
    seen[static_cast<std::size_t>(d[i])] = true;
  }
  Tensor out = permute_raw(x, d);
  std::vector<int> inv(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) inv[static_cast<std::size_t>(d[i])] = static_cast<int>(i);
  return record_op(out, {x}, [inv](const Tensor& g) {
    return std::vector<Tensor>{permute_raw(g, inv)};
  });
}

Tensor transpose(const Tensor& x, int a, int b) {
  const int r = x.rank();
  std::vector<int> dims(static_cast<std::size_t>(r));
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[static_cast<std::size_t>(norm_dim(a, r, "transpose"))],
            dims[static_cast<std::size_t>(norm_dim(b, r, "transpose"))]);
  return permute(x, dims);
}

Tensor slice(const Tensor& x, int dim, std::int64_t start, std::int64_t length) {
  const int d = norm_dim(dim, x.rank(), "slice");
  const auto extent = x.shape()[static_cast<std::size_t>(d)];
  if (start < 0 || length < 0 || start + length > extent) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside dimension of size " +
                         std::to_string(extent));
  }
  std::vector<std::int64_t> origin(x.shape().size(), 0);
  origin[static_cast<std::size_t>(d)] = start;
  Shape box = x.shape();
  box[static_cast<std::size_t>(d)] = length;
  Tensor out = crop_raw(x, origin, box);
  const Shape in_shape = x.shape();
  return record_op(out, {x}, [in_shape, d, start, length](const Tensor& g) {
    std::vector<std::pair<std::int64_t, std::int64_t>> p(in_shape.size(), {0, 0});
    p[static_cast<std::size_t>(d)] = {start, in_shape[static_cast<std::size_t>(d)] - start - length};
    return std::vector<Tensor>{pad_raw(g, p)};
  });
}

Tensor pad(const Tensor& x, const std::vector<std::pair<std::int64_t, std::int64_t>>& pads) {
  const std::size_t r = x.shape().size();
  if (pads.size() > r) throw DimensionError("pad: more pad entries than dimensions");
  std::vector<std::pair<std::int64_t, std::int64_t>> full(r, {0, 0});
  for (std::size_t i = 0; i < pads.size(); ++i) {
    if (pads[i].first < 0 || pads[i].second < 0) throw DimensionError("pad: negative padding");
    full[r - pads.size() + i] = pads[i];
  }
  Tensor out = pad_raw(x, full);
  const Shape in_shape = x.shape();
  return record_op(out, {x}, [in_shape, full](const Tensor& g) {
    std::vector<std::int64_t> origin(full.size());
    for (std::size_t i = 0; i < full.size(); ++i) origin[i] = full[i].first;
    return std::vector<Tensor>{crop_raw(g, origin, in_shape)};
  });
}

Tensor concat(const std::vector<Tensor>& xs, int dim) {
  if (xs.empty()) throw UsageError("concat: no inputs");
  const int r = xs[0].rank();
  const int d = norm_dim(dim, r, "concat");
  Shape out = xs[0].shape();
  out[static_cast<std::size_t>(d)] = 0;
  for (const auto& t : xs) {
    check_same_precision(xs[0], t, "concat");
    if (t.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != d && t.shape()[static_cast<std::size_t>(i)] != xs[0].shape()[static_cast<std::size_t>(i)]) {
        throw DimensionError("concat: shapes " + shape_str(xs[0].shape()) + " and " +
                             shape_str(t.shape()) + " differ outside dim " + std::to_string(d));
      }
    }
    out[static_cast<std::size_t>(d)] += t.shape()[static_cast<std::size_t>(d)];
  }
  Tensor result = dispatch(xs[0].precision(), [&]<class T>() {
    std::vector<T> buf(static_cast<std::size_t>(shape_numel(out)));
    std::vector<std::int64_t> origin(out.size(), 0);
    const std::vector<std::int64_t> zero(out.size(), 0);
    for (const auto& t : xs) {
      copy_box<T>(t.shape(), t.data<T>().data(), zero, out, buf.data(), origin, t.shape());
      origin[static_cast<std::size_t>(d)] += t.shape()[static_cast<std::size_t>(d)];
    }
    return Tensor::from_buffer<T>(out, std::move(buf));
  });
  std::vector<std::int64_t> sizes;
  for (const auto& t : xs) sizes.push_back(t.shape()[static_cast<std::size_t>(d)]);
  return record_op(result, xs, [sizes, d](const Tensor& g) {
    std::vector<Tensor> grads;
    std::vector<std::int64_t> origin(g.shape().size(), 0);
    for (auto s : sizes) {
      Shape box = g.shape();
      box[static_cast<std::size_t>(d)] = s;
      grads.push_back(crop_raw(g, origin, box));
      origin[static_cast<std::size_t>(d)] += s;
    }
    return grads;
  });
}

Tensor squeeze(const Tensor& x, int dim) {
  const int d = norm_dim(dim, x.rank(), "squeeze");
  if (x.shape()[static_cast<std::size_t>(d)] != 1) {
    throw DimensionError("squeeze: dimension " + std::to_string(dim) + " of " +
                         shape_str(x.shape()) + " is not 1");
  }
  Shape s = x.shape();
  s.erase(s.begin() + d);
  return reshape(x, s);
}

Tensor unsqueeze(const Tensor& x, int dim) {
  const int d = norm_dim(dim, x.rank() + 1, "unsqueeze");
  Shape s = x.shape();
  s.insert(s.begin() + d, 1);
  return reshape(x, s);
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape& in = x.shape();
  if (shape.size() > in.size()) throw DimensionError("sum_to: target has higher rank");
  const auto strides = broadcast_strides(shape, in);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const auto ti = shape[i];
    const auto xi = in[i + in.size() - shape.size()];
    if (ti != 1 && ti != xi) {
      throw DimensionError("sum_to: cannot reduce " + shape_str(in) + " to " + shape_str(shape));
    }
  }
  Tensor out = dispatch(x.precision(), [&]<class T>() {
    std::vector<T> buf(static_cast<std::size_t>(shape_numel(shape)), T(0));
    auto src = x.data<T>();
    const int r = static_cast<int>(in.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t off = 0;
    for (std::size_t f = 0; f < src.size(); ++f) {
      buf[static_cast<std::size_t>(off)] += src[f];
      for (int k = r - 1; k >= 0; --k) {
        auto ku = static_cast<std::size_t>(k);
        ++idx[ku];
        off += strides[ku];
        if (idx[ku] < in[ku]) break;
        off -= idx[ku] * strides[ku];
        idx[ku] = 0;
      }
    }
    return Tensor::from_buffer<T>(shape, std::move(buf));
  });
  const Shape in_shape = in;
  return record_op(out, {x}, [in_shape, shape](const Tensor& g) {
    const auto st = broadcast_strides(shape, in_shape);
    return std::vector<Tensor>{dispatch(g.precision(), [&]<class T>() {
      return Tensor::from_buffer<T>(in_shape, strided_gather<T>(in_shape, st, g.data<T>().data()));
    })};
  });
}

// Shared with ops_elementwise.cpp.
namespace detail {
Tensor expand_raw(const Tensor& x, const Shape& out) {
  if (x.shape() == out) return x.detach();
  const auto st = broadcast_strides(x.shape(), out);
  return dispatch(x.precision(), [&]<class T>() {
    return Tensor::from_buffer<T>(out, strided_gather<T>(out, st, x.data<T>().data()));
  });
}
}  // namespace detail

}  // namespace mvstr::ops
