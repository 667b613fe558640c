#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvstr/ops.hpp"

namespace mvstr::ops::detail {

inline int norm_dim(int dim, int rank, const char* what) {
  const int d = dim < 0 ? dim + rank : dim;
  if (d < 0 || d >= rank) {
    throw DimensionError(std::string(what) + ": dimension " + std::to_string(dim) +
                         " out of range for rank " + std::to_string(rank));
  }
  return d;
}

inline void check_same_precision(const Tensor& a, const Tensor& b, const char* what) {
  if (a.precision() != b.precision()) {
    throw UsageError(std::string(what) + ": operands have different precisions");
  }
}

inline std::vector<std::int64_t> contiguous_strides(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  }
  return s;
}

// outer x n x inner decomposition around one axis.
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
    const auto d = shape[static_cast<std::size_t>(i)];
    if (i < axis) s.outer *= d;
    else if (i == axis) s.n = d;
    else s.inner *= d;
  }
  return s;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* what);

// Strides of `shape` viewed under broadcasting to `out` (0 on broadcast dims).
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out);

// Materializes x broadcast to `out` (no tape).
Tensor expand_raw(const Tensor& x, const Shape& out);

// Row-major GEMM: C[m,n] (+)= op(A) op(B); op = transpose when flag set.
template <class T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const T* a, const T* b, T* c, bool accumulate);

}  // namespace mvstr::ops::detail
