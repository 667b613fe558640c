#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "mvstr/errors.hpp"

namespace mvstr {

using Shape = std::vector<std::int64_t>;

// 32-bit for training and inference; 64-bit when checking gradients
// against finite differences.
enum class Precision { standard, verification };

const char* to_string(Precision p);
Precision precision_from_string(const std::string& s);

// Precision used by factory functions that do not name one explicitly.
Precision default_precision();

class PrecisionGuard {
 public:
  explicit PrecisionGuard(Precision p);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision prev_;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

using Storage = std::variant<std::vector<float>, std::vector<double>>;

struct TapeRef {
  std::uint64_t tape_serial = 0;
  std::int64_t node = -1;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Storage> storage;
  bool requires_grad = false;
  TapeRef tape_ref;
};

// Dense row-major n-d array. Values are immutable once built; the only
// in-place writers are optimizers and loaders via mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, Precision p = default_precision());
  static Tensor ones(const Shape& shape, Precision p = default_precision());
  static Tensor full(const Shape& shape, double value,
                     Precision p = default_precision());
  static Tensor scalar(double value, Precision p = default_precision());
  static Tensor from_vector(const Shape& shape, std::span<const double> values,
                            Precision p = default_precision());
  static Tensor from_vector(const Shape& shape, std::span<const float> values,
                            Precision p = default_precision());
  static Tensor from_vector(const Shape& shape,
                            std::initializer_list<double> values,
                            Precision p = default_precision());
  // Takes ownership of a typed buffer; precision follows T.
  template <class T>
  static Tensor from_buffer(const Shape& shape, std::vector<T> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative indices count from the back.
  std::int64_t dim(int i) const;
  std::int64_t numel() const;
  Precision precision() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  template <class T>
  std::span<const T> data() const;
  template <class T>
  std::span<T> mutable_data();

  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  Tensor to(Precision p) const;
  // Same values, cut from any tape.
  Tensor detach() const;
  // Deep copy with its own storage.
  Tensor clone() const;
  // Same storage, different shape; not recorded.
  Tensor view_as(const Shape& shape) const;

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

template <class T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::standard : Precision::verification;
}

// Invokes f.template operator()<T>() with T matching the precision.
template <class F>
decltype(auto) dispatch(Precision p, F&& f) {
  if (p == Precision::standard) return f.template operator()<float>();
  return f.template operator()<double>();
}

template <class T>
Tensor Tensor::from_buffer(const Shape& shape, std::vector<T> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("buffer of " + std::to_string(values.size()) +
                         " values does not fit shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->storage = std::make_shared<Storage>(std::move(values));
  return Tensor(std::move(impl));
}

template <class T>
std::span<const T> Tensor::data() const {
  if (!impl_) throw UsageError("data() on undefined tensor");
  auto* v = std::get_if<std::vector<T>>(impl_->storage.get());
  if (!v) throw UsageError("tensor precision does not match requested scalar type");
  return {v->data(), v->size()};
}

template <class T>
std::span<T> Tensor::mutable_data() {
  if (!impl_) throw UsageError("mutable_data() on undefined tensor");
  auto* v = std::get_if<std::vector<T>>(impl_->storage.get());
  if (!v) throw UsageError("tensor precision does not match requested scalar type");
  return {v->data(), v->size()};
}

}  // namespace mvstr
